#include "qnet/artifact.hpp"

#include <fstream>

#include "json.hpp"
#include "qnet/error.hpp"

namespace qnet {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path sidecar_path(const fs::path& file) { return fs::path(file.string() + ".meta.json"); }

void write_text_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  out << text;
  if (!out) throw FormatError("write failed for " + file.string());
}

void write_meta_sidecar(const fs::path& file, const ArtifactMeta& meta) {
  const json j{{"artifact", file.filename().string()},
               {"config_hash", meta.config_hash},
               {"kind", meta.kind},
               {"seed", meta.seed}};
  write_text_file(sidecar_path(file), j.dump(2) + "\n");
}

ArtifactMeta read_meta_sidecar(const fs::path& file) {
  const auto path = sidecar_path(file);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    const auto j = json::parse(in);
    return {j.at("config_hash").get<std::string>(), j.at("seed").get<std::uint64_t>(), j.at("kind").get<std::string>()};
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace qnet
