#include "qnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

namespace qnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& file) {
  json header;
  header["stage"] = ck.stage;
  header["config_hash"] = ck.config_hash;
  header["seed"] = ck.seed;
  header["config"] = ck.config_json;
  header["tensors"] = json::array();
  for (const auto& t : ck.tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  const std::string text = header.dump();

  std::string bytes = "QNCK";
  put_u32(bytes, Checkpoint::kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  for (const auto& t : ck.tensors)
    for (float v : t.value.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));

  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + file.string());
}

Checkpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string where = file.string();
  if (bytes.size() < 12 || bytes.compare(0, 4, "QNCK") != 0) throw FormatError(where + ": not a checkpoint");
  const auto version = get_u32(bytes, 4);
  if (version != Checkpoint::kVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  const std::size_t hlen = get_u32(bytes, 8);
  if (bytes.size() < 12 + hlen) throw FormatError(where + ": truncated header");

  json header;
  try {
    header = json::parse(bytes.substr(12, hlen));
  } catch (const json::parse_error& e) {
    throw FormatError(where + ": " + e.what());
  }
  Checkpoint ck;
  try {
    ck.stage = header.at("stage").get<std::string>();
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.config_json = header.at("config").get<std::string>();
    std::size_t pos = 12 + hlen;
    for (const auto& t : header.at("tensors")) {
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t n = shape_size(shape);
      if (bytes.size() < pos + 4 * n) throw FormatError(where + ": truncated tensor data");
      Tensor<float> value(shape);
      for (std::size_t i = 0; i < n; ++i) value[i] = std::bit_cast<float>(get_u32(bytes, pos + 4 * i));
      pos += 4 * n;
      ck.tensors.push_back({t.at("name").get<std::string>(), std::move(value)});
    }
    if (pos != bytes.size()) throw FormatError(where + ": trailing bytes after tensor data");
  } catch (const json::exception& e) {
    throw FormatError(where + ": bad header: " + e.what());
  }
  return ck;
}

void capture_tensors(Checkpoint& ck, const ParamRefs<float>& params, const BufferRefs<float>& buffers) {
  std::set<std::string> names;
  for (const auto& t : ck.tensors) names.insert(t.name);
  auto add = [&](const std::string& name, const Tensor<float>& v) {
    if (!names.insert(name).second) throw ValidationError("checkpoint: duplicate tensor name " + name);
    ck.tensors.push_back({name, v});
  };
  for (const auto* p : params) add(p->name, p->value);
  for (const auto& b : buffers) add(b.name, *b.tensor);
}

void restore_tensors(const Checkpoint& ck, const ParamRefs<float>& params, const BufferRefs<float>& buffers) {
  auto copy = [&](const std::string& name, Tensor<float>& dst) {
    const auto* t = ck.find(name);
    if (!t) throw FormatError("checkpoint (" + ck.stage + "): missing tensor " + name);
    if (t->value.shape() != dst.shape())
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_string(t->value.shape()) +
                           ", model expects " + shape_string(dst.shape()));
    dst = t->value;
  };
  for (auto* p : params) copy(p->name, p->value);
  for (const auto& b : buffers) copy(b.name, *b.tensor);
}

}  // namespace qnet
