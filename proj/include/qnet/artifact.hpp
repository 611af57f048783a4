#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace qnet {

/// Provenance attached to every written artifact.
struct ArtifactMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string kind;  // e.g. "scores", "cam", "roc"
};

/// Writes <file>.meta.json next to the artifact.
void write_meta_sidecar(const std::filesystem::path& file, const ArtifactMeta& meta);
ArtifactMeta read_meta_sidecar(const std::filesystem::path& file);
std::filesystem::path sidecar_path(const std::filesystem::path& file);

/// Writes text to a file, creating parent directories; FormatError on failure.
void write_text_file(const std::filesystem::path& file, const std::string& text);

}  // namespace qnet
