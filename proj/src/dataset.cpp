#include "qnet/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>

#include "json.hpp"

namespace qnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kSliceMagic[4] = {'Q', 'N', 'S', '1'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<unsigned char> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

void write_slice_file(const Slice& s, const fs::path& file) {
  if (s.rank() != 3) throw DimensionError("slice must be C x H x W");
  std::vector<unsigned char> bytes(kSliceMagic, kSliceMagic + 4);
  bytes.reserve(16 + 4 * s.size());
  put_u32(bytes, static_cast<std::uint32_t>(s.dim(1)));
  put_u32(bytes, static_cast<std::uint32_t>(s.dim(2)));
  put_u32(bytes, static_cast<std::uint32_t>(s.dim(0)));
  for (float v : s.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + file.string());
}

Slice read_slice_file(const fs::path& file) {
  const auto bytes = read_bytes(file);
  if (bytes.size() < 16) throw FormatError(file.string() + ": truncated header");
  if (std::memcmp(bytes.data(), kSliceMagic, 4) != 0) throw FormatError(file.string() + ": bad magic");
  const std::size_t h = get_u32(&bytes[4]), w = get_u32(&bytes[8]), c = get_u32(&bytes[12]);
  if (h == 0 || w == 0 || c == 0) throw FormatError(file.string() + ": zero dimension in header");
  const std::size_t n = h * w * c;
  if (bytes.size() != 16 + 4 * n)
    throw FormatError(file.string() + ": expected " + std::to_string(16 + 4 * n) + " bytes, found " +
                      std::to_string(bytes.size()));
  Slice s({c, h, w});
  for (std::size_t i = 0; i < n; ++i) s[i] = std::bit_cast<float>(get_u32(&bytes[16 + 4 * i]));
  return s;
}

DatasetManifest write_dataset(const std::vector<Scan>& scans, const fs::path& dir, double amplitude,
                              std::uint64_t seed) {
  if (scans.empty()) throw ValidationError("cannot write an empty dataset");
  DatasetManifest m;
  m.height = scans[0].slices.at(0).dim(1);
  m.width = scans[0].slices.at(0).dim(2);
  m.amplitude = amplitude;
  m.seed = seed;
  fs::create_directories(dir);
  for (const auto& scan : scans) {
    SubjectRecord rec{scan.subject_id, scan.label, scan.bbox, {}};
    m.seq_len = std::max(m.seq_len, scan.slices.size());
    fs::create_directories(dir / scan.subject_id);
    for (std::size_t t = 0; t < scan.slices.size(); ++t) {
      const auto& s = scan.slices[t];
      if (s.dim(0) != m.channels.size() || s.dim(1) != m.height || s.dim(2) != m.width)
        throw DimensionError("subject " + scan.subject_id + " slice shape " + shape_string(s.shape()) +
                             " differs from the dataset shape");
      char name[32];
      std::snprintf(name, sizeof name, "slice_%02zu.qns", t);
      const std::string rel = scan.subject_id + "/" + name;
      write_slice_file(s, dir / rel);
      rec.slices.push_back(rel);
    }
    m.subjects.push_back(std::move(rec));
  }

  json j;
  j["version"] = m.version;
  j["height"] = m.height;
  j["width"] = m.width;
  j["channels"] = m.channels;
  j["seq_len"] = m.seq_len;
  j["subjects"] = json::array();
  for (const auto& r : m.subjects)
    j["subjects"].push_back({{"id", r.id},
                             {"label", to_string(r.label)},
                             {"bbox", {r.bbox.row0, r.bbox.col0, r.bbox.rows, r.bbox.cols}},
                             {"slices", r.slices}});
  j["generator"] = {{"amplitude", m.amplitude}, {"seed", m.seed}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
  return m;
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  const std::string where = file.string();
  DatasetManifest m;
  m.version = field<int>(j, "version", where);
  if (m.version != 1) throw FormatError(where + ": unsupported version " + std::to_string(m.version));
  m.height = field<std::size_t>(j, "height", where);
  m.width = field<std::size_t>(j, "width", where);
  m.channels = field<std::vector<std::string>>(j, "channels", where);
  m.seq_len = field<std::size_t>(j, "seq_len", where);
  if (m.height == 0 || m.width == 0 || m.channels.empty() || m.seq_len == 0)
    throw ValidationError(where + ": dimensions must be positive");
  const json gen = field<json>(j, "generator", where);
  m.amplitude = field<double>(gen, "amplitude", where);
  m.seed = field<std::uint64_t>(gen, "seed", where);
  for (const auto& s : field<json>(j, "subjects", where)) {
    SubjectRecord r;
    r.id = field<std::string>(s, "id", where);
    r.label = label_from_string(field<std::string>(s, "label", where + " subject " + r.id));
    const auto b = field<std::vector<std::size_t>>(s, "bbox", where);
    if (b.size() != 4) throw FormatError(where + ": subject " + r.id + " bbox needs 4 entries");
    r.bbox = BBox{b[0], b[1], b[2], b[3]};
    if (r.bbox.rows == 0 || r.bbox.cols == 0 || r.bbox.row0 + r.bbox.rows > m.height ||
        r.bbox.col0 + r.bbox.cols > m.width)
      throw ValidationError(where + ": subject " + r.id + " bbox outside image");
    r.slices = field<std::vector<std::string>>(s, "slices", where);
    if (r.slices.empty() || r.slices.size() > m.seq_len)
      throw ValidationError(where + ": subject " + r.id + " needs 1.." + std::to_string(m.seq_len) + " slices");
    m.subjects.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < m.subjects.size(); ++i)
    for (std::size_t k = i + 1; k < m.subjects.size(); ++k)
      if (m.subjects[i].id == m.subjects[k].id) throw ValidationError(where + ": duplicate subject " + m.subjects[i].id);
  return m;
}

Dataset read_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  for (const auto& r : d.manifest.subjects) {
    Scan s{r.id, r.label, {}, r.bbox};
    for (const auto& rel : r.slices) {
      auto img = read_slice_file(dir / rel);
      if (img.dim(0) != d.manifest.channels.size() || img.dim(1) != d.manifest.height ||
          img.dim(2) != d.manifest.width)
        throw FormatError((dir / rel).string() + ": shape " + shape_string(img.shape()) +
                          " does not match the manifest");
      s.slices.push_back(std::move(img));
    }
    d.scans.push_back(std::move(s));
  }
  return d;
}

std::vector<std::size_t> FoldSplit::test_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldSplit::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

FoldSplit make_folds(const std::vector<std::string>& ids, const std::vector<Label>& labels, std::size_t k,
                     std::uint64_t seed) {
  if (ids.size() != labels.size()) throw DimensionError("ids and labels differ in length");
  if (k < 2 || k > ids.size())
    throw ValidationError("fold count " + std::to_string(k) + " must be in [2, " + std::to_string(ids.size()) + "]");
  FoldSplit split;
  split.k = k;
  split.subject_ids = ids;
  split.fold_of.assign(ids.size(), 0);
  Rng rng(derive_seed(seed, {0x464F4C44}));

  std::vector<std::size_t> hc, hh;
  for (std::size_t i = 0; i < ids.size(); ++i) (labels[i] == Label::HH ? hh : hc).push_back(i);
  split.stratified = hc.size() >= k && hh.size() >= k;
  if (!split.stratified) {
    std::cerr << "warning: a class has fewer than " << k << " subjects; folds are not stratified\n";
    std::vector<std::size_t> all(ids.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) split.fold_of[all[i]] = i % k;
    return split;
  }
  // the second class continues where the first stopped, keeping total fold sizes within 1
  std::size_t next = 0;
  for (auto* cls : {&hc, &hh}) {
    rng.shuffle(cls->begin(), cls->end());
    for (std::size_t i : *cls) split.fold_of[i] = next++ % k;
  }
  return split;
}

FoldSplit make_folds(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<Label> labels;
  for (const auto& s : manifest.subjects) {
    ids.push_back(s.id);
    labels.push_back(s.label);
  }
  return make_folds(ids, labels, k, seed);
}

}  // namespace qnet
