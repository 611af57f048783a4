#include "qnet/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <variant>

#include "json.hpp"
#include "qnet/error.hpp"
#include "qnet/hash.hpp"

namespace qnet {

namespace {

using nlohmann::json;
using Widths = std::array<std::size_t, 4>;

struct ModeField {
  CropMode* mode;
};

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "counts and seeds share one field kind");
using FieldRef = std::variant<double*, std::uint64_t*, bool*, std::string*, Widths*, ModeField>;

struct Field {
  const char* key;
  FieldRef ref;
};

// The single list of config keys; JSON I/O, flags and hashing all walk it.
std::vector<Field> fields(ExperimentConfig& c) {
  auto& t = c.pipeline.train;
  auto& a = c.pipeline.augment;
  auto& b = c.pipeline.backbone;
  auto& q = c.pipeline.qnet;
  auto& p = c.data.phantom;
  return {
      {"data.subjects", &c.data.subjects},
      {"data.seed", &c.data.seed},
      {"data.amplitude", &p.amplitude},
      {"data.seq_len", &p.seq_len},
      {"data.size", &p.size},
      {"data.noise_sigma", &p.noise_sigma},
      {"data.blobs_per_scan", &p.blobs_per_scan},
      {"data.blob_peak", &p.blob_peak},
      {"train.seed", &t.seed},
      {"train.input_mode", ModeField{&t.input_mode}},
      {"train.lr_schedule", &t.lr_schedule},
      {"train.verbose", &t.verbose},
      {"train.stage1.epochs", &t.stage1.epochs},
      {"train.stage1.batch", &t.stage1.batch},
      {"train.stage1.lr_max", &t.stage1.lr_max},
      {"train.stage1.lr_min", &t.stage1.lr_min},
      {"train.stage1.swa", &t.stage1.swa},
      {"train.stage1.swa_start_fraction", &t.stage1.swa_start_fraction},
      {"train.stage2.epochs", &t.stage2.epochs},
      {"train.stage2.batch", &t.stage2.batch},
      {"train.stage2.lr", &t.stage2.lr},
      {"train.stage2.augment", &t.stage2.augment},
      {"augment.p_histogram_stretch", &a.p_histogram_stretch},
      {"augment.p_hflip", &a.p_hflip},
      {"augment.p_vflip", &a.p_vflip},
      {"augment.p_brightness_contrast", &a.p_brightness_contrast},
      {"augment.p_gamma", &a.p_gamma},
      {"augment.p_grid_distortion", &a.p_grid_distortion},
      {"augment.p_shift_scale_rotate", &a.p_shift_scale_rotate},
      {"augment.p_crop", &a.p_crop},
      {"augment.stretch_low_percentile", &a.stretch_low_percentile},
      {"augment.stretch_high_percentile", &a.stretch_high_percentile},
      {"augment.brightness_limit", &a.brightness_limit},
      {"augment.contrast_low", &a.contrast_low},
      {"augment.contrast_high", &a.contrast_high},
      {"augment.gamma_low", &a.gamma_low},
      {"augment.gamma_high", &a.gamma_high},
      {"augment.shift_limit", &a.shift_limit},
      {"augment.scale_low", &a.scale_low},
      {"augment.scale_high", &a.scale_high},
      {"augment.rotate_limit_deg", &a.rotate_limit_deg},
      {"augment.grid_cells", &a.grid_cells},
      {"augment.distort_limit", &a.distort_limit},
      {"augment.target_size", &a.target_size},
      {"augment.bbox_padding", &a.bbox_padding},
      {"augment.crop_jitter", &a.crop_jitter},
      {"backbone.input_channels", &b.input_channels},
      {"backbone.stem_width", &b.stem_width},
      {"backbone.width_schedule", &b.width_schedule},
      {"backbone.block_count", &b.block_count},
      {"backbone.stem_kernel", &b.stem_kernel},
      {"backbone.block_kernel", &b.block_kernel},
      {"qnet.embed_dim", &q.embed_dim},
      {"qnet.hidden", &q.hidden},
      {"qnet.seq_len", &q.seq_len},
      {"qnet.num_classes", &q.num_classes},
      {"cv.folds", &c.cv.folds},
      {"cv.fold_seed", &c.cv.fold_seed},
      {"cv.workers", &c.cv.workers},
      {"eval.bootstrap", &c.eval.bootstrap},
      {"eval.bootstrap_seed", &c.eval.bootstrap_seed},
      {"paths.data", &c.paths.data},
      {"paths.out", &c.paths.out},
  };
}

const std::set<std::string> kUnhashed = {"paths.data", "paths.out", "cv.workers", "train.verbose"};

json::json_pointer pointer_of(const std::string& key) {
  std::string p = "/" + key;
  for (auto& ch : p)
    if (ch == '.') ch = '/';
  return json::json_pointer(p);
}

std::string mode_text(CropMode m) { return m == CropMode::Full ? "full" : "cropped"; }

CropMode parse_mode(const std::string& s, const std::string& key) {
  if (s == "full") return CropMode::Full;
  if (s == "cropped") return CropMode::BBox;
  throw ValidationError(key + ": expected \"full\" or \"cropped\", got \"" + s + "\"");
}

json value_of(const FieldRef& ref) {
  return std::visit(
      [](auto&& r) -> json {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, ModeField>) return mode_text(*r.mode);
        else return *r;
      },
      ref);
}

void assign(const FieldRef& ref, const json& v, const std::string& key) {
  auto fail = [&](const char* want) { throw ValidationError(key + ": expected " + want + ", got " + v.dump()); };
  std::visit(
      [&](auto&& r) {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, double*>) {
          if (!v.is_number()) fail("a number");
          *r = v.get<double>();
        } else if constexpr (std::is_same_v<R, std::uint64_t*>) {
          if (!v.is_number_unsigned()) fail("a non-negative integer");
          *r = v.get<std::uint64_t>();
        } else if constexpr (std::is_same_v<R, bool*>) {
          if (!v.is_boolean()) fail("true or false");
          *r = v.get<bool>();
        } else if constexpr (std::is_same_v<R, std::string*>) {
          if (!v.is_string()) fail("a string");
          *r = v.get<std::string>();
        } else if constexpr (std::is_same_v<R, Widths*>) {
          if (!v.is_array() || v.size() != 4) fail("an array of 4 widths");
          for (std::size_t i = 0; i < 4; ++i) {
            if (!v[i].is_number_unsigned()) fail("an array of 4 widths");
            (*r)[i] = v[i].get<std::size_t>();
          }
        } else {
          if (!v.is_string()) fail("\"full\" or \"cropped\"");
          *r.mode = parse_mode(v.get<std::string>(), key);
        }
      },
      ref);
}

json to_json(const ExperimentConfig& cc, bool hashed_only) {
  auto c = cc;
  json j = json::object();
  for (const auto& f : fields(c)) {
    if (hashed_only && kUnhashed.count(f.key)) continue;
    j[pointer_of(f.key)] = value_of(f.ref);
  }
  return j;
}

void reject_unknown(const json& node, const std::string& prefix, const std::set<std::string>& leaves,
                    const std::set<std::string>& groups) {
  if (!node.is_object()) throw ValidationError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
  for (const auto& [k, v] : node.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (leaves.count(key)) continue;
    if (!groups.count(key)) throw ValidationError("unknown config key \"" + key + "\"");
    reject_unknown(v, key, leaves, groups);
  }
}

const Field& find_field(const std::vector<Field>& fs, const std::string& key) {
  for (const auto& f : fs)
    if (key == f.key) return f;
  throw ValidationError("unknown config key \"" + key + "\"");
}

}  // namespace

void ExperimentConfig::validate() const {
  pipeline.validate();
  data.phantom.validate();
  if (data.subjects < 2) throw ValidationError("data.subjects must be >= 2");
  if (data.phantom.seq_len > pipeline.qnet.seq_len)
    throw ValidationError("data.seq_len (" + std::to_string(data.phantom.seq_len) + ") exceeds qnet.seq_len (" +
                          std::to_string(pipeline.qnet.seq_len) + ")");
  if (cv.folds < 2) throw ValidationError("cv.folds must be >= 2");
  if (eval.bootstrap == 0) throw ValidationError("eval.bootstrap must be >= 1");
}

std::vector<std::string> config_keys() {
  ExperimentConfig c;
  std::vector<std::string> out;
  for (const auto& f : fields(c)) out.emplace_back(f.key);
  return out;
}

std::string config_to_json(const ExperimentConfig& c) { return to_json(c, false).dump(2) + "\n"; }

ExperimentConfig config_from_json(const std::string& text, const ExperimentConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = base;
  const auto fs = fields(c);
  std::set<std::string> leaves, groups;
  for (const auto& f : fs) {
    const std::string key = f.key;
    leaves.insert(key);
    for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.', dot + 1)) groups.insert(key.substr(0, dot));
  }
  reject_unknown(j, "", leaves, groups);
  for (const auto& f : fs) {
    const auto ptr = pointer_of(f.key);
    if (j.contains(ptr)) assign(f.ref, j.at(ptr), f.key);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file, const ExperimentConfig& base) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json(ss.str(), base);
  } catch (const FormatError& e) {
    throw FormatError(file.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto fs = fields(c);
  const auto& f = find_field(fs, key);
  json v;
  if (std::holds_alternative<std::string*>(f.ref) || std::holds_alternative<ModeField>(f.ref)) {
    v = value;
  } else {
    try {
      v = json::parse(value);
    } catch (const json::parse_error&) {
      throw ValidationError(key + ": cannot parse \"" + value + "\"");
    }
  }
  assign(f.ref, v, key);
}

std::string get_config_value(const ExperimentConfig& cc, const std::string& key) {
  auto c = cc;
  const auto fs = fields(c);
  const auto v = value_of(find_field(fs, key).ref);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

std::string config_hash(const ExperimentConfig& c) {
  Fnv1a h;
  h.update(to_json(c, true).dump());
  return hex64(h.digest());
}

std::size_t resolve_workers(const ExperimentConfig& c) { return c.cv.workers ? c.cv.workers : workers_from_env(); }

ExperimentConfig full_scale_config() {
  ExperimentConfig c;
  c.pipeline.train = TrainConfig::full_scale();
  c.pipeline.backbone = BackboneConfig::full_scale();
  c.pipeline.qnet.embed_dim = c.pipeline.backbone.feature_dim();
  return c;
}

}  // namespace qnet
