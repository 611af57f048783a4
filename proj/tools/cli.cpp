#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qnet/artifact.hpp"
#include "qnet/cam.hpp"
#include "qnet/checkpoint.hpp"
#include "qnet/config.hpp"
#include "qnet/dataset.hpp"
#include "qnet/error.hpp"
#include "qnet/hash.hpp"
#include "qnet/stats.hpp"
#include "qnet/train.hpp"

namespace qnet::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Raised while resolving flags and config files; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Config plumbing shared by the subcommands that take an experiment config.
struct ConfigFlags {
  std::string file;
  std::string preset = "desk";
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  /// aliases: config key -> extra flag names, e.g. {"paths.data", "--data"}.
  void attach(CLI::App* sub, const std::map<std::string, std::string>& aliases) {
    sub->add_option("--config", file, "experiment config JSON")->check(CLI::ExistingFile);
    sub->add_option("--preset", preset, "base settings before --config and flags")
        ->check(CLI::IsMember({"desk", "full"}));
    ExperimentConfig defaults;
    for (const auto& key : config_keys()) {
      std::string names = "--" + key;
      if (auto a = aliases.find(key); a != aliases.end()) names += "," + a->second;
      auto* opt = sub->add_option(names, values[key], "default " + get_config_value(defaults, key));
      opt->group("Config keys");
      options.emplace_back(key, opt);
    }
  }

  ExperimentConfig resolve(const ExperimentConfig* base = nullptr) const {
    try {
      ExperimentConfig c = base ? *base : (preset == "full" ? full_scale_config() : ExperimentConfig{});
      if (!file.empty()) c = load_config(file, c);
      for (const auto& [key, opt] : options)
        if (opt->count() > 0) set_config_value(c, key, values.at(key));
      c.validate();
      return c;
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    } catch (const FormatError& e) {
      throw UsageError(e.what());
    }
  }
};

void echo_config(const std::string& command, const ExperimentConfig& c, std::uint64_t seed) {
  std::cerr << "qnet " << command << ": config_hash " << config_hash(c) << " seed " << seed << "\n"
            << config_to_json(c);
}

ArtifactMeta meta_for(const ExperimentConfig& c, std::uint64_t seed, const std::string& kind) {
  return {config_hash(c), seed, kind};
}

void write_artifact(const fs::path& file, const std::string& text, const ArtifactMeta& meta) {
  write_text_file(file, text);
  write_meta_sidecar(file, meta);
}

fs::path require_path(const std::string& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("missing ") + what);
  return fs::path(p);
}

Dataset load_dataset_for(const ExperimentConfig& c) {
  auto data = read_dataset(require_path(c.paths.data, "--data"));
  if (data.manifest.seq_len > c.pipeline.qnet.seq_len)
    throw UsageError("dataset seq_len " + std::to_string(data.manifest.seq_len) + " exceeds qnet.seq_len " +
                     std::to_string(c.pipeline.qnet.seq_len));
  return data;
}

Checkpoint stage1_checkpoint(ImageModel<float>& model, const ExperimentConfig& c, std::uint64_t seed) {
  Checkpoint ck;
  ck.stage = "stage1";
  ck.config_hash = config_hash(c);
  ck.seed = seed;
  ck.config_json = config_to_json(c);
  capture_tensors(ck, model.parameters(), model.buffers());
  return ck;
}

Checkpoint stage2_checkpoint(Backbone<float>& backbone, QNet<float>& qnet, const ExperimentConfig& c,
                             std::uint64_t seed) {
  Checkpoint ck;
  ck.stage = "stage2";
  ck.config_hash = config_hash(c);
  ck.seed = seed;
  ck.config_json = config_to_json(c);
  auto params = backbone.parameters();
  for (auto* p : qnet.parameters()) params.push_back(p);
  capture_tensors(ck, params, backbone.buffers());
  return ck;
}

void save_fold_checkpoints(const fs::path& dir, Stage1Result& s1, Stage2Result& s2, const ExperimentConfig& c) {
  const auto seed = c.pipeline.train.seed;
  fs::create_directories(dir);
  const auto meta = [&](const char* kind) { return meta_for(c, seed, kind); };
  save_checkpoint(stage1_checkpoint(s1.swa, c, seed), dir / "stage1.qnck");
  write_meta_sidecar(dir / "stage1.qnck", meta("checkpoint"));
  save_checkpoint(stage1_checkpoint(s1.last, c, seed), dir / "stage1_last.qnck");
  write_meta_sidecar(dir / "stage1_last.qnck", meta("checkpoint"));
  save_checkpoint(stage2_checkpoint(s1.swa.backbone, s2.qnet, c, seed), dir / "stage2.qnck");
  write_meta_sidecar(dir / "stage2.qnck", meta("checkpoint"));
}

std::string fold_dir_name(std::size_t fold) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fold_%02zu", fold);
  return buf;
}

// ---- synth

int cmd_synth(const ConfigFlags& flags) {
  const auto c = flags.resolve();
  echo_config("synth", c, c.data.seed);
  const auto dir = require_path(c.paths.data, "--out");
  const auto scans = generate_cohort(c.data.subjects, c.data.seed, c.data.phantom);
  write_dataset(scans, dir, c.data.phantom.amplitude, c.data.seed);
  write_meta_sidecar(dir / "manifest.json", meta_for(c, c.data.seed, "dataset"));
  write_text_file(dir / "config.json", config_to_json(c));
  std::cout << "wrote " << scans.size() << " subjects to " << dir.string() << "\n";
  return kOk;
}

// ---- train (one fold)

int cmd_train(const ConfigFlags& flags, std::size_t fold) {
  const auto c = flags.resolve();
  echo_config("train", c, c.pipeline.train.seed);
  const auto out = require_path(c.paths.out, "--out");
  const auto data = load_dataset_for(c);
  const auto split = make_folds(data.manifest, c.cv.folds, c.cv.fold_seed);
  if (fold >= split.k) throw UsageError("--fold must be below cv.folds (" + std::to_string(split.k) + ")");
  const auto rows = run_fold(data, split, fold, c.pipeline,
                             [&](std::size_t, const std::vector<const Scan*>&, Stage1Result& s1, Stage2Result& s2) {
                               save_fold_checkpoints(out, s1, s2, c);
                             });
  write_artifact(out / "scores.csv", format_scores_csv(rows), meta_for(c, c.pipeline.train.seed, "scores"));
  write_text_file(out / "config.json", config_to_json(c));
  std::cout << "fold " << fold << ": " << rows.size() << " score rows in " << (out / "scores.csv").string() << "\n";
  return kOk;
}

// ---- cv

int cmd_cv(const ConfigFlags& flags, bool save_checkpoints) {
  const auto c = flags.resolve();
  echo_config("cv", c, c.pipeline.train.seed);
  const auto out = require_path(c.paths.out, "--out");
  const auto data = load_dataset_for(c);
  const auto split = make_folds(data.manifest, c.cv.folds, c.cv.fold_seed);
  FoldObserver observe;
  if (save_checkpoints)
    observe = [&](std::size_t fold, const std::vector<const Scan*>&, Stage1Result& s1, Stage2Result& s2) {
      save_fold_checkpoints(out / fold_dir_name(fold), s1, s2, c);
    };
  const auto rows = cross_validate(data, split, c.pipeline, resolve_workers(c), observe);
  write_artifact(out / "scores.csv", format_scores_csv(rows), meta_for(c, c.pipeline.train.seed, "scores"));
  write_text_file(out / "config.json", config_to_json(c));

  json folds = json::object();
  for (std::size_t i = 0; i < split.subject_ids.size(); ++i) folds[split.subject_ids[i]] = split.fold_of[i];
  write_artifact(out / "folds.json", folds.dump(2) + "\n", meta_for(c, c.cv.fold_seed, "folds"));
  std::cout << split.k << " folds, " << rows.size() << " score rows in " << (out / "scores.csv").string() << "\n";
  return kOk;
}

// ---- eval

std::string opt_text(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

int cmd_eval(const ConfigFlags& flags, const std::string& scores_file) {
  const auto c = flags.resolve();
  const auto seed = c.eval.bootstrap_seed;
  echo_config("eval", c, seed);
  const auto scores = require_path(scores_file, "--scores");
  const auto out = require_path(c.paths.out, "--out");
  const auto rows = read_scores_csv(scores);
  if (rows.empty()) throw ValidationError(scores.string() + " has no rows");
  std::string source_hash = "unknown";
  if (fs::exists(sidecar_path(scores))) source_hash = read_meta_sidecar(scores).config_hash;
  // Results are a function of the table and the eval settings, so both go into the hash.
  Fnv1a h;
  h.update(source_hash);
  h.update(config_hash(c));
  const std::string hash = hex64(h.digest());

  std::ostringstream metrics, boot;
  metrics << "model,mode,level,n,tp,fp,tn,fn,accuracy,sensitivity,specificity,precision,f1,auc\n";
  boot << "model,mode,level,resamples,median,q1,q3,min,max\n";
  for (const auto& r : evaluate_scores(rows)) {
    const std::string tag = r.model + "_" + r.mode + "_" + r.level;
    const auto& m = r.metrics;
    char auc[32] = "";
    if (r.roc) std::snprintf(auc, sizeof auc, "%.6f", r.roc->auc);
    metrics << r.model << ',' << r.mode << ',' << r.level << ',' << r.counts.total() << ',' << r.counts.tp << ','
            << r.counts.fp << ',' << r.counts.tn << ',' << r.counts.fn << ',' << opt_text(m.accuracy) << ','
            << opt_text(m.sensitivity) << ',' << opt_text(m.specificity) << ',' << opt_text(m.precision) << ','
            << opt_text(m.f1) << ',' << auc << "\n";
    if (!r.roc) continue;
    write_artifact(out / ("roc_" + tag + ".csv"), format_roc_csv(*r.roc), {hash, seed, "roc"});
    const auto b = bootstrap_auc(r.p, r.labels, c.eval.bootstrap, seed);
    write_artifact(out / ("bootstrap_" + tag + ".csv"), format_bootstrap_csv(b), {hash, seed, "bootstrap"});
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.model.c_str(), r.mode.c_str(),
                  r.level.c_str(), b.aucs.size(), b.median, b.q1, b.q3, b.min, b.max);
    boot << line;
  }
  write_artifact(out / "metrics.csv", metrics.str(), {hash, seed, "metrics"});
  write_artifact(out / "bootstrap_summary.csv", boot.str(), {hash, seed, "bootstrap"});
  std::cout << metrics.str();
  return kOk;
}

// ---- delong

struct DelongArgs {
  std::string a, b, model_a, model_b, mode_a, mode_b, level = "scan", out;
};

std::map<std::string, std::pair<double, int>> keyed_scores(const std::string& file, const std::string& model,
                                                           const std::string& mode, const std::string& level) {
  std::map<std::string, std::pair<double, int>> out;
  for (const auto& r : read_scores_csv(file)) {
    if (r.model != model || (!mode.empty() && r.mode != mode)) continue;
    if ((level == "scan") != (r.slice_index < 0)) continue;
    const std::string key = r.slice_index < 0 ? r.subject_id : r.subject_id + ":" + std::to_string(r.slice_index);
    if (!out.emplace(key, std::make_pair(r.p_hh, static_cast<int>(r.label))).second)
      throw ValidationError(file + ": duplicate row " + key + " for model " + model + " (select one with --mode)");
  }
  if (out.empty()) throw ValidationError(file + ": no " + level + "-level rows for model " + model);
  return out;
}

int cmd_delong(const DelongArgs& d) {
  const std::string b_file = d.b.empty() ? d.a : d.b;
  const std::string model_b = d.model_b.empty() ? d.model_a : d.model_b;
  const json echo{{"a", d.a}, {"b", b_file}, {"model_a", d.model_a}, {"model_b", model_b},
                  {"mode_a", d.mode_a}, {"mode_b", d.mode_b}, {"level", d.level}};
  std::cerr << "qnet delong: seed 0 (deterministic)\n" << echo.dump(2) << "\n";
  const auto sa = keyed_scores(d.a, d.model_a, d.mode_a, d.level);
  const auto sb = keyed_scores(b_file, model_b, d.mode_b, d.level);
  std::vector<double> pa, pb;
  std::vector<int> y;
  for (const auto& [key, v] : sa) {
    auto it = sb.find(key);
    if (it == sb.end()) throw ValidationError("row " + key + " is missing from " + b_file);
    if (it->second.second != v.second) throw ValidationError("row " + key + " has different labels in the two tables");
    pa.push_back(v.first);
    pb.push_back(it->second.first);
    y.push_back(v.second);
  }
  if (sb.size() != sa.size()) throw ValidationError(b_file + " has rows missing from " + d.a);
  const auto r = delong_test(pa, pb, y);

  char line[512];
  std::snprintf(line, sizeof line, "%s,%s,%s,%zu,%.6f,%.6f,%.9g,%.9g,%s,%d\n", d.model_a.c_str(), model_b.c_str(),
                d.level.c_str(), y.size(), r.auc1, r.auc2, r.z, r.p_value, r.band.c_str(), r.degenerate ? 1 : 0);
  const std::string text = std::string("model_a,model_b,level,n,auc_a,auc_b,z,p_value,significance,degenerate\n") + line;
  std::cout << text;
  if (!d.out.empty()) {
    std::string hash_a = "unknown", hash_b = "unknown";
    std::uint64_t seed = 0;
    if (fs::exists(sidecar_path(d.a))) {
      const auto m = read_meta_sidecar(d.a);
      hash_a = m.config_hash;
      seed = m.seed;
    }
    if (fs::exists(sidecar_path(b_file))) hash_b = read_meta_sidecar(b_file).config_hash;
    write_artifact(d.out, text, {hash_a == hash_b ? hash_a : hash_a + "+" + hash_b, seed, "delong"});
  }
  return kOk;
}

// ---- cam

int cmd_cam(const ConfigFlags& flags, const std::string& checkpoint, std::vector<std::string> subjects,
            std::size_t cls) {
  const auto ckpath = require_path(checkpoint, "--checkpoint");
  const auto ck = load_checkpoint(ckpath);
  if (ck.stage != "stage1") throw UsageError(ckpath.string() + " is a " + ck.stage + " checkpoint; cam needs stage1");
  ExperimentConfig trained;
  try {
    trained = config_from_json(ck.config_json);
  } catch (const std::exception& e) {
    throw FormatError(ckpath.string() + ": embedded config: " + e.what());
  }
  const auto c = flags.resolve(&trained);
  echo_config("cam", c, ck.seed);
  if (cls >= c.pipeline.qnet.num_classes) throw UsageError("--class out of range");
  const auto out = require_path(c.paths.out, "--out");
  const auto data = load_dataset_for(c);

  ImageModel<float> model(c.pipeline.backbone, c.pipeline.qnet.num_classes);
  restore_tensors(ck, model.parameters(), model.buffers());
  const auto test_cfg = c.pipeline.augment_for(AugmentMode::Test);
  const ArtifactMeta meta{ck.config_hash, ck.seed, "cam"};

  std::ostringstream summary;
  summary << "subject_id,slice_index,label,p_hh,argmax_row,argmax_col,inside_bbox\n";
  std::size_t written = 0;
  for (const auto& scan : data.scans) {
    const bool wanted = subjects.empty() ? scan.label == Label::HH
                                         : std::find(subjects.begin(), subjects.end(), scan.subject_id) != subjects.end();
    if (!wanted) continue;
    const auto p = predict_slices(model, scan, c.pipeline);
    std::vector<CamInput> inputs;
    std::vector<Slice> images;
    for (const auto& s : scan.slices) {
      inputs.push_back(cam_input(s, scan.bbox, test_cfg));
      images.push_back(inputs.back().image);
    }
    const auto cams = compute_cams(model, images, cls);
    for (std::size_t t = 0; t < cams.size(); ++t) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_slice%02zu", scan.subject_id.c_str(), t);
      export_cam(cams[t], inputs[t].image, out / stem, meta);
      const bool inside = inputs[t].bbox.contains(static_cast<double>(cams[t].argmax_row),
                                                  static_cast<double>(cams[t].argmax_col));
      char line[256];
      std::snprintf(line, sizeof line, "%s,%zu,%s,%.9g,%zu,%zu,%d\n", scan.subject_id.c_str(), t,
                    to_string(scan.label).c_str(), p[t], cams[t].argmax_row, cams[t].argmax_col, inside ? 1 : 0);
      summary << line;
      ++written;
    }
  }
  if (written == 0) throw ValidationError("no matching subjects in " + c.paths.data);
  write_artifact(out / "cam_summary.csv", summary.str(), meta);
  std::cout << written << " CAM maps in " << out.string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"qnet: phantom data, two-stage training, cross-validation, statistics and CAM export"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands, config keys included");

  ConfigFlags synth_flags, train_flags, cv_flags, eval_flags, cam_flags;
  auto* synth = app.add_subcommand("synth", "Generate a phantom dataset");
  synth_flags.attach(synth, {{"paths.data", "--out"}, {"data.subjects", "--subjects"}, {"data.seed", "--seed"},
                             {"data.amplitude", "--amplitude"}});

  std::size_t fold = 0;
  auto* train = app.add_subcommand("train", "Train stages 1 and 2 on one fold and score its held-out subjects");
  train->add_option("--fold", fold, "fold index (0-based)");
  train_flags.attach(train, {{"paths.data", "--data"}, {"paths.out", "--out"}, {"train.seed", "--seed"}, {"cv.folds", "--folds"}});

  bool save_checkpoints = false;
  auto* cv = app.add_subcommand("cv", "Run k-fold cross-validation and write the pooled score table");
  cv->add_flag("--save-checkpoints", save_checkpoints, "write fold_NN/stage{1,2}.qnck");
  cv_flags.attach(cv, {{"paths.data", "--data"}, {"paths.out", "--out"}, {"train.seed", "--seed"},
                       {"cv.workers", "--workers"}, {"cv.folds", "--folds"}});

  std::string scores_file;
  auto* eval = app.add_subcommand("eval", "Metrics, ROC and bootstrap CSVs from a score table");
  eval->add_option("--scores", scores_file, "score table CSV")->required()->check(CLI::ExistingFile);
  eval_flags.attach(eval, {{"paths.out", "--out"}, {"eval.bootstrap", "--bootstrap"}, {"eval.bootstrap_seed", "--seed"}});

  DelongArgs dl;
  auto* delong = app.add_subcommand("delong", "DeLong test between two models scored on the same rows");
  delong->add_option("--a", dl.a, "first score table")->required()->check(CLI::ExistingFile);
  delong->add_option("--b", dl.b, "second score table (default: same as --a)")->check(CLI::ExistingFile);
  delong->add_option("--model-a", dl.model_a, "model in the first table")->required();
  delong->add_option("--model-b", dl.model_b, "model in the second table (default: --model-a)");
  delong->add_option("--mode-a", dl.mode_a, "mode filter for the first table");
  delong->add_option("--mode-b", dl.mode_b, "mode filter for the second table");
  delong->add_option("--level", dl.level, "image or scan")->check(CLI::IsMember({"image", "scan"}));
  delong->add_option("--out", dl.out, "write the result CSV here");

  std::string checkpoint;
  std::vector<std::string> subjects;
  std::size_t cls = 1;
  auto* cam = app.add_subcommand("cam", "Export class activation maps from a stage-1 checkpoint");
  cam->add_option("--checkpoint", checkpoint, "stage1.qnck")->required()->check(CLI::ExistingFile);
  cam->add_option("--subject", subjects, "subject ids (default: every HH subject)");
  cam->add_option("--class", cls, "class index (1 = HH)");
  cam_flags.attach(cam, {{"paths.data", "--data"}, {"paths.out", "--out"}});

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_flags);
    if (train->parsed()) return cmd_train(train_flags, fold);
    if (cv->parsed()) return cmd_cv(cv_flags, save_checkpoints);
    if (eval->parsed()) return cmd_eval(eval_flags, scores_file);
    if (delong->parsed()) return cmd_delong(dl);
    if (cam->parsed()) return cmd_cam(cam_flags, checkpoint, subjects, cls);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace qnet::cli
