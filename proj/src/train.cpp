#include "qnet/train.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "qnet/stats.hpp"

namespace qnet {

namespace {

int label_index(Label l) { return static_cast<int>(l); }

void scale_inplace(Tensor<float>& t, float s) {
  for (auto& v : t.data()) v *= s;
}

double p_hh_of_row(const Tensor<float>& probs, std::size_t row) { return probs[row * probs.dim(1) + 1]; }

}  // namespace

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.stage1.epochs = 100;
  c.stage1.batch = 64;
  c.stage1.lr_max = 3e-4;
  c.stage1.lr_min = 1e-4;
  c.stage2.epochs = 50;
  c.stage2.batch = 64;
  c.stage2.lr = 3e-4;
  return c;
}

void TrainConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be positive");
  };
  if (stage1.epochs == 0 || stage2.epochs == 0) throw ValidationError("epochs must be >= 1");
  if (stage1.batch == 0 || stage2.batch == 0) throw ValidationError("batch must be >= 1");
  positive("stage1.lr_max", stage1.lr_max);
  positive("stage1.lr_min", stage1.lr_min);
  positive("stage2.lr", stage2.lr);
  if (stage1.lr_min > stage1.lr_max) throw ValidationError("stage1.lr_min must not exceed stage1.lr_max");
  if (!(stage1.swa_start_fraction >= 0.0 && stage1.swa_start_fraction < 1.0))
    throw ValidationError("stage1.swa_start_fraction must be in [0,1)");
  if (lr_schedule != "cosine_per_step") throw ValidationError("lr_schedule must be cosine_per_step");
}

void PipelineConfig::validate() const {
  train.validate();
  augment.validate();
  backbone.validate();
  qnet.validate();
  if (qnet.embed_dim != backbone.feature_dim())
    throw ValidationError("qnet.embed_dim (" + std::to_string(qnet.embed_dim) + ") must equal the backbone feature width (" +
                          std::to_string(backbone.feature_dim()) + ")");
}

AugmentConfig PipelineConfig::augment_for(AugmentMode mode) const {
  AugmentConfig a = augment;
  a.mode = mode;
  a.crop_mode = train.input_mode;
  return a;
}

std::string mode_name(CropMode m) { return m == CropMode::Full ? "full" : "cropped"; }

Tensor<float> make_batch(const std::vector<SliceRef>& refs, const AugmentConfig& aug,
                         const std::vector<std::uint64_t>& seeds) {
  if (refs.empty()) throw ValidationError("empty batch");
  if (seeds.size() != refs.size()) throw DimensionError("make_batch: one seed per slice required");
  aug.validate();
  const std::size_t c = refs[0].scan->slices.at(refs[0].index).dim(0), s = aug.target_size;
  const std::size_t per = c * s * s;
  Tensor<float> out({refs.size(), c, s, s});
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto n = static_cast<std::ptrdiff_t>(refs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& ref = refs[static_cast<std::size_t>(i)];
      Rng rng(seeds[static_cast<std::size_t>(i)]);
      const auto r = apply_pipeline(ref.scan->slices.at(ref.index), ref.scan->bbox, aug, rng);
      if (r.image.size() != per) throw DimensionError("slice channel count differs within a batch");
      std::copy_n(r.image.raw(), per, out.raw() + static_cast<std::size_t>(i) * per);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

void recompute_bn(ImageModel<float>& model, const std::vector<const Scan*>& scans, const PipelineConfig& cfg) {
  std::vector<SliceRef> refs;
  for (const auto* s : scans)
    for (std::size_t t = 0; t < s->slices.size(); ++t) refs.push_back({s, t});
  const auto aug = cfg.augment_for(AugmentMode::Test);
  const std::size_t b = std::max<std::size_t>(cfg.train.stage1.batch, 1);
  model.backbone.begin_bn_recompute();
  for (std::size_t i = 0; i < refs.size(); i += b) {
    const std::vector<SliceRef> chunk(refs.begin() + i, refs.begin() + std::min(refs.size(), i + b));
    model.backbone.forward(make_batch(chunk, aug, std::vector<std::uint64_t>(chunk.size(), 0)), Mode::Train);
  }
  model.backbone.end_bn_recompute();
}

Stage1Result train_stage1(const std::vector<const Scan*>& scans, const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& sc = cfg.train.stage1;
  std::vector<SliceRef> refs;
  std::vector<int> labels;
  for (const auto* s : scans)
    for (std::size_t t = 0; t < s->slices.size(); ++t) {
      refs.push_back({s, t});
      labels.push_back(label_index(s->label));
    }
  if (refs.empty()) throw ValidationError("stage 1: training fold has no slices");

  ImageModel<float> model(cfg.backbone);
  model.init(derive_seed(seed, {1}));
  const auto params = model.parameters();
  Adam<float> opt(params);
  SwaState<float> swa;

  const std::size_t n = refs.size(), batch = std::min(sc.batch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch, total = sc.epochs * steps_per_epoch;
  const auto swa_start = std::min(sc.epochs - 1, static_cast<std::size_t>(std::floor(sc.swa_start_fraction * static_cast<double>(sc.epochs))));
  const auto aug = cfg.augment_for(AugmentMode::Train);

  Stage1Result res;
  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(seed, {2, epoch}));
    shuffler.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::vector<SliceRef> chunk;
      std::vector<std::uint64_t> seeds;
      std::vector<int> y;
      for (std::size_t k = start; k < end; ++k) {
        chunk.push_back(refs[order[k]]);
        seeds.push_back(derive_seed(seed, {3, epoch, order[k]}));
        y.push_back(labels[order[k]]);
      }
      opt.zero_grad();
      const auto logits = model.forward(make_batch(chunk, aug, seeds), Mode::Train);
      const auto loss = softmax_cross_entropy(logits, y);
      const double lr = cosine_lr(step, total, sc.lr_max, sc.lr_min);
      if (!std::isfinite(loss.loss))
        throw DivergenceError("stage 1 diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + ", lr " + std::to_string(lr));
      model.backward(loss.grad);
      opt.step(lr);
      ++step;
      res.loss_trace.push_back(loss.loss);
      epoch_loss += loss.loss;
    }
    if (sc.swa && epoch >= swa_start) swa.update(params);
    if (cfg.train.verbose)
      std::cerr << "stage1 epoch " << epoch + 1 << "/" << sc.epochs << " loss "
                << epoch_loss / static_cast<double>(steps_per_epoch) << "\n";
  }

  res.last = model;
  res.swa = model;
  res.swa_snapshots = swa.count();
  if (sc.swa) {
    swa.install(res.swa.parameters());
    recompute_bn(res.swa, scans, cfg);
  }
  return res;
}

PaddedScan pad_scan(const Scan& scan, std::size_t seq_len) {
  if (scan.slices.empty()) throw ValidationError("scan " + scan.subject_id + " has no slices");
  if (scan.slices.size() > seq_len)
    throw DimensionError("scan " + scan.subject_id + " has " + std::to_string(scan.slices.size()) +
                         " slices, model expects at most " + std::to_string(seq_len));
  PaddedScan p;
  for (std::size_t t = 0; t < seq_len; ++t) {
    p.slices.push_back({&scan, std::min(t, scan.slices.size() - 1)});
    p.mask.push_back(t < scan.slices.size());
  }
  return p;
}

Tensor<float> embed_scan(Backbone<float>& backbone, const Scan& scan, const PipelineConfig& cfg, AugmentMode mode,
                         std::uint64_t seed) {
  const std::size_t T = cfg.qnet.seq_len;
  pad_scan(scan, T);
  std::vector<SliceRef> refs;
  std::vector<std::uint64_t> seeds;
  for (std::size_t t = 0; t < scan.slices.size(); ++t) {
    refs.push_back({&scan, t});
    seeds.push_back(derive_seed(seed, {t}));
  }
  const auto feats = backbone.forward(make_batch(refs, cfg.augment_for(mode), seeds), Mode::Infer);
  const std::size_t d = feats.dim(1);
  Tensor<float> out({T, d});
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t src = std::min(t, scan.slices.size() - 1);
    std::copy_n(feats.raw() + src * d, d, out.raw() + t * d);
  }
  return out;
}

Stage2Result train_stage2(Backbone<float>& backbone, const std::vector<const Scan*>& scans, const PipelineConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  if (scans.empty()) throw ValidationError("stage 2: training fold has no scans");
  const auto& sc = cfg.train.stage2;
  if (backbone.config().feature_dim() != cfg.qnet.embed_dim)
    throw DimensionError("stage 2: backbone feature width differs from qnet.embed_dim");
  for (const auto* s : scans) pad_scan(*s, cfg.qnet.seq_len);

  Stage2Result res;
  const auto frozen = backbone.parameters();
  for (auto* p : frozen) p->frozen = true;
  res.backbone_hash_before = hash_parameters(frozen);

  res.qnet = QNet<float>(cfg.qnet);
  res.qnet.init(derive_seed(seed, {4}));
  Adam<float> opt(res.qnet.parameters());

  const std::size_t n = scans.size(), T = cfg.qnet.seq_len, batch = std::min(sc.batch, n);
  std::vector<Tensor<float>> emb(n);
  auto embed_all = [&](AugmentMode mode, std::size_t epoch) {
    for (std::size_t i = 0; i < n; ++i) emb[i] = embed_scan(backbone, *scans[i], cfg, mode, derive_seed(seed, {5, epoch, i}));
  };
  if (!sc.augment) embed_all(AugmentMode::Test, 0);

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    if (sc.augment) embed_all(AugmentMode::Train, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(seed, {6, epoch}));
    shuffler.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const float inv = 1.0f / static_cast<float>(end - start);
      opt.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Scan& s = *scans[order[k]];
        const auto padded = pad_scan(s, T);
        const int y = label_index(s.label);
        const auto out = res.qnet.forward(emb[order[k]]);
        auto scan_loss = softmax_cross_entropy(out.scan_logits, std::vector<int>{y});
        auto image_loss = softmax_cross_entropy(out.image_logits, std::vector<int>(T, y), padded.mask);
        batch_loss += scan_loss.loss + image_loss.loss;
        scale_inplace(scan_loss.grad, inv);
        scale_inplace(image_loss.grad, inv);
        res.qnet.backward(image_loss.grad, scan_loss.grad);
      }
      batch_loss /= static_cast<double>(end - start);
      if (!std::isfinite(batch_loss))
        throw DivergenceError("stage 2 diverged: non-finite loss at epoch " + std::to_string(epoch));
      opt.step(sc.lr);
      res.loss_trace.push_back(batch_loss);
      epoch_loss += batch_loss;
    }
    if (cfg.train.verbose)
      std::cerr << "stage2 epoch " << epoch + 1 << "/" << sc.epochs << " loss "
                << epoch_loss / static_cast<double>((n + batch - 1) / batch) << "\n";
  }
  res.backbone_hash_after = hash_parameters(frozen);
  return res;
}

std::vector<double> predict_slices(ImageModel<float>& model, const Scan& scan, const PipelineConfig& cfg) {
  std::vector<SliceRef> refs;
  for (std::size_t t = 0; t < scan.slices.size(); ++t) refs.push_back({&scan, t});
  const auto x = make_batch(refs, cfg.augment_for(AugmentMode::Test), std::vector<std::uint64_t>(refs.size(), 0));
  const auto probs = softmax(model.forward(x, Mode::Infer));
  std::vector<double> p(refs.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = p_hh_of_row(probs, i);
  return p;
}

QNetPrediction predict_qnet(Backbone<float>& backbone, QNet<float>& qnet, const Scan& scan, const PipelineConfig& cfg) {
  const auto out = qnet.forward(embed_scan(backbone, scan, cfg));
  QNetPrediction pred;
  pred.scan_p = p_hh_of_row(softmax(out.scan_logits), 0);
  const auto img = softmax(out.image_logits);
  for (std::size_t t = 0; t < scan.slices.size(); ++t) pred.image_p.push_back(p_hh_of_row(img, t));
  return pred;
}

double vote_score(const std::vector<double>& slice_p) {
  if (slice_p.empty()) throw ValidationError("vote needs at least one slice prediction");
  double hh = 0.0, mean = 0.0;
  for (double p : slice_p) {
    hh += p > 0.5 ? 1.0 : 0.0;
    mean += p;
  }
  const double n = static_cast<double>(slice_p.size());
  const double score = std::clamp(hh / n + 1e-3 * (mean / n - 0.5), 0.0, 1.0);
  // at a slice tie the mean term can vanish below one ulp of 0.5; keep the side the vote chose
  if (majority_vote(slice_p) == Label::HH) return std::max(score, std::nextafter(0.5, 1.0));
  return std::min(score, 0.5);
}

std::vector<ScoreRow> run_fold(const Dataset& data, const FoldSplit& split, std::size_t fold, const PipelineConfig& cfg,
                               const FoldObserver& observe) {
  if (split.fold_of.size() != data.scans.size()) throw DimensionError("fold split does not match the dataset");
  const std::uint64_t seed = derive_seed(cfg.train.seed, {7, fold});
  std::vector<const Scan*> train, test;
  for (auto i : split.train_indices(fold)) train.push_back(&data.scans[i]);
  for (auto i : split.test_indices(fold)) test.push_back(&data.scans[i]);
  if (cfg.train.verbose) std::cerr << "fold " << fold + 1 << "/" << split.k << ": " << train.size() << " train, " << test.size() << " test\n";

  auto s1 = train_stage1(train, cfg, seed);
  auto s2 = train_stage2(s1.swa.backbone, train, cfg, seed);
  if (s2.backbone_hash_before != s2.backbone_hash_after) throw ValidationError("stage 2 modified the frozen backbone");

  const std::string mode = mode_name(cfg.train.input_mode);
  std::vector<ScoreRow> rows;
  for (const auto* s : test) {
    const auto p_last = predict_slices(s1.last, *s, cfg);
    const auto p_swa = predict_slices(s1.swa, *s, cfg);
    const auto q = predict_qnet(s1.swa.backbone, s2.qnet, *s, cfg);
    for (std::size_t t = 0; t < s->slices.size(); ++t) {
      const int ti = static_cast<int>(t);
      rows.push_back({s->subject_id, ti, s->label, p_last[t], "resnet", mode});
      rows.push_back({s->subject_id, ti, s->label, p_swa[t], "resnet_swa", mode});
      rows.push_back({s->subject_id, ti, s->label, q.image_p[t], "qnet", mode});
    }
    rows.push_back({s->subject_id, -1, s->label, vote_score(p_swa), "vote", mode});
    rows.push_back({s->subject_id, -1, s->label, q.scan_p, "qnet", mode});
  }
  if (observe) observe(fold, test, s1, s2);
  return rows;
}

std::vector<ScoreRow> cross_validate(const Dataset& data, const FoldSplit& split, const PipelineConfig& cfg,
                                     std::size_t workers, const FoldObserver& observe) {
  cfg.validate();
  const std::size_t k = split.k;
  workers = std::clamp<std::size_t>(workers, 1, k);
  std::vector<std::vector<ScoreRow>> per_fold(k);
  std::vector<std::exception_ptr> errors(k);
  std::atomic<std::size_t> next{0};
  const int inner = std::max(1, omp_get_max_threads() / static_cast<int>(workers));
  auto worker = [&] {
    omp_set_num_threads(inner);
    for (std::size_t f; (f = next.fetch_add(1)) < k;) {
      try {
        per_fold[f] = run_fold(data, split, f, cfg, observe);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::map<std::string, std::size_t> subject_rank;
  for (std::size_t i = 0; i < data.scans.size(); ++i) subject_rank[data.scans[i].subject_id] = i;
  auto model_rank = [](const std::string& m) {
    static const std::vector<std::string> known = {"resnet", "resnet_swa", "qnet", "vote"};
    return static_cast<std::size_t>(std::find(known.begin(), known.end(), m) - known.begin());
  };
  std::vector<ScoreRow> pooled;
  for (auto& rows : per_fold) pooled.insert(pooled.end(), rows.begin(), rows.end());
  std::stable_sort(pooled.begin(), pooled.end(), [&](const ScoreRow& a, const ScoreRow& b) {
    const bool sa = a.slice_index < 0, sb = b.slice_index < 0;
    if (sa != sb) return !sa;
    if (a.model != b.model) return model_rank(a.model) < model_rank(b.model);
    if (a.subject_id != b.subject_id) return subject_rank.at(a.subject_id) < subject_rank.at(b.subject_id);
    return a.slice_index < b.slice_index;
  });
  return pooled;
}

std::size_t workers_from_env() {
  const char* v = std::getenv("QNET_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ValidationError(std::string("QNET_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace qnet
