#include "dfcn/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dfcn/serialization.hpp"

namespace dfcn {

namespace {

std::vector<Tensor*> trainable_tensors(ParameterSet<float>& p) {
  std::vector<Tensor*> out;
  p.for_each_trainable([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> trainable_tensors(const ParameterSet<float>& p) {
  std::vector<const Tensor*> out;
  p.for_each_trainable([&](const std::string&, const Tensor& t) { out.push_back(&t); });
  return out;
}

bool roi_empty(const SampleRecord& r) {
  for (auto v : r.roi.data()) {
    if (v) return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

OptimizerState OptimizerState::for_network(const Network& net, const AdamConfig& config) {
  OptimizerState s;
  s.config = config;
  s.m = net.params.zeros_like();
  s.v = net.params.zeros_like();
  return s;
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 std::int64_t t, const AdamConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (t < 1) throw ParameterError("adam_update: step counter must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    param[i] = static_cast<float>(param[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

void adam_step(ParameterSet<float>& params, const ParameterSet<float>& grads, OptimizerState& state) {
  auto p = trainable_tensors(params);
  const auto g = trainable_tensors(grads);
  auto m = trainable_tensors(state.m);
  auto v = trainable_tensors(state.v);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("adam_step: gradient or moment structure does not match the parameters");
  }
  ++state.t;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]->shape() != p[i]->shape()) throw ShapeError("adam_step: gradient shape mismatch");
    adam_update(p[i]->data(), g[i]->data(), m[i]->data(), v[i]->data(), state.t, state.config);
  }
}

// ---------------------------------------------------------------------------
// Early stopping

StopDecision should_stop(StopState& state, double metric) {
  StopDecision d;
  if (!state.has_best || metric >= state.best_metric * (1.0 + state.min_relative_improvement)) {
    state.best_metric = metric;
    state.has_best = true;
    state.epochs_since_significant = 0;
    d.significant = true;
  } else {
    ++state.epochs_since_significant;
  }
  d.stop = state.epochs_since_significant > state.patience;
  return d;
}

std::optional<std::size_t> stop_epoch(std::span<const double> history, int patience, double min_relative_improvement) {
  StopState s;
  s.patience = patience;
  s.min_relative_improvement = min_relative_improvement;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (should_stop(s, history[i]).stop) return i;
  }
  return std::nullopt;
}

TrainStreams TrainStreams::from_seed(std::uint64_t seed) {
  return {Rng::stream(seed, "shuffle"), Rng::stream(seed, "augment"), Rng::stream(seed, "dropout")};
}

// ---------------------------------------------------------------------------
// Epochs

EpochStats train_epoch(Network& net, std::span<const SampleRecord> records, const ClassWeights& weights,
                       const LossConfig& loss, OptimizerState& opt, TrainStreams& streams,
                       const EpochOptions& options) {
  EpochStats stats;
  stats.epoch = options.epoch;
  if (records.empty()) return stats;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  streams.shuffle.shuffle(order.begin(), order.end());
  std::int64_t with_unlabeled = 0;
  for (std::size_t step = 0; step < order.size(); ++step) {
    const SampleRecord& base = records[order[step]];
    // The augmentation draw happens for every record so that skipping does not shift later draws.
    const int op = static_cast<int>(streams.augment.below(8));
    if (roi_empty(base)) {
      std::clog << "warning: skipping record " << base.case_id << " with an empty roi\n";
      ++stats.skipped;
      continue;
    }
    const SampleRecord sample = options.augment ? augment(base, op) : base;
    const std::string where = " at epoch " + std::to_string(options.epoch) + ", step " + std::to_string(step) +
                              " (record " + base.case_id + ")";
    LossBreakdown lb;
    try {
      auto [probs, cache] = forward(net, sample.image, Mode::train, streams.dropout);
      lb = image_loss(probs, sample.labels, sample.roi, weights, loss);
      if (!std::isfinite(lb.total)) throw NumericError("non-finite loss" + where);
      const Tensor grad_logits = image_loss_backward_logits(probs, sample.labels, sample.roi, weights, loss);
      const ParameterSet<float> grads = backward_from_logits(net, cache, grad_logits);
      adam_step(net.params, grads, opt);
      update_running_stats(net, cache, options.running_stats_momentum);
    } catch (const NumericError& e) {
      const std::string what = e.what();
      if (what.find(where) != std::string::npos) throw;
      throw NumericError(what + where);
    }
    net.params.for_each_trainable([&](const std::string& name, const Tensor& t) {
      if (!all_finite(t.data())) throw NumericError("non-finite parameter " + name + where);
    });
    stats.step_losses.push_back(lb.total);
    stats.mean_loss += lb.total;
    stats.mean_supervised += lb.supervised;
    stats.mean_unsupervised += lb.unsupervised;
    if (lb.unlabeled > 0) {
      stats.mean_unlabeled_entropy += lb.mean_unlabeled_entropy;
      ++with_unlabeled;
    }
    ++stats.steps;
  }
  if (stats.steps > 0) {
    const auto n = static_cast<double>(stats.steps);
    stats.mean_loss /= n;
    stats.mean_supervised /= n;
    stats.mean_unsupervised /= n;
  }
  if (with_unlabeled > 0) stats.mean_unlabeled_entropy /= static_cast<double>(with_unlabeled);
  return stats;
}

EvalReport evaluate(const Network& net, std::span<const SampleRecord> records, const ClassWeights& weights,
                    const LossConfig& loss) {
  EvalReport report;
  report.confusion = ConfusionMatrix(net.config.num_classes);
  Rng unused(0);
  std::int64_t scored = 0, with_unlabeled = 0;
  for (const auto& r : records) {
    if (roi_empty(r)) continue;
    const auto [probs, cache] = forward(net, r.image, Mode::eval, unused);
    report.confusion += confusion_matrix(argmax_labels(probs), r.labels, net.config.num_classes, &r.roi);
    const LossBreakdown lb = image_loss(probs, r.labels, r.roi, weights, loss);
    report.supervised_loss += lb.supervised;
    report.unsupervised_loss += lb.unsupervised;
    ++scored;
    if (lb.unlabeled > 0) {
      report.mean_unlabeled_entropy += lb.mean_unlabeled_entropy;
      ++with_unlabeled;
    }
  }
  if (scored > 0) {
    report.supervised_loss /= static_cast<double>(scored);
    report.unsupervised_loss /= static_cast<double>(scored);
  }
  if (with_unlabeled > 0) report.mean_unlabeled_entropy /= static_cast<double>(with_unlabeled);
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Run configuration

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"network", c.network},
                     {"loss", {{"alpha", c.loss.alpha}}},
                     {"optimizer",
                      {{"learning_rate", c.optimizer.learning_rate},
                       {"beta1", c.optimizer.beta1},
                       {"beta2", c.optimizer.beta2},
                       {"eps", c.optimizer.eps}}},
                     {"stop",
                      {{"patience", c.stop.patience},
                       {"min_relative_improvement", c.stop.min_relative_improvement},
                       {"max_epochs", c.stop.max_epochs}}},
                     {"seed", c.seed},
                     {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  reject_unknown_keys(j, {"network", "loss", "optimizer", "stop", "seed", "augment"}, "config");
  c = RunConfig{};
  try {
    if (j.contains("network")) c.network = j.at("network").get<NetworkConfig>();
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      reject_unknown_keys(l, {"alpha"}, "loss");
      c.loss.alpha = l.value("alpha", c.loss.alpha);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown_keys(o, {"learning_rate", "beta1", "beta2", "eps"}, "optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.eps = o.value("eps", c.optimizer.eps);
    }
    if (j.contains("stop")) {
      const auto& s = j.at("stop");
      reject_unknown_keys(s, {"patience", "min_relative_improvement", "max_epochs"}, "stop");
      c.stop.patience = s.value("patience", c.stop.patience);
      c.stop.min_relative_improvement = s.value("min_relative_improvement", c.stop.min_relative_improvement);
      c.stop.max_epochs = s.value("max_epochs", c.stop.max_epochs);
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("augment")) c.augment = j.at("augment").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::vector<std::string> problems = c.network.violations();
  if (!(c.loss.alpha >= 0.0)) problems.push_back("loss.alpha must be >= 0");
  if (!(c.optimizer.learning_rate > 0.0)) problems.push_back("optimizer.learning_rate must be > 0");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) problems.push_back("optimizer.beta1 must be in [0, 1)");
  if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) problems.push_back("optimizer.beta2 must be in [0, 1)");
  if (!(c.optimizer.eps > 0.0)) problems.push_back("optimizer.eps must be > 0");
  if (c.stop.patience < 0) problems.push_back("stop.patience must be >= 0");
  if (!(c.stop.min_relative_improvement >= 0.0)) problems.push_back("stop.min_relative_improvement must be >= 0");
  if (c.stop.max_epochs < 1) problems.push_back("stop.max_epochs must be >= 1");
  if (!problems.empty()) {
    std::string msg = "config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ConfigError(msg);
  }
}

std::string RunConfig::hash() const {
  nlohmann::json j = *this;
  return hex64(json_hash(j));
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void to_json(nlohmann::json& j, const EpochLog& e) {
  j = nlohmann::json{{"epoch", e.epoch},
                     {"fold", e.fold},
                     {"train",
                      {{"steps", e.train.steps},
                       {"skipped", e.train.skipped},
                       {"loss", e.train.mean_loss},
                       {"supervised", e.train.mean_supervised},
                       {"unsupervised", e.train.mean_unsupervised},
                       {"unlabeled_entropy", e.train.mean_unlabeled_entropy}}},
                     {"validation", e.validation},
                     {"best_bacc", e.best_bacc},
                     {"significant", e.significant},
                     {"wall_seconds", e.wall_seconds},
                     {"seed", e.seed},
                     {"config_hash", e.config_hash},
                     {"param_hash", e.param_hash}};
}

// ---------------------------------------------------------------------------
// Folds

FoldResult run_fold(std::span<const SampleRecord> train, std::span<const SampleRecord> heldout, const RunConfig& config,
                    int fold, const FoldOptions& options) {
  config.network.validate();
  const int classes = config.network.num_classes;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
  for (const auto& r : train) {
    const auto c = count_labels(r.labels, classes, &r.roi);
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += c[k];
  }
  FoldResult result;
  result.fold = fold;
  result.weights = class_weights(counts);

  Network net = build(config.network, config.seed);
  OptimizerState opt = OptimizerState::for_network(net, config.optimizer);
  TrainStreams streams = TrainStreams::from_seed(config.seed);
  StopState stop;
  stop.patience = config.stop.patience;
  stop.min_relative_improvement = config.stop.min_relative_improvement;
  const std::string config_hash = config.hash();

  std::ofstream runlog;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    runlog.open(*options.out_dir / "runlog.jsonl");
    if (!runlog) throw DataError("cannot write " + (*options.out_dir / "runlog.jsonl").string());
  }
  double best = -1.0;
  result.best = net;
  for (int epoch = 0; epoch < config.stop.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.fold = fold;
    EpochOptions eo;
    eo.epoch = epoch;
    eo.augment = config.augment;
    log.train = train_epoch(net, train, result.weights, config.loss, opt, streams, eo);
    log.train.step_losses.clear();
    log.validation = evaluate(net, heldout, result.weights, config.loss);
    const StopDecision decision = should_stop(stop, log.validation.bacc);
    log.significant = decision.significant;
    if (log.validation.bacc > best) {
      best = log.validation.bacc;
      result.best = net;
      result.report = log.validation;
      result.best_epoch = epoch;
      if (options.out_dir) save_checkpoint(net, *options.out_dir / "best.dfck");
    }
    log.best_bacc = best;
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.seed = config.seed;
    log.config_hash = config_hash;
    log.param_hash = hex64(parameter_hash(net));
    if (runlog.is_open()) runlog << nlohmann::json(log).dump() << '\n' << std::flush;
    if (!options.quiet) {
      std::fprintf(stderr, "fold %d epoch %3d  loss %.4f (sup %.4f, unsup %.4f)  bacc %.4f  best %.4f  %.1fs\n", fold,
                   epoch, log.train.mean_loss, log.train.mean_supervised, log.train.mean_unsupervised,
                   log.validation.bacc, best, log.wall_seconds);
    }
    if (options.on_epoch) options.on_epoch(log);
    result.log.push_back(std::move(log));
    result.epochs_run = epoch + 1;
    if (decision.stop) break;
  }
  if (options.out_dir) save_checkpoint(net, *options.out_dir / "final.dfck");
  return result;
}

FoldResult run_fold(const DatasetManifest& manifest, const SplitAssignment& split, int fold, const RunConfig& config,
                    const FoldOptions& options) {
  if (fold < 0 || fold >= split.folds) {
    throw ParameterError("fold index " + std::to_string(fold) + " out of range for " + std::to_string(split.folds) +
                         " folds");
  }
  if (manifest.num_classes() != config.network.num_classes) {
    throw ConfigError("manifest has " + std::to_string(manifest.num_classes()) + " classes, network expects " +
                      std::to_string(config.network.num_classes));
  }
  const auto train = load_records(manifest, split.complement(manifest, fold));
  const auto heldout = load_records(manifest, split.members(manifest, fold));
  return run_fold(train, heldout, config, fold, options);
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(fold + 1)));
}

void to_json(nlohmann::json& j, const CvReport& r) {
  j = nlohmann::json{{"split", r.split},
                     {"folds", r.folds},
                     {"best_epochs", r.best_epochs},
                     {"mean_bacc", r.mean_bacc},
                     {"pooled", r.pooled}};
}

namespace {

CvReport run_cv_with_split(const DatasetManifest& manifest, const SplitAssignment& split, const RunConfig& config,
                           const CvOptions& options) {
  CvReport report;
  report.split = split;
  report.pooled.confusion = ConfusionMatrix(config.network.num_classes);
  double sum = 0.0;
  for (int f = 0; f < split.folds; ++f) {
    RunConfig fc = config;
    fc.seed = fold_seed(config.seed, f);
    FoldOptions fo;
    if (options.out_dir) fo.out_dir = *options.out_dir / ("fold" + std::to_string(f));
    fo.on_epoch = options.on_epoch;
    fo.quiet = options.quiet;
    FoldResult fr = run_fold(manifest, split, f, fc, fo);
    sum += fr.report.bacc;
    report.pooled.confusion += fr.report.confusion;
    report.folds.push_back(fr.report);
    report.best_epochs.push_back(fr.best_epoch);
    report.log.insert(report.log.end(), fr.log.begin(), fr.log.end());
  }
  report.mean_bacc = sum / static_cast<double>(split.folds);
  report.pooled.finalize();
  return report;
}

SplitAssignment cv_split(const DatasetManifest& manifest, const RunConfig& config, const CvOptions& options) {
  Rng rng = Rng::stream(config.seed, "split");
  return hill_climb_split(manifest, options.folds, options.split_iters, rng);
}

}  // namespace

CvReport run_cv(const DatasetManifest& manifest, const RunConfig& config, const CvOptions& options) {
  return run_cv_with_split(manifest, cv_split(manifest, config, options), config, options);
}

std::string curve_csv_header() { return "alpha,epoch,fold,bacc,best_bacc"; }

std::string curve_csv_row(const CurvePoint& p) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.6g,%d,%d,%.6f,%.6f", p.alpha, p.epoch, p.fold, p.bacc, p.best_bacc);
  return buf;
}

SweepResult run_alpha_sweep(const DatasetManifest& manifest, const RunConfig& config, std::span<const double> alphas,
                            const CvOptions& options) {
  SweepResult out;
  const SplitAssignment split = cv_split(manifest, config, options);
  for (double alpha : alphas) {
    RunConfig c = config;
    c.loss.alpha = alpha;
    CvOptions o = options;
    if (options.out_dir) {
      char name[64];
      std::snprintf(name, sizeof(name), "alpha_%g", alpha);
      o.out_dir = *options.out_dir / name;
    }
    CvReport r = run_cv_with_split(manifest, split, c, o);
    for (const auto& e : r.log) out.curves.push_back({alpha, e.epoch, e.fold, e.validation.bacc, e.best_bacc});
    out.alphas.push_back(alpha);
    out.reports.push_back(std::move(r));
  }
  return out;
}

}  // namespace dfcn
