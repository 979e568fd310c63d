#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfcn/data.hpp"
#include "dfcn/loss_metrics.hpp"
#include "dfcn/model.hpp"
#include "dfcn/rng.hpp"

namespace dfcn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Per-parameter Adam moments mirroring a ParameterSet.
struct OptimizerState {
  AdamConfig config;
  ParameterSet<float> m;
  ParameterSet<float> v;
  std::int64_t t = 0;

  static OptimizerState for_network(const Network& net, const AdamConfig& config = {});
};

/// One Adam update with bias correction on a flat parameter array; `t` is the already incremented step.
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 std::int64_t t, const AdamConfig& cfg);

/// Increments state.t and updates every trainable tensor of `params`.
void adam_step(ParameterSet<float>& params, const ParameterSet<float>& grads, OptimizerState& state);

struct StopState {
  double best_metric = 0.0;
  bool has_best = false;
  int epochs_since_significant = 0;
  int patience = 50;
  double min_relative_improvement = 0.005;
};

struct StopDecision {
  bool significant = false;
  bool stop = false;
};

/// Feeds one validation metric; significant iff metric >= best * (1 + min_relative_improvement).
StopDecision should_stop(StopState& state, double metric);

/// Index of the epoch at which the rule stops for `history`, or nullopt when it never does.
std::optional<std::size_t> stop_epoch(std::span<const double> history, int patience = 50,
                                      double min_relative_improvement = 0.005);

/// Independent random streams derived from one seed.
struct TrainStreams {
  Rng shuffle;
  Rng augment;
  Rng dropout;

  static TrainStreams from_seed(std::uint64_t seed);
};

struct EpochStats {
  int epoch = 0;
  std::int64_t steps = 0;
  std::int64_t skipped = 0;
  double mean_loss = 0.0;
  double mean_supervised = 0.0;
  double mean_unsupervised = 0.0;
  double mean_unlabeled_entropy = 0.0;
  /// Total loss of every step in visiting order.
  std::vector<double> step_losses;
};

struct EpochOptions {
  int epoch = 0;
  bool augment = true;
  double running_stats_momentum = 0.99;
};

/**
 * One pass over `records` in shuffled order with batch size one: random
 * dihedral augmentation, forward in train mode, loss, backward, Adam step.
 * Records with an empty roi are skipped with a warning. Throws NumericError
 * when a loss or parameter becomes non-finite.
 */
EpochStats train_epoch(Network& net, std::span<const SampleRecord> records, const ClassWeights& weights,
                       const LossConfig& loss, OptimizerState& opt, TrainStreams& streams,
                       const EpochOptions& options = {});

/// Eval-mode predictions over `records`, pooled into one report.
EvalReport evaluate(const Network& net, std::span<const SampleRecord> records, const ClassWeights& weights,
                    const LossConfig& loss);

struct StopConfig {
  int patience = 50;
  double min_relative_improvement = 0.005;
  int max_epochs = 200;

  friend bool operator==(const StopConfig&, const StopConfig&) = default;
};

/// Everything that determines a training run besides the data.
struct RunConfig {
  NetworkConfig network;
  LossConfig loss;
  AdamConfig optimizer;
  StopConfig stop;
  std::uint64_t seed = 0;
  bool augment = true;

  /// Stable hex digest of the canonical JSON form.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Rejects unknown keys (ConfigError) at every level.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  int fold = 0;
  EpochStats train;
  EvalReport validation;
  double best_bacc = 0.0;
  bool significant = false;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string param_hash;
};

void to_json(nlohmann::json& j, const EpochLog& e);

struct FoldOptions {
  /// When set: RunLog (runlog.jsonl), best.dfck on every new best, final.dfck at the end.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every epoch.
  std::function<void(const EpochLog&)> on_epoch;
  bool quiet = true;
};

struct FoldResult {
  int fold = 0;
  Network best;
  EvalReport report;
  int best_epoch = -1;
  int epochs_run = 0;
  ClassWeights weights;
  std::vector<EpochLog> log;
};

/// Trains on `train` and monitors `heldout` with early stopping; class weights come from `train` alone.
FoldResult run_fold(std::span<const SampleRecord> train, std::span<const SampleRecord> heldout, const RunConfig& config,
                    int fold = 0, const FoldOptions& options = {});
/// Loads the records of `fold` and of its complement from `manifest`, then trains.
FoldResult run_fold(const DatasetManifest& manifest, const SplitAssignment& split, int fold, const RunConfig& config,
                    const FoldOptions& options = {});

/// Seed used for fold `fold` of a cross-validation with base seed `seed`.
std::uint64_t fold_seed(std::uint64_t seed, int fold);

struct CvReport {
  SplitAssignment split;
  std::vector<EvalReport> folds;
  std::vector<int> best_epochs;
  double mean_bacc = 0.0;
  EvalReport pooled;
  std::vector<EpochLog> log;
};

void to_json(nlohmann::json& j, const CvReport& r);

struct CvOptions {
  int folds = 5;
  std::int64_t split_iters = 10000;
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochLog&)> on_epoch;
  bool quiet = true;
};

/// Hill-climbing split followed by one run_fold per fold.
CvReport run_cv(const DatasetManifest& manifest, const RunConfig& config, const CvOptions& options = {});

/// One row of an accuracy-curve CSV.
struct CurvePoint {
  double alpha = 0.0;
  int epoch = 0;
  int fold = 0;
  double bacc = 0.0;
  double best_bacc = 0.0;
};

std::string curve_csv_header();
std::string curve_csv_row(const CurvePoint& p);

struct SweepResult {
  std::vector<double> alphas;
  std::vector<CvReport> reports;
  std::vector<CurvePoint> curves;
};

/// run_cv for every alpha with identical split and seeds.
SweepResult run_alpha_sweep(const DatasetManifest& manifest, const RunConfig& config, std::span<const double> alphas,
                            const CvOptions& options = {});

}  // namespace dfcn
