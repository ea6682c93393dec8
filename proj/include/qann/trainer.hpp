#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qann/data.hpp"
#include "qann/model.hpp"
#include "qann/qa_hop.hpp"

namespace qann {

struct TrainConfig {
  std::size_t hidden = 256;
  std::size_t hops = 4;  // T used during training
  double lr0 = 0.001;
  std::size_t batch_size = 32;
  std::size_t checkpoint_every = 1000;  // steps
  double dropout = 0.2;
  std::uint64_t seed = 1;
  std::size_t max_epochs = 10;
  double embed_init_stddev = 0.1;
  bool identity_eo = false;
  std::size_t dev_subsample = 0;  // 0 = full dev set
  std::size_t threads = 1;        // evaluation workers

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// -log p(gold) via log-sum-exp over the candidate scores.
ad::Var loss(const ForwardResult& result, std::size_t gold_index);
/// Same quantity on plain scores.
double cross_entropy(std::span<const double> scores, std::size_t gold_index);

// ---- ADAM ---------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::size_t step = 0;
  double lr = 0.001;

  static OptimizerState for_params(const ModelParams& params, double lr);
};

/// One bias-corrected ADAM update of a single tensor; `step` is the 1-based
/// index of this update.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t step,
                 double lr, const AdamConfig& cfg = {});

/// ADAM over every model tensor. Throws NumericError naming the parameter on
/// a non-finite gradient, before touching any parameter.
void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
               const AdamConfig& cfg = {});

// ---- learning-rate schedule ---------------------------------------------

struct ScheduleState {
  double lr = 0.001;
  std::optional<double> last_checkpoint_accuracy;
  std::optional<double> last_epoch_accuracy;
  std::size_t halvings = 0;
  bool operator==(const ScheduleState&) const = default;
};

/// Halve the learning rate whenever dev accuracy drops between consecutive
/// checkpoints once the first full epoch has passed; stop when it drops
/// between consecutive epochs.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(double lr0) { state_.lr = lr0; }
  explicit PlateauSchedule(ScheduleState state) : state_(std::move(state)) {}

  /// Returns true if the learning rate was halved.
  bool on_checkpoint(double dev_accuracy, std::size_t epochs_completed);
  /// Returns true if training should stop.
  bool on_epoch_end(double dev_accuracy);

  double lr() const { return state_.lr; }
  const ScheduleState& state() const { return state_; }

 private:
  ScheduleState state_;
};

// ---- checkpoints --------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  std::vector<std::string> vocab;
  ModelParams params;
  OptimizerState optimizer;
  ScheduleState schedule;
  double dev_accuracy = 0.0;
  std::size_t step = 0;
  std::size_t epoch = 0;  // completed epochs
  bool stopped = false;
};

// ---- evaluation and training --------------------------------------------

struct EvalOptions {
  bool ablate_query_gate = false;
  std::size_t threads = 1;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;  // candidate index per example
  std::vector<double> gold_probability;
};

EvalResult evaluate(const ModelParams& params, std::span<const Example> examples,
                    std::size_t hops, const EvalOptions& options = {});

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;  // completed epochs at evaluation time
  double lr = 0.0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

using DevEvaluator = std::function<double(const ModelParams&)>;

struct TrainHooks {
  // Replaces dev-set evaluation (schedule tests).
  DevEvaluator dev_evaluator;
  std::function<void(const MetricsRow&)> on_metrics;
  // Called after every epoch with the latest state (resume point) and the
  // best state so far.
  std::function<void(const Checkpoint& last, const Checkpoint& best)> on_epoch_end;
  const Checkpoint* resume_last = nullptr;
  const Checkpoint* resume_best = nullptr;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<MetricsRow> metrics;
};

/// Mean cross-entropy and its gradient over a batch, one tape per example.
double batch_gradient(const ModelParams& params, std::span<const Example* const> batch,
                      std::size_t hops, double dropout, std::span<Rng> rngs,
                      ModelParams& grads);

/// The dev examples training evaluates on: all of them, or a seeded
/// subsample of config.dev_subsample in file order.
std::vector<Example> dev_examples(const TrainConfig& config, const Dataset& dev);

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& dev_set,
                  const TrainHooks& hooks = {});

}  // namespace qann
