#include "qann/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "qann/errors.hpp"

namespace qann {

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(hidden, "hidden");
  positive(hops, "hops");
  positive(batch_size, "batch_size");
  positive(checkpoint_every, "checkpoint_every");
  positive(max_epochs, "max_epochs");
  positive(threads, "threads");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(embed_init_stddev > 0.0)) throw ConfigError("embed_init_stddev must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

ad::Var loss(const ForwardResult& result, std::size_t gold_index) {
  return ad::scale(ad::pick(result.log_probs, gold_index), -1.0);
}

double cross_entropy(std::span<const double> scores, std::size_t gold_index) {
  if (gold_index >= scores.size()) throw DataError("gold index outside the candidate set");
  return ad::log_sum_exp(scores) - scores[gold_index];
}

// ---- ADAM ---------------------------------------------------------------

OptimizerState OptimizerState::for_params(const ModelParams& params, double lr) {
  OptimizerState state;
  state.first_moment = ModelParams::zeros(params.dims);
  state.second_moment = ModelParams::zeros(params.dims);
  state.lr = lr;
  return state;
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t step,
                 double lr, const AdamConfig& cfg) {
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
               const AdamConfig& cfg) {
  visit_params(grads, [](const std::string& name, const Tensor& g) {
    for (double v : g.data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in parameter " + name);
    }
  });
  ++state.step;
  std::vector<Tensor*> p;
  std::vector<const Tensor*> g;
  std::vector<Tensor*> m;
  std::vector<Tensor*> v;
  visit_params(params, [&](const std::string&, Tensor& t) { p.push_back(&t); });
  visit_params(grads, [&](const std::string&, const Tensor& t) { g.push_back(&t); });
  visit_params(state.first_moment, [&](const std::string&, Tensor& t) { m.push_back(&t); });
  visit_params(state.second_moment, [&](const std::string&, Tensor& t) { v.push_back(&t); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update(*p[i], *g[i], *m[i], *v[i], state.step, state.lr, cfg);
  }
}

// ---- schedule -----------------------------------------------------------

bool PlateauSchedule::on_checkpoint(double dev_accuracy, std::size_t epochs_completed) {
  const bool dropped = state_.last_checkpoint_accuracy &&
                       dev_accuracy < *state_.last_checkpoint_accuracy;
  state_.last_checkpoint_accuracy = dev_accuracy;
  if (dropped && epochs_completed >= 1) {
    state_.lr *= 0.5;
    ++state_.halvings;
    return true;
  }
  return false;
}

bool PlateauSchedule::on_epoch_end(double dev_accuracy) {
  const bool dropped = state_.last_epoch_accuracy && dev_accuracy < *state_.last_epoch_accuracy;
  state_.last_epoch_accuracy = dev_accuracy;
  return dropped;
}

// ---- evaluation ---------------------------------------------------------

namespace {

void evaluate_range(const ModelParams& params, std::span<const Example> examples,
                    std::size_t hops, const EvalOptions& options, std::size_t begin,
                    std::size_t end, EvalResult& out) {
  for (std::size_t i = begin; i < end; ++i) {
    ad::Tape tape;
    const BoundParams bound = bind(tape, params);
    ForwardOptions fwd;
    fwd.hops = hops;
    fwd.ablate_query_gate = options.ablate_query_gate;
    const ForwardResult result = forward_pass(tape, bound, params.dims, examples[i], fwd);
    out.predictions[i] = result.prediction;
    out.gold_probability[i] = result.probs[examples[i].gold_index()];
  }
}

}  // namespace

EvalResult evaluate(const ModelParams& params, std::span<const Example> examples,
                    std::size_t hops, const EvalOptions& options) {
  if (hops < 1) throw ConfigError("evaluation hops must be at least 1");
  EvalResult result;
  result.predictions.assign(examples.size(), 0);
  result.gold_probability.assign(examples.size(), 0.0);
  if (examples.empty()) return result;

  const std::size_t workers = std::min(std::max<std::size_t>(options.threads, 1), examples.size());
  if (workers == 1) {
    evaluate_range(params, examples, hops, options, 0, examples.size(), result);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (examples.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(examples.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end] {
        evaluate_range(params, examples, hops, options, begin, end, result);
      });
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (result.predictions[i] == examples[i].gold_index()) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return result;
}

// ---- training -----------------------------------------------------------

double batch_gradient(const ModelParams& params, std::span<const Example* const> batch,
                      std::size_t hops, double dropout, std::span<Rng> rngs,
                      ModelParams& grads) {
  if (batch.empty()) throw ConfigError("empty batch");
  grads = ModelParams::zeros(params.dims);
  std::vector<Tensor*> slots;
  visit_params(grads, [&](const std::string&, Tensor& t) { slots.push_back(&t); });

  double total_loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& example = *batch[i];
    ad::Tape tape;
    const BoundParams bound = bind(tape, params);
    ForwardOptions fwd;
    fwd.hops = hops;
    fwd.mode = Mode::kTrain;
    fwd.dropout = dropout;
    fwd.rng = &rngs[i];
    const ForwardResult result = forward_pass(tape, bound, params.dims, example, fwd);
    ad::Var l = loss(result, example.gold_index());
    total_loss += l.value().item();
    tape.backward(l);

    std::size_t k = 0;
    visit_params(bound, [&](const std::string&, const ad::Var& v) {
      const Tensor g = tape.grad(v);
      Tensor& acc = *slots[k++];
      for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
    });
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (Tensor* t : slots) {
    for (double& v : t->data()) v *= inv;
  }
  return total_loss * inv;
}

namespace {

Rng derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

}  // namespace

std::vector<Example> dev_examples(const TrainConfig& config, const Dataset& dev) {
  if (config.dev_subsample == 0 || config.dev_subsample >= dev.size()) return dev.examples;
  std::vector<std::size_t> order(dev.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derived_rng(config.seed, 0xdef, 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(config.dev_subsample);
  std::sort(order.begin(), order.end());
  std::vector<Example> out;
  for (std::size_t i : order) out.push_back(dev.examples[i]);
  return out;
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& dev_set,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  if (dev_set.size() == 0 && !hooks.dev_evaluator) throw ConfigError("dev set is empty");
  if (!train_set.vocab) throw ConfigError("training set has no vocabulary");

  const ModelDims dims{train_set.vocab->size(), config.hidden, config.identity_eo};
  const std::vector<Example> dev = dev_examples(config, dev_set);
  auto eval_dev = [&](const ModelParams& params) {
    if (hooks.dev_evaluator) return hooks.dev_evaluator(params);
    EvalOptions opts;
    opts.threads = config.threads;
    return evaluate(params, dev, config.hops, opts).accuracy;
  };

  TrainResult result;
  Checkpoint& last = result.last;
  Checkpoint& best = result.best;
  bool have_best = false;
  if (hooks.resume_last) {
    last = *hooks.resume_last;
    // The epoch budget and worker count may change between runs.
    TrainConfig written = last.config;
    written.max_epochs = config.max_epochs;
    written.threads = config.threads;
    if (!(written == config)) throw ConfigError("resume checkpoint was written with a different config");
    last.config = config;
    if (!(last.params.dims == dims)) throw ConfigError("resume checkpoint dimensions do not match the data");
    if (hooks.resume_best) {
      best = *hooks.resume_best;
      best.config = config;
      have_best = true;
    }
    if (last.stopped) {
      if (!have_best) best = last;
      return result;
    }
  } else {
    Rng init_rng(config.seed);
    InitOptions init;
    init.embed_stddev = config.embed_init_stddev;
    last.config = config;
    last.vocab = train_set.vocab->tokens();
    last.params = init_params(dims, init_rng, init);
    last.optimizer = OptimizerState::for_params(last.params, config.lr0);
    last.schedule.lr = config.lr0;
  }

  PlateauSchedule schedule(last.schedule);
  ModelParams& params = last.params;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t step = last.step;

  auto snapshot = [&](double accuracy, std::size_t epochs_completed) {
    Checkpoint c = last;
    c.schedule = schedule.state();
    c.optimizer.lr = schedule.lr();
    c.dev_accuracy = accuracy;
    c.step = step;
    c.epoch = epochs_completed;
    return c;
  };

  auto record = [&](double accuracy, std::size_t epochs_completed) {
    schedule.on_checkpoint(accuracy, epochs_completed);
    MetricsRow row;
    row.step = step;
    row.epoch = epochs_completed;
    row.lr = schedule.lr();
    row.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    row.dev_accuracy = accuracy;
    loss_sum = 0.0;
    loss_count = 0;
    result.metrics.push_back(row);
    if (hooks.on_metrics) hooks.on_metrics(row);
    if (!have_best || accuracy > best.dev_accuracy) {
      best = snapshot(accuracy, epochs_completed);
      have_best = true;
    }
  };

  std::vector<std::size_t> order(train_set.size());
  std::vector<const Example*> batch;
  std::vector<Rng> rngs;
  ModelParams grads;
  for (std::size_t epoch = last.epoch; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = derived_rng(config.seed, epoch, 0x5eed);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::optional<double> accuracy_at_step;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      rngs.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(&train_set.examples[order[i]]);
        rngs.push_back(derived_rng(config.seed, epoch + 1, i));
      }
      loss_sum += batch_gradient(params, batch, config.hops, config.dropout, rngs, grads);
      ++loss_count;
      last.optimizer.lr = schedule.lr();
      adam_step(params, grads, last.optimizer);
      ++step;
      accuracy_at_step.reset();
      if (step % config.checkpoint_every == 0) {
        accuracy_at_step = eval_dev(params);
        record(*accuracy_at_step, end == order.size() ? epoch + 1 : epoch);
      }
    }

    const std::size_t epochs_completed = epoch + 1;
    double epoch_accuracy;
    if (accuracy_at_step) {
      epoch_accuracy = *accuracy_at_step;
    } else {
      epoch_accuracy = eval_dev(params);
      record(epoch_accuracy, epochs_completed);
    }
    const bool stop = schedule.on_epoch_end(epoch_accuracy);
    last = snapshot(epoch_accuracy, epochs_completed);
    last.stopped = stop;
    if (hooks.on_epoch_end) hooks.on_epoch_end(last, best);
    if (stop) break;
  }
  return result;
}

}  // namespace qann
