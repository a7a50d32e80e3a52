#include "hccr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "hccr/random.hpp"

namespace hccr {

void TrainConfig::validate() const {
  if (!(lr_initial > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("epoch count must be positive");
  if (!(l2_lambda >= 0.0)) throw ConfigError("L2 multiplier must be non-negative");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("learning-rate decay factor must be positive");
  if (min_epochs == 0) throw ConfigError("min_epochs must be at least 1");
  if (eval_batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  if (stop_at_val_accuracy && !(*stop_at_val_accuracy >= 0.0 && *stop_at_val_accuracy <= 1.0)) {
    throw ConfigError("early-stop accuracy must be in [0, 1]");
  }
}

OptimizerState init_optimizer(const Network& net, const TrainConfig& config) {
  OptimizerState state;
  for (const ConstParamRef& p : net.parameters()) {
    if (p.trainable) state.velocity.emplace_back(p.tensor->shape());
  }
  state.lr = config.lr_initial;
  return state;
}

namespace {

void check_labels(const Tensor& probs, const std::vector<std::size_t>& labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("probabilities " + shape_string(probs.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= probs.dim(1)) throw DataError("label " + std::to_string(y) + " out of range");
  }
}

}  // namespace

double cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels) {
  check_labels(probs, labels);
  const std::size_t k = probs.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const double p = std::clamp(static_cast<double>(probs[n * k + labels[n]]), 1e-7, 1.0 - 1e-7);
    total -= std::log(p);
  }
  return total / static_cast<double>(labels.size());
}

double l2_penalty(const Network& net) {
  double sum = 0.0;
  for (const ConstParamRef& p : net.parameters()) {
    if (!p.regularized) continue;
    for (float w : p.tensor->data()) sum += static_cast<double>(w) * w;
  }
  return 0.5 * sum;
}

double loss(const Tensor& probs, const std::vector<std::size_t>& labels, const Network& net, double l2_lambda) {
  const double data = cross_entropy(probs, labels);
  return l2_lambda > 0.0 ? data + l2_lambda * l2_penalty(net) : data;
}

void sgd_step(Network& net, const Gradients& grads, OptimizerState& state, const TrainConfig& config) {
  std::vector<ParamRef> params;
  for (ParamRef& p : net.parameters()) {
    if (p.trainable) params.push_back(p);
  }
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients and " +
                     std::to_string(state.velocity.size()) + " velocities for " + std::to_string(params.size()) +
                     " trainable parameters");
  }
  const auto momentum = static_cast<float>(config.momentum);
  const auto lr = static_cast<float>(state.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].tensor;
    const Tensor& g = grads[i].value;
    Tensor& v = state.velocity[i];
    if (g.shape() != w.shape() || v.shape() != w.shape()) {
      throw ShapeError("sgd_step: gradient " + shape_string(g.shape()) + " for parameter '" + params[i].name +
                       "' of shape " + shape_string(w.shape()));
    }
    const float lambda = params[i].regularized ? static_cast<float>(config.l2_lambda) : 0.0f;
    float* pw = w.raw();
    float* pv = v.raw();
    const float* pg = g.raw();
    for (std::size_t j = 0; j < w.size(); ++j) {
      pv[j] = momentum * pv[j] - lr * (pg[j] + lambda * pw[j]);
      pw[j] += pv[j];
    }
  }
}

double lr_schedule(OptimizerState& state, double epoch_train_accuracy, const TrainConfig& config) {
  ++state.epochs_completed;
  if (state.epochs_completed == 1) {
    state.lr /= config.lr_decay_factor;
    state.best_train_accuracy = epoch_train_accuracy;
  } else if (epoch_train_accuracy > state.best_train_accuracy) {
    state.best_train_accuracy = epoch_train_accuracy;
  } else {
    state.lr /= config.lr_decay_factor;
  }
  return state.lr;
}

std::size_t true_class_rank(std::span<const float> logits, std::size_t label) {
  if (label >= logits.size()) throw DataError("label " + std::to_string(label) + " out of range");
  const float target = logits[label];
  std::size_t rank = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (logits[k] > target || (logits[k] == target && k < label)) ++rank;
  }
  return rank;
}

std::vector<double> topk_accuracy(const Tensor& logits, const std::vector<std::size_t>& labels,
                                  const std::vector<std::size_t>& ks) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("logits " + shape_string(logits.shape()) + " do not match " + std::to_string(labels.size()) +
                     " labels");
  }
  if (labels.empty()) throw DataError("top-k accuracy of an empty set");
  const std::size_t classes = logits.dim(1);
  for (std::size_t k : ks) {
    if (k == 0 || k > classes) throw ConfigError("k=" + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  }
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const std::size_t rank = true_class_rank(logits.data().subspan(n * classes, classes), labels[n]);
    for (std::size_t i = 0; i < ks.size(); ++i) hits[i] += rank < ks[i];
  }
  std::vector<double> acc(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) acc[i] = static_cast<double>(hits[i]) / static_cast<double>(labels.size());
  return acc;
}

Evaluation evaluate(const Network& net, const Dataset& data, const std::vector<std::size_t>& ks, bool zero_bias,
                    std::size_t batch_size) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const std::size_t classes = net.classifier().classes();
  Tensor logits(Shape{data.size(), classes});
  std::vector<std::size_t> index(data.size());
  std::iota(index.begin(), index.end(), 0);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    std::span<const std::size_t> sel(index.data() + start, count);
    ForwardResult fwd = forward(net, stack_images(data, sel), zero_bias);
    std::copy(fwd.logits.raw(), fwd.logits.raw() + count * classes, logits.raw() + start * classes);
  }
  Evaluation eval;
  eval.ks = ks;
  eval.accuracy = topk_accuracy(logits, gather_labels(data, index), ks);
  return eval;
}

std::string format_log_line(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu lr=%.6g loss=%.6f train_acc=%.6f val_acc=%.6f", e.epoch, e.lr, e.loss,
                e.train_accuracy, e.val_accuracy);
  return buf;
}

void recalibrate_batchnorm(Network& net, const Dataset& data, std::span<const std::size_t> order,
                           std::size_t batches, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<float> saved;
  for (const ConvUnit& u : net.units()) saved.push_back(u.bn.momentum);
  ForwardOptions options;
  options.mode = Mode::train;
  std::size_t done = 0;
  for (std::size_t start = 0; done < batches && start < order.size(); start += batch_size, ++done) {
    // momentum j/(j+1) keeps a running mean in which every batch weighs the same
    for (ConvUnit& u : net.units()) u.bn.momentum = static_cast<float>(done) / static_cast<float>(done + 1);
    const std::size_t count = std::min(batch_size, order.size() - start);
    forward(net, stack_images(data, order.subspan(start, count)), options);
  }
  for (std::size_t i = 0; i < saved.size(); ++i) net.units()[i].bn.momentum = saved[i];
}

TrainResult train_loop(Network& net, const Dataset& train, const Dataset& validation, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("training set is empty");
  const std::size_t classes = net.classifier().classes();
  for (const Sample& s : train.samples) {
    if (s.label >= classes) throw DataError("training label " + std::to_string(s.label) + " exceeds the classifier");
  }

  OptimizerState state = init_optimizer(net, config);
  Rng shuffle_rng(mix_seed(config.seed, 0x5348));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = state.lr;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> sel(order.data() + start, count);
      const std::vector<std::size_t> labels = gather_labels(train, sel);

      ForwardOptions options;
      options.mode = Mode::train;
      options.keep_cache = true;
      options.dropout_seed = mix_seed(config.seed, 0x100000000ULL + step++);
      ForwardResult fwd = forward(net, stack_images(train, sel), options);

      loss_sum += loss(fwd.probs, labels, net, config.l2_lambda);
      ++batches;
      const std::vector<double> hit = topk_accuracy(fwd.logits, labels, {1});
      correct += static_cast<std::size_t>(std::llround(hit[0] * static_cast<double>(count)));

      const Tensor grad_logits = softmax_cross_entropy_grad(fwd.probs, labels);
      fwd.probs = Tensor();
      const Gradients grads = backward(net, fwd.cache, grad_logits);
      fwd.cache = ForwardCache();
      sgd_step(net, grads, state, config);
    }
    entry.loss = loss_sum / static_cast<double>(batches);
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (config.bn_recalibration_batches > 0) {
      recalibrate_batchnorm(net, train, order, config.bn_recalibration_batches, config.batch_size);
    }
    entry.val_accuracy =
        validation.empty() ? 0.0 : evaluate(net, validation, {1}, false, config.eval_batch_size).accuracy[0];
    lr_schedule(state, entry.train_accuracy, config);

    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (config.stop_at_val_accuracy && !validation.empty() && epoch >= config.min_epochs &&
        entry.val_accuracy >= *config.stop_at_val_accuracy) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  return result;
}

}  // namespace hccr
