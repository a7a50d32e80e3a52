#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hccr/data.hpp"
#include "hccr/model.hpp"

namespace hccr {

struct TrainConfig {
  double lr_initial = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 40;
  double l2_lambda = 0.001;
  double lr_decay_factor = 10.0;
  std::uint64_t seed = 0;
  // Ends training after the first epoch whose validation top-1 reaches this.
  std::optional<double> stop_at_val_accuracy;
  std::size_t min_epochs = 1;  // early stop is not considered before this epoch
  std::size_t eval_batch_size = 64;
  // Before each validation pass, replace the BN moving statistics with the
  // average over this many training batches (0 keeps the running averages).
  std::size_t bn_recalibration_batches = 0;

  void validate() const;  // throws ConfigError
};

struct OptimizerState {
  std::vector<Tensor> velocity;  // one per trainable parameter
  double lr = 0.0;
  double best_train_accuracy = -1.0;
  std::size_t epochs_completed = 0;
};

OptimizerState init_optimizer(const Network& net, const TrainConfig& config);

// Probabilities are clipped to [1e-7, 1 - 1e-7] before the log.
double cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels);

// 0.5 * sum of squared regularized weights (conv kernels, head kernel,
// classifier weights).
double l2_penalty(const Network& net);

double loss(const Tensor& probs, const std::vector<std::size_t>& labels, const Network& net, double l2_lambda);

// v <- momentum * v - lr * (g + lambda * w)  (lambda only for regularized
// parameters), then w <- w + v.
void sgd_step(Network& net, const Gradients& grads, OptimizerState& state, const TrainConfig& config);

// Called once per finished epoch. After the first epoch the rate always
// drops by lr_decay_factor; later it drops whenever the epoch's training
// accuracy fails to strictly exceed the best seen so far.
double lr_schedule(OptimizerState& state, double epoch_train_accuracy, const TrainConfig& config);

// Rank of the true class among the logits (0 = top). Ties count against
// the true class only when the competitor has a lower index.
std::size_t true_class_rank(std::span<const float> logits, std::size_t label);

// Fraction of rows whose true class is within the top k, for each k.
std::vector<double> topk_accuracy(const Tensor& logits, const std::vector<std::size_t>& labels,
                                  const std::vector<std::size_t>& ks);

struct Evaluation {
  std::vector<std::size_t> ks;
  std::vector<double> accuracy;  // aligned with ks
};

// Inference-mode evaluation; zero_bias ignores the softmax bias.
Evaluation evaluate(const Network& net, const Dataset& data, const std::vector<std::size_t>& ks,
                    bool zero_bias = false, std::size_t batch_size = 64);

// Sets every BN moving mean/variance to the equal-weight average of the
// train-mode batch statistics over the given batches. Weights are untouched.
void recalibrate_batchnorm(Network& net, const Dataset& data, std::span<const std::size_t> order,
                           std::size_t batches, std::size_t batch_size);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate used during the epoch
  double loss = 0.0;      // mean batch loss, L2 term included
  double train_accuracy = 0.0;  // running train-mode top-1 over the epoch
  double val_accuracy = 0.0;
};

// "epoch=E lr=L loss=X train_acc=Y val_acc=Z"
std::string format_log_line(const EpochLog& entry);

struct TrainResult {
  std::vector<EpochLog> log;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Shuffles the training set every epoch with a generator seeded from
// config.seed. An empty validation set reports 0.
TrainResult train_loop(Network& net, const Dataset& train, const Dataset& validation, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

}  // namespace hccr
