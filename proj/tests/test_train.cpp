#include "doctest.h"

#include <cmath>

#include "hccr/train.hpp"

using namespace hccr;

namespace {

// Tiny set: a few synthetic glyphs is enough for control-flow tests.
Dataset tiny_set(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  return synth_glyphs(classes, per_class, seed);
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
  const Tensor onehot({2, 3}, {1, 0, 0, 0, 0, 1});
  CHECK(cross_entropy(onehot, {0, 2}) == doctest::Approx(-std::log(1.0 - 1e-7)));
  const Tensor uniform({2, 4}, 0.25f);
  CHECK(cross_entropy(uniform, {1, 3}) == doctest::Approx(std::log(4.0)));
  // never infinite
  CHECK(std::isfinite(cross_entropy(onehot, {1, 0})));
  CHECK(cross_entropy(onehot, {1, 0}) == doctest::Approx(-std::log(1e-7)));
  CHECK_THROWS(cross_entropy(uniform, {1}));
}

TEST_CASE("loss adds the weighted L2 term") {
  Network net = Network::build(reference_config(Variant::B, 3), 1);
  const Tensor uniform({1, 3}, 1.0f / 3);
  CHECK(loss(uniform, {0}, net, 0.0) == doctest::Approx(std::log(3.0)));
  const double pen = l2_penalty(net);
  CHECK(pen > 0);
  CHECK(loss(uniform, {0}, net, 0.01) == doctest::Approx(std::log(3.0) + 0.01 * pen));

  for (auto& p : net.parameters()) {
    if (p.regularized) p.tensor->fill(0.0f);
  }
  CHECK(l2_penalty(net) == 0.0);
  CHECK(loss(uniform, {0}, net, 0.5) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("sgd step") {
  Network net = Network::build(reference_config(Variant::A, 2), 1);
  TrainConfig cfg;
  cfg.l2_lambda = 0;
  auto make_grads = [&](float value) {
    Gradients g;
    for (const auto& p : net.parameters()) {
      if (p.trainable) g.push_back({p.name, Tensor(p.tensor->shape(), value)});
    }
    return g;
  };

  SUBCASE("zero gradients leave parameters alone") {
    OptimizerState st = init_optimizer(net, cfg);
    const auto before = serialize_checkpoint(net);
    sgd_step(net, make_grads(0.0f), st, cfg);
    CHECK(serialize_checkpoint(net) == before);
  }
  SUBCASE("two momentum steps from w=1") {
    Tensor& w = net.classifier().bias;
    w.fill(1.0f);
    OptimizerState st = init_optimizer(net, cfg);
    CHECK(st.lr == doctest::Approx(0.1));
    const Gradients g = make_grads(1.0f);
    sgd_step(net, g, st, cfg);
    sgd_step(net, g, st, cfg);
    // v1 = -0.1, w1 = 0.9; v2 = 0.9 * -0.1 - 0.1 = -0.19, w2 = 0.71
    CHECK(w[0] == doctest::Approx(0.71).epsilon(1e-6));
  }
  SUBCASE("no momentum is plain gradient descent") {
    cfg.momentum = 0;
    Tensor& w = net.classifier().bias;
    w.fill(2.0f);
    OptimizerState st = init_optimizer(net, cfg);
    sgd_step(net, make_grads(0.5f), st, cfg);
    CHECK(w[0] == doctest::Approx(2.0 - 0.1 * 0.5));
    sgd_step(net, make_grads(0.5f), st, cfg);
    CHECK(w[0] == doctest::Approx(2.0 - 0.1));
  }
  SUBCASE("weight decay only touches regularized tensors") {
    cfg.momentum = 0;
    cfg.l2_lambda = 0.5;
    net.classifier().bias.fill(1.0f);
    net.classifier().weights.fill(1.0f);
    OptimizerState st = init_optimizer(net, cfg);
    sgd_step(net, make_grads(0.0f), st, cfg);
    CHECK(net.classifier().bias[0] == 1.0f);
    CHECK(net.classifier().weights[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  }
  SUBCASE("mismatched gradient list throws") {
    OptimizerState st = init_optimizer(net, cfg);
    Gradients g = make_grads(0.0f);
    g.pop_back();
    CHECK_THROWS(sgd_step(net, g, st, cfg));
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  OptimizerState st;
  st.lr = 0.1;
  CHECK(lr_schedule(st, 0.3, cfg) == doctest::Approx(0.01));
  st.best_train_accuracy = 0.92;
  CHECK(lr_schedule(st, 0.95, cfg) == doctest::Approx(0.01));
  CHECK(st.best_train_accuracy == doctest::Approx(0.95));
  CHECK(lr_schedule(st, 0.90, cfg) == doctest::Approx(0.001));
  CHECK(lr_schedule(st, 0.95, cfg) == doctest::Approx(0.0001));  // equal is not an improvement
  CHECK(st.epochs_completed == 4);
}

TEST_CASE("top-k accuracy") {
  // row 0: true 2 ranks 0; row 1: true 0 ranks 2; row 2: true 1 ranks 1
  const Tensor logits({3, 3}, {0.1f, 0.2f, 0.9f, 0.1f, 0.5f, 0.4f, 0.7f, 0.6f, 0.1f});
  const std::vector<std::size_t> labels{2, 0, 1};
  const auto acc = topk_accuracy(logits, labels, {1, 2, 3});
  CHECK(acc[0] == doctest::Approx(1.0 / 3));
  CHECK(acc[1] == doctest::Approx(2.0 / 3));
  CHECK(acc[2] == 1.0);

  const Tensor perfect({2, 2}, {5, 1, 0, 3});
  CHECK(topk_accuracy(perfect, {0, 1}, {1})[0] == 1.0);
  CHECK_THROWS_AS(topk_accuracy(perfect, {0, 1}, {0}), ConfigError);
  CHECK_THROWS_AS(topk_accuracy(perfect, {0, 1}, {3}), ConfigError);

  const std::vector<float> tied{1, 1, 1};
  CHECK(true_class_rank(tied, 0) == 0);
  CHECK(true_class_rank(tied, 2) == 2);
}

TEST_CASE("log line format") {
  EpochLog e{1, 0.1, 2.5, 0.25, 0.5};
  CHECK(format_log_line(e) == "epoch=1 lr=0.1 loss=2.500000 train_acc=0.250000 val_acc=0.500000");
}

TEST_CASE("train loop decays after epoch one and is deterministic") {
  const Dataset data = tiny_set(2, 4, 5);
  const DatasetSplit split = stratified_split(data, 0.25);
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.max_epochs = 2;
  cfg.seed = 3;

  Network a = Network::build(reference_config(Variant::C, 2), 1);
  Network b = Network::build(reference_config(Variant::C, 2), 1);
  std::size_t calls = 0;
  const TrainResult ra = train_loop(a, split.train, split.validation, cfg, [&](const EpochLog&) { ++calls; });
  const TrainResult rb = train_loop(b, split.train, split.validation, cfg);
  CHECK(calls == 2);
  REQUIRE(ra.log.size() == 2);
  CHECK(ra.log[0].lr == doctest::Approx(0.1));
  CHECK(ra.log[1].lr == doctest::Approx(0.01));
  CHECK(ra.log[0].loss == rb.log[0].loss);
  CHECK(ra.log[1].loss == rb.log[1].loss);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  CHECK(!ra.stopped_early);

  // the logged val accuracy is what evaluate() reports afterwards
  CHECK(evaluate(a, split.validation, {1}).accuracy[0] == doctest::Approx(ra.log[1].val_accuracy).epsilon(1e-12));
}

TEST_CASE("train loop early stop and validation") {
  const Dataset data = tiny_set(2, 2, 6);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 5;
  cfg.stop_at_val_accuracy = 0.0;
  Network net = Network::build(reference_config(Variant::A, 2), 1);
  const TrainResult r = train_loop(net, data, data, cfg);
  CHECK(r.log.size() == 1);
  CHECK(r.stopped_early);

  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.lr_decay_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(train_loop(net, Dataset{}, data, TrainConfig{}), DataError);
}

TEST_CASE("evaluate covers every class at k = K") {
  const Dataset data = tiny_set(3, 2, 8);
  const Network net = Network::build(reference_config(Variant::B, 3), 2);
  const Evaluation e = evaluate(net, data, {1, 2, 3});
  CHECK(e.accuracy[0] <= e.accuracy[1]);
  CHECK(e.accuracy[1] <= e.accuracy[2]);
  CHECK(e.accuracy[2] == 1.0);
  CHECK_THROWS_AS(evaluate(net, Dataset{}, {1}), DataError);
}

TEST_CASE("early stop waits for min_epochs") {
  const Dataset data = tiny_set(2, 2, 6);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 5;
  cfg.stop_at_val_accuracy = 0.0;
  cfg.min_epochs = 2;
  Network net = Network::build(reference_config(Variant::A, 2), 1);
  CHECK(train_loop(net, data, data, cfg).log.size() == 2);
  cfg.min_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("BN recalibration averages per-batch statistics") {
  const Dataset data = tiny_set(2, 2, 9);
  const std::vector<std::size_t> order{0, 1, 2, 3};
  const Network start = Network::build(reference_config(Variant::C, 2), 4);

  // momentum 0 stores one batch's own statistics
  auto one_batch = [&](std::size_t first) {
    Network n = start;
    for (ConvUnit& u : n.units()) u.bn.momentum = 0.0f;
    ForwardOptions o;
    o.mode = Mode::train;
    forward(n, stack_images(data, std::span<const std::size_t>(order).subspan(first, 2)), o);
    return n;
  };
  const Network a = one_batch(0);
  const Network b = one_batch(2);

  Network net = start;
  recalibrate_batchnorm(net, data, order, 5, 2);  // only two batches exist
  for (std::size_t u = 0; u < net.units().size(); u += 5) {
    const auto& bn = net.units()[u].bn;
    CHECK(bn.momentum == doctest::Approx(0.99));
    for (std::size_t c = 0; c < bn.channels(); c += 7) {
      CHECK(bn.moving_mean[c] ==
            doctest::Approx(0.5 * (a.units()[u].bn.moving_mean[c] + b.units()[u].bn.moving_mean[c])).epsilon(1e-4));
      CHECK(bn.moving_var[c] ==
            doctest::Approx(0.5 * (a.units()[u].bn.moving_var[c] + b.units()[u].bn.moving_var[c])).epsilon(1e-4));
    }
  }
  CHECK(net.units()[3].conv.kernel.data()[11] == start.units()[3].conv.kernel.data()[11]);
  CHECK(net.head().kernel.data()[0] == start.head().kernel.data()[0]);
}
