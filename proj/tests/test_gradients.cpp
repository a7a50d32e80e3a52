#include "doctest.h"

#include "gradient_checks.hpp"
#include "hccr/layers.hpp"
#include "support.hpp"

using namespace hccr;

TEST_CASE("every layer gradient matches central differences") {
  const auto checks = test::run_gradient_checks(20);
  CHECK(checks.size() == 16);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CAPTURE(c.worst_case);
    CHECK(c.trials == 20);
    CHECK(c.worst < test::kGradientTolerance);
  }
}

TEST_CASE("dropout applies exactly the mask it reports") {
  Rng rng(708);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape xs = {1 + rng.below(4), 1 + rng.below(16)};
    const TensorD x = test::random_tensor<double>(xs, rng);
    const DropoutLayer<double> layer{0.5, rng.next()};
    TensorD applied;
    const TensorD y = dropout_forward(layer, x, Mode::train, &applied);
    CHECK(applied == dropout_mask(layer, xs));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(x[i] * applied[i]));
  }
}
