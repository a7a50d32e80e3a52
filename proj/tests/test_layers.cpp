#include "doctest.h"

#include <cmath>

#include "hccr/layers.hpp"
#include "support.hpp"

using namespace hccr;
using hccr::test::random_tensor;

TEST_CASE("conv2d forward examples") {
  Conv2dLayer<float> ones(Tensor({3, 3, 1, 1}, 1.0f));
  const Tensor y = conv2d_forward(ones, Tensor({1, 3, 3, 1}, 1.0f));
  CHECK(y == Tensor({1, 3, 3, 1}, {4, 6, 4, 6, 9, 6, 4, 6, 4}));

  Rng rng(3);
  const Tensor x = random_tensor<float>({2, 5, 4, 3}, rng);
  const Tensor zero = conv2d_forward(Conv2dLayer<float>(Tensor({3, 3, 3, 2})), x);
  for (float v : zero.data()) CHECK(v == 0.0f);

  // only the centre tap sees a 1x1 input
  Tensor k = random_tensor<float>({3, 3, 1, 1}, rng);
  k[4] = 2.0f;
  CHECK(conv2d_forward(Conv2dLayer<float>(k), Tensor({1, 1, 1, 1}, {5}))[0] == doctest::Approx(10.0));
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(4);
  const TensorD x = random_tensor<double>({2, 4, 5, 3}, rng);
  const TensorD k = random_tensor<double>({3, 3, 3, 2}, rng);
  const TensorD y = conv2d_forward(Conv2dLayer<double>(k), x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t m = 0; m < 2; ++m) {
          double s = 0;
          for (int r = 0; r < 3; ++r)
            for (int q = 0; q < 3; ++q) {
              const int ii = static_cast<int>(i) + r - 1, jj = static_cast<int>(j) + q - 1;
              if (ii < 0 || jj < 0 || ii >= 4 || jj >= 5) continue;
              for (std::size_t c = 0; c < 3; ++c)
                s += x[((n * 4 + ii) * 5 + jj) * 3 + c] * k[((r * 3 + q) * 3 + c) * 2 + m];
            }
          CHECK(y[((n * 4 + i) * 5 + j) * 2 + m] == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("conv2d backward special cases") {
  Conv2dLayer<double> conv(TensorD({3, 3, 2, 3}, 0.5));
  Rng rng(5);
  const TensorD x = random_tensor<double>({1, 4, 4, 2}, rng);
  const ConvGradients<double> g = conv2d_backward(conv, x, TensorD({1, 4, 4, 3}));
  for (double v : g.grad_x.data()) CHECK(v == 0.0);
  for (double v : g.grad_kernel.data()) CHECK(v == 0.0);

  Conv2dLayer<double> centre(TensorD({3, 3, 1, 1}));
  centre.kernel[4] = 1.0;
  const ConvGradients<double> s = conv2d_backward(centre, TensorD({1, 1, 1, 1}, {3.0}), TensorD({1, 1, 1, 1}, {-2.0}));
  CHECK(s.grad_kernel[4] == doctest::Approx(-6.0));

  CHECK_THROWS_AS(conv2d_forward(conv, TensorD({1, 4, 4, 3})), ShapeError);
}

TEST_CASE("batch norm forward") {
  SUBCASE("identity in infer mode") {
    BatchNormLayer<double> bn(2, 0.0, 0.99);
    Rng rng(6);
    const TensorD x = random_tensor<double>({2, 3, 3, 2}, rng);
    const TensorD y = batchnorm_infer(bn, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
  }
  SUBCASE("gamma zero gives beta") {
    BatchNormLayer<float> bn(1, 1e-3f, 0.99f);
    bn.gamma[0] = 0.0f;
    bn.beta[0] = 0.7f;
    const Tensor y = batchnorm_infer(bn, Tensor({1, 2, 2, 1}, {1, -4, 9, 2}));
    for (float v : y.data()) CHECK(v == doctest::Approx(0.7));
  }
  SUBCASE("train batch {1,3}") {
    BatchNormLayer<double> bn(1, 1e-3, 0.99);
    const TensorD y = batchnorm_forward(bn, TensorD({2, 1, 1, 1}, {1, 3}), Mode::train);
    const double scale = 1.0 / std::sqrt(1.0 + 1e-3);
    CHECK(y[0] == doctest::Approx(-scale));
    CHECK(y[1] == doctest::Approx(scale));
    // moving stats: biased mean 2, Bessel variance 2
    CHECK(bn.moving_mean[0] == doctest::Approx(0.99 * 0 + 0.01 * 2));
    CHECK(bn.moving_var[0] == doctest::Approx(0.99 * 1 + 0.01 * 2));
  }
  SUBCASE("degenerate batch") {
    BatchNormLayer<double> bn(1, 1e-3, 0.99);
    CHECK_THROWS_AS(batchnorm_forward(bn, TensorD({1, 1, 1, 1}, {1}), Mode::train), ConfigError);
    CHECK_THROWS_AS(batchnorm_forward(bn, TensorD({1, 2, 2, 3}), Mode::infer), ShapeError);
  }
}

TEST_CASE("batch norm backward identities") {
  BatchNormLayer<double> bn(3, 1e-3, 0.99);
  Rng rng(7);
  BatchNormCache<double> cache;
  batchnorm_forward(bn, random_tensor<double>({2, 3, 2, 3}, rng), Mode::train, &cache);
  const BatchNormGradients<double> zero = batchnorm_backward(bn, cache, TensorD({2, 3, 2, 3}));
  for (double v : zero.grad_x.data()) CHECK(v == 0.0);
  for (double v : zero.grad_gamma.data()) CHECK(v == 0.0);

  const TensorD g = random_tensor<double>({2, 3, 2, 3}, rng);
  const BatchNormGradients<double> r = batchnorm_backward(bn, cache, g);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t i = c; i < g.size(); i += 3) s += g[i];
    CHECK(r.grad_beta[c] == doctest::Approx(s));
  }
}

TEST_CASE("relu") {
  CHECK(relu(Tensor({3}, {-1, 0, 2})) == Tensor({3}, {0, 0, 2}));
  const Tensor pos({3}, {0.5f, 1, 7});
  CHECK(relu(pos) == pos);
  CHECK(relu_backward(Tensor({2}, {-1, 2}), Tensor({2}, {5, 5})) == Tensor({2}, {0, 5}));
}

TEST_CASE("average pooling") {
  const Tensor c = avgpool_forward(Tensor({1, 7, 5, 2}, 3.25f));
  CHECK(c.shape() == Shape{1, 4, 3, 2});
  for (float v : c.data()) CHECK(v == doctest::Approx(3.25));

  CHECK(avgpool_forward(Tensor({1, 96, 96, 1})).shape() == Shape{1, 48, 48, 1});
  CHECK(avgpool_forward(Tensor({1, 12, 12, 1})).shape() == Shape{1, 6, 6, 1});
  CHECK(avgpool_forward(Tensor({1, 2, 2, 1}, {1, 2, 3, 4}))[0] == doctest::Approx(2.5));
  CHECK(AvgPoolLayer::output_extent(1) == 1);
  CHECK(AvgPoolLayer::output_extent(5) == 3);
}

TEST_CASE("global pooling heads") {
  const Tensor f({1, 2, 2, 1}, {1, 2, 3, 4});
  CHECK(gap_forward(f)[0] == doctest::Approx(2.5));
  const Tensor g = gap_forward(Tensor({1, 6, 6, 448}, 1.0f));
  CHECK(g.size() == 448);
  for (float v : g.data()) CHECK(v == doctest::Approx(1.0));
  CHECK(gap_forward(Tensor({1, 3, 3, 2}))[1] == 0.0f);

  auto gwoap = PoolingHead<float>::make_gwoap(1);
  CHECK(gwoap_forward(gwoap, f)[0] == doctest::Approx(10));
  gwoap.kernel[0] = 2.0f;
  CHECK(gwoap_forward(gwoap, f)[0] == doctest::Approx(20));
  gwoap.kernel[0] = 0.0f;
  CHECK(gwoap_forward(gwoap, f)[0] == 0.0f);

  auto gwap = PoolingHead<float>::make_gwap(2, 2, 1);
  CHECK(gwap_forward(gwap, f)[0] == doctest::Approx(10));
  gwap.kernel.fill(0.0f);
  CHECK(gwap_forward(gwap, f)[0] == 0.0f);
  CHECK(pooling_forward(PoolingHead<float>::make_gap(), f)[0] == doctest::Approx(2.5));
}

TEST_CASE("weighted heads reduce to GAP with kernel 1/(HW)") {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), c = 1 + rng.below(5);
    const TensorD f = random_tensor<double>({2, h, w, c}, rng);
    const double inv = 1.0 / static_cast<double>(h * w);
    const TensorD a = gap_forward(f);
    const TensorD b = gwoap_forward(PoolingHead<double>::make_gwoap(c, inv), f);
    const TensorD d = gwap_forward(PoolingHead<double>::make_gwap(h, w, c, inv), f);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
      CHECK(std::abs(a[i] - d[i]) < 1e-12);
    }
  }
}

TEST_CASE("pooling backward closed forms") {
  Rng rng(9);
  const TensorD f = random_tensor<double>({1, 3, 2, 2}, rng);
  const TensorD go({1, 2}, {0.6, -1.2});
  const PoolingGradients<double> gap = pooling_backward(PoolingHead<double>::make_gap(), f, go);
  for (std::size_t i = 0; i < gap.grad_features.size(); ++i) CHECK(gap.grad_features[i] == doctest::Approx(go[i % 2] / 6));

  const PoolingGradients<double> wo = pooling_backward(PoolingHead<double>::make_gwoap(2), f, go);
  for (std::size_t m = 0; m < 2; ++m) {
    double s = 0;
    for (std::size_t i = m; i < f.size(); i += 2) s += f[i];
    CHECK(wo.grad_kernel[m] == doctest::Approx(go[m] * s));
  }
}

TEST_CASE("dense softmax") {
  DenseSoftmaxLayer<float> layer{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  const DenseOutput<float> out = dense_softmax_forward(layer, Tensor({2}, {0, 0}));
  CHECK(out.probs[0] == doctest::Approx(0.5));
  CHECK(out.probs[1] == doctest::Approx(0.5));

  const Tensor p = softmax(Tensor({2}, {0.0f, std::log(3.0f)}));
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));

  Rng rng(10);
  DenseSoftmaxLayer<float> big{random_tensor<float>({5, 7}, rng), random_tensor<float>({7}, rng)};
  const DenseOutput<float> o = dense_softmax_forward(big, random_tensor<float>({3, 5}, rng, 10.0));
  for (std::size_t n = 0; n < 3; ++n) {
    double s = 0;
    for (std::size_t k = 0; k < 7; ++k) s += o.probs[n * 7 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  // huge logits stay finite
  const Tensor s = softmax(Tensor({3}, {1000.0f, 0.0f, -1000.0f}));
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(s[2]));
}

TEST_CASE("dropout") {
  Rng rng(11);
  const Tensor x = random_tensor<float>({2, 8}, rng);
  DropoutLayer<float> d{0.5f, 42};
  CHECK(dropout_forward(d, x, Mode::infer) == x);
  CHECK(dropout_forward(DropoutLayer<float>{0.0f, 42}, x, Mode::train) == x);

  Tensor m1, m2;
  dropout_forward(d, x, Mode::train, &m1);
  dropout_forward(d, x, Mode::train, &m2);
  CHECK(m1 == m2);
  for (float v : m1.data()) CHECK((v == 0.0f || v == 2.0f));

  // E[output] = input over many seeds
  const Tensor in({4}, {1.0f, -2.0f, 0.5f, 3.0f});
  std::vector<double> mean(4, 0.0);
  constexpr int kSeeds = 10000;
  for (int s = 0; s < kSeeds; ++s) {
    const Tensor y = dropout_forward(DropoutLayer<float>{0.5f, static_cast<std::uint64_t>(s)}, in, Mode::train);
    for (std::size_t i = 0; i < 4; ++i) mean[i] += y[i];
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(mean[i] / kSeeds == doctest::Approx(in[i]).epsilon(0.02));
}
