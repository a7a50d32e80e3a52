#pragma once

#include <cmath>
#include <functional>

#include "hccr/random.hpp"
#include "hccr/tensor.hpp"

namespace hccr::test {

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  BasicTensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

// Values bounded away from zero so ReLU kinks stay out of reach of the
// finite-difference step.
inline TensorD away_from_zero(const Shape& shape, Rng& rng) {
  TensorD t(shape);
  for (double& v : t.data()) {
    const double mag = 0.05 + rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Central differences of a scalar function w.r.t. every element of `x`.
inline TensorD numeric_gradient(TensorD& x, const std::function<double()>& f, double h = 1e-5) {
  TensorD g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// ||a - b|| / max(||a|| + ||b||, tiny)
inline double relative_error(const TensorD& a, const TensorD& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom < 1e-300 ? 0.0 : std::sqrt(diff) / denom;
}

inline double dot(const TensorD& a, const TensorD& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace hccr::test
