#include "doctest.h"

#include "hccr/tensor.hpp"

using namespace hccr;

TEST_CASE("elementwise_mul") {
  const Tensor a({3}, {1, 2, 3});
  CHECK(elementwise_mul(a, Tensor({3}, {1, 1, 1})) == a);
  CHECK(elementwise_mul(a, Tensor({3}, {0, 0, 0})) == Tensor({3}, {0, 0, 0}));

  SUBCASE("scalar broadcast over leading axes") {
    const Tensor x({2, 2, 1}, {1, 2, 3, 4});
    CHECK(elementwise_mul(x, Tensor({1, 1, 1}, {2})) == Tensor({2, 2, 1}, {2, 4, 6, 8}));
  }
  SUBCASE("channel broadcast") {
    const Tensor x({2, 1, 2}, {1, 2, 3, 4});
    CHECK(elementwise_mul(x, Tensor({1, 1, 2}, {10, 100})) == Tensor({2, 1, 2}, {10, 200, 30, 400}));
  }
  SUBCASE("mismatched shapes throw") {
    CHECK_THROWS_AS(elementwise_mul(a, Tensor({2}, {1, 1})), ShapeError);
    CHECK_THROWS_AS(elementwise_mul(Tensor({2, 2}), Tensor({2, 1})), ShapeError);
  }
}

TEST_CASE("reduce_sum") {
  const Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(reduce_sum(m, {0, 1}) == Tensor({1}, {10}));
  CHECK(reduce_sum(Tensor({3, 3}), {0, 1})[0] == 0.0f);
  CHECK(reduce_sum(m, {0}) == Tensor({2}, {4, 6}));
  CHECK(reduce_sum(m, {1}) == Tensor({2}, {3, 7}));
  CHECK_THROWS_AS(reduce_sum(m, {2}), ShapeError);
  CHECK_THROWS_AS(reduce_sum(m, {0, 0}), ShapeError);
}

TEST_CASE("matvec computes x^T W") {
  CHECK(matvec(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {3, 7})) == Tensor({2}, {3, 7}));
  CHECK(matvec(Tensor({2, 1}, {1, 1}), Tensor({2}, {2, 5})) == Tensor({1}, {7}));
  CHECK(matvec(Tensor({2, 2}, {1, 0, 0, 2}), Tensor({2}, {1, 1})) == Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(matvec(Tensor({2, 2}), Tensor({3})), ShapeError);
}

TEST_CASE("tensor construction and reshape guards") {
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{1, 2, 3, 4, 5}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, std::vector<float>{1, 2, 3}), ShapeError);

  Tensor t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshape({4}), ShapeError);
  CHECK(t.cast<double>()[5] == 1.5);
}
