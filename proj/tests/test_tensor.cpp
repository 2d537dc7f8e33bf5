#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "qadam/errors.hpp"
#include "qadam/tensor.hpp"

using namespace qadam;

TEST(Tensor, RejectsNonFinite) {
  EXPECT_THROW(Tensor({1.0, std::numeric_limits<double>::quiet_NaN()}), DomainError);
  EXPECT_THROW(Tensor({std::numeric_limits<double>::infinity()}), DomainError);
  EXPECT_NO_THROW(Tensor({0.0, -1.0}));
}

TEST(Tensor, ElementwiseOps) {
  const Tensor a{1.0, -2.0, 3.0};
  const Tensor b{0.5, 4.0, -1.0};
  EXPECT_EQ(add(a, b), (Tensor{1.5, 2.0, 2.0}));
  EXPECT_EQ(sub(a, b), (Tensor{0.5, -6.0, 4.0}));
  EXPECT_EQ(mul(a, b), (Tensor{0.5, -8.0, -3.0}));
  EXPECT_EQ(square(a), (Tensor{1.0, 4.0, 9.0}));
  EXPECT_EQ(scale(a, 2.0), (Tensor{2.0, -4.0, 6.0}));
  EXPECT_EQ(axpy(a, 2.0, b), (Tensor{2.0, 6.0, 1.0}));
  EXPECT_EQ(negate(a), (Tensor{-1.0, 2.0, -3.0}));
  EXPECT_EQ(div(Tensor{1.0, 4.0}, Tensor{2.0, 8.0}), (Tensor{0.5, 0.5}));
  EXPECT_EQ(sqrt(Tensor{4.0, 9.0}), (Tensor{2.0, 3.0}));
}

TEST(Tensor, ShapeAndDomainErrors) {
  EXPECT_THROW(add(Tensor{1.0}, Tensor{1.0, 2.0}), ShapeError);
  EXPECT_THROW(dot(Tensor{1.0}, Tensor{}), ShapeError);
  EXPECT_THROW(max_abs_diff(Tensor{1.0}, Tensor{}), ShapeError);
  EXPECT_THROW(div(Tensor{1.0}, Tensor{0.0}), DomainError);
  EXPECT_THROW(div(Tensor{1.0}, 0.0), DomainError);
  EXPECT_THROW(sqrt(Tensor{0.0}), DomainError);
}

TEST(Tensor, Norms) {
  const Tensor x{3.0, -4.0};
  EXPECT_DOUBLE_EQ(norm(x, NormKind::l2), 5.0);
  EXPECT_DOUBLE_EQ(norm(x, NormKind::l1), 7.0);
  EXPECT_DOUBLE_EQ(norm(x, NormKind::linf), 4.0);
  EXPECT_EQ(norm(Tensor{}, NormKind::l2), 0.0);
  EXPECT_EQ(sum(x), -1.0);
  EXPECT_EQ(dot(x, x), 25.0);
}

TEST(Tensor, ReductionsAreLeftToRight) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  std::vector<double> v(1001);
  for (auto& e : v) e = u(rng);
  double s = 0.0;
  double sq = 0.0;
  for (double e : v) {
    s += e;
    sq += e * e;
  }
  const Tensor t(v);
  EXPECT_EQ(sum(t), s);
  EXPECT_EQ(dot(t, t), sq);
  EXPECT_EQ(norm(t, NormKind::l2), std::sqrt(sq));
}
