#include <doctest.h>

#include <cmath>
#include <limits>

#include "scope/core/error.hpp"
#include "scope/core/matrix.hpp"
#include "scope/core/numeric.hpp"
#include "scope/core/optimizer.hpp"
#include "scope/core/rng.hpp"
#include "test_util.hpp"

using namespace scope;

TEST_CASE("softmax sums to one and survives large logits") {
  const Vector p = softmax(std::vector<double>{1000.0, 1000.0, 1000.0});
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Vector q = softmax(std::vector<double>{0.0, std::log(3.0)});
  CHECK(q[0] == doctest::Approx(0.25));
  CHECK(q[1] == doctest::Approx(0.75));
  CHECK_THROWS_AS(softmax(std::vector<double>{}), ContractError);
}

TEST_CASE("log_sum_exp matches the direct formula and avoids overflow") {
  CHECK(log_sum_exp(std::vector<double>{0.0, 0.0}) == doctest::Approx(std::log(2.0)));
  CHECK(log_sum_exp(std::vector<double>{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto v = testing::randn(rng, 7, 3.0);
    double direct = 0.0;
    for (double x : v) direct += std::exp(x);
    CHECK(log_sum_exp(v) == doctest::Approx(std::log(direct)).epsilon(1e-13));
  }
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_similarity(std::vector<double>{2, 0}, std::vector<double>{-1, 0}) == -1.0);
  CHECK(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 1}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), NumericError);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 0}), DimensionError);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(std::vector<double>{0.0, 0.0, 0.0}) == 0);
  CHECK(argmax(std::vector<double>{1.0, 3.0, 3.0}) == 1);
}

TEST_CASE("normalized rejects the zero vector") {
  CHECK_THROWS_AS(normalized(std::vector<double>{0, 0, 0}), NumericError);
  const Vector u = normalized(std::vector<double>{3, 4});
  CHECK(u[0] == doctest::Approx(0.6));
  CHECK(u[1] == doctest::Approx(0.8));
}

TEST_CASE("finite differences recover a known gradient") {
  // f(x) = sum_i i * x_i^3, df/dx_i = 3 i x_i^2
  ScalarFunction f = [](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(i) * x[i] * x[i] * x[i];
    return s;
  };
  const Vector x{0.5, -1.0, 2.0, 0.1};
  const Vector g = finite_diff_grad(f, x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(g[i] == doctest::Approx(3.0 * static_cast<double>(i) * x[i] * x[i]).epsilon(1e-8));
  const std::vector<std::size_t> coords{2};
  const Vector h = finite_diff_grad(f, x, coords);
  CHECK(h[0] == 0.0);
  CHECK(h[2] == doctest::Approx(24.0).epsilon(1e-8));
}

TEST_CASE("finite differences flag non-finite objectives") {
  ScalarFunction f = [](std::span<const double>) { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_THROWS_AS(finite_diff_grad(f, Vector{1.0}), NumericError);
}

TEST_CASE("relative error uses the infinity norm with a floor") {
  CHECK(relative_error(Vector{1.0, 2.0}, Vector{1.0, 2.2}) == doctest::Approx(0.2 / 2.2));
  CHECK(relative_error(Vector{0.0}, Vector{0.0}) == 0.0);
}

TEST_CASE("rng is reproducible and named streams differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c = Rng::derive(42, "x"), d = Rng::derive(42, "y"), e = Rng::derive(42, "x");
  CHECK(c.next_u64() != d.next_u64());
  CHECK(Rng::derive(42, "x").next_u64() == e.next_u64());
}

TEST_CASE("rng draws have the right moments") {
  Rng r(9);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    su += r.uniform();
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[r.below(5)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("matrix products") {
  Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
  Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
  const Matrix c = matmul(a, b);
  CHECK(c == Matrix(2, 2, {58, 64, 139, 154}));
  const Matrix d = matmul_tn(a, a);
  CHECK(d == matmul(a.transposed(), a));
  CHECK(frobenius_norm_sq(a) == 91.0);
}

TEST_CASE("sgd and adamw steps") {
  Optimizer sgd({OptimizerKind::sgd, 0.1, 0.5}, 1);
  Vector p{1.0};
  sgd.step(p, Vector{2.0});
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (2.0 + 0.5)));

  // The first AdamW step moves every coordinate by lr (bias correction makes m/sqrt(v) = sign g).
  Optimizer adam({OptimizerKind::adamw, 0.01, 0.0}, 2);
  Vector q{0.0, 0.0};
  adam.step(q, Vector{3.0, -0.2});
  CHECK(q[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(0.01).epsilon(1e-6));

  Optimizer masked({OptimizerKind::sgd, 1.0, 1.0}, 2);
  Vector r{1.0, 1.0};
  const std::vector<unsigned char> mask{1, 0};
  masked.step(r, Vector{0.0, 0.0}, mask);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 1.0);
  CHECK_THROWS_AS(parse_optimizer_kind("rmsprop"), ConfigError);
}

TEST_CASE("cosine learning-rate schedule") {
  CHECK(cosine_lr(1e-2, 1e-6, 0, 11) == doctest::Approx(1e-2));
  CHECK(cosine_lr(1e-2, 1e-6, 10, 11) == doctest::Approx(1e-6));
  CHECK(cosine_lr(1e-2, 1e-6, 5, 11) == doctest::Approx(0.5 * (1e-2 + 1e-6)));
  CHECK(cosine_lr(1e-2, 1e-6, 0, 1) == 1e-2);
  double prev = 1.0;
  for (std::size_t s = 0; s < 20; ++s) {
    const double lr = cosine_lr(1e-2, 1e-6, s, 20);
    CHECK(lr <= prev);
    prev = lr;
  }
}
