#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "scope/adapter/adapter.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"
#include "test_util.hpp"

using namespace scope;
using namespace scope::adapter;

namespace {

BackboneConfig small_backbone() {
  BackboneConfig c;
  c.channels = 2;
  c.time_points = 8;
  c.patch = 2;
  c.width = 6;
  c.hidden = 10;
  c.depth = 5;
  c.seed = 77;
  return c;
}

void randomize(AdapterModel& m, Rng& rng, double sd) {
  for (double& p : m.mutable_params()) p = sd * rng.normal();
}

Vector uniform(std::size_t K) { return Vector(K, 1.0 / static_cast<double>(K)); }

}  // namespace

TEST_CASE("zero-bias backbone maps a zero input to zero features") {
  BackboneConfig c = small_backbone();
  c.bias_scale = 0.0;
  FrozenBackbone bb(c);
  const Vector x(c.input_dim(), 0.0);
  for (const Matrix& h : bb.forward_all(x))
    for (double v : h.values()) CHECK(v == 0.0);
}

TEST_CASE("backbone shapes, determinism and input validation") {
  const BackboneConfig c = small_backbone();
  FrozenBackbone a(c), b(c);
  CHECK(a.digest() == b.digest());
  BackboneConfig c2 = c;
  c2.seed = 78;
  CHECK(FrozenBackbone(c2).digest() != a.digest());

  Rng rng(3);
  const Vector x = testing::randn(rng, c.input_dim());
  const auto hs = a.forward_all(x);
  REQUIRE(hs.size() == c.depth + 1);
  CHECK(hs[0].rows() == c.tokens());
  CHECK(hs[0].cols() == c.width);
  CHECK(testing::max_abs_diff(a.forward_to(x, 3).values(), hs[3].values()) == 0.0);
  CHECK_THROWS_AS(a.embed(Vector(c.input_dim() + 1, 0.0)), DimensionError);
  CHECK_THROWS_AS(a.forward_to(x, c.depth + 1), ContractError);

  BackboneConfig bad = c;
  bad.patch = 3;
  CHECK_THROWS_AS(FrozenBackbone{bad}, ConfigError);
}

TEST_CASE("patch embedding only sees its own time window") {
  const BackboneConfig c = small_backbone();
  FrozenBackbone bb(c);
  Rng rng(4);
  Vector x = testing::randn(rng, c.input_dim());
  const Matrix h0 = bb.embed(x);
  x[1 * c.time_points + 5] += 1.0;  // channel 1, time 5 -> token 2
  const Matrix h1 = bb.embed(x);
  for (std::size_t t = 0; t < c.tokens(); ++t) {
    const double d = testing::max_abs_diff(h0.row(t), h1.row(t));
    if (t == 2)
      CHECK(d > 0.0);
    else
      CHECK(d == 0.0);
  }
}

TEST_CASE("identity at init: adapted logits match the frozen path") {
  const BackboneConfig c;  // defaults
  FrozenBackbone bb(c);
  const AdapterModel m = AdapterModel::initialize(AdapterConfig{}, c.width, 5, 9);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = testing::randn(rng, c.input_dim());
    Vector varpi = testing::randn(rng, 5, 0.3);
    const Vector a = adapted_forward(bb, m, x, varpi);
    const Vector f = frozen_logits(bb, m, x);
    CHECK(testing::max_abs_diff(a, f) < 1e-6);
  }
}

TEST_CASE("L = 0 bypasses the adapters") {
  const BackboneConfig c = small_backbone();
  FrozenBackbone bb(c);
  AdapterConfig ac;
  ac.depth = 0;
  AdapterModel m = AdapterModel::initialize(ac, c.width, 3, 2);
  CHECK(m.adapter_parameter_count() == 0);
  Rng rng(6);
  const Vector x = testing::randn(rng, c.input_dim());
  CHECK(testing::max_abs_diff(adapted_forward(bb, m, x, {}), frozen_logits(bb, m, x)) == 0.0);

  AdapterConfig deep;
  deep.depth = c.depth + 1;
  const AdapterModel too_deep(deep, c.width, 3);
  CHECK_THROWS_AS(lower_features(bb, too_deep, x), ConfigError);
}

TEST_CASE("modulation scales stay within [1 - lambda, 1 + lambda]") {
  const std::size_t D = 6, K = 4, T = 5;
  const AdapterLayerLayout lay(D, K);
  CHECK(lay.size == 4 * D * D + 2 * D + 2 * D * K + 2 * D + K + 1);
  Rng rng(7);
  for (double lambda : {0.05, 0.1, 0.5}) {
    AdapterConfig cfg;
    cfg.lambda = lambda;
    for (int trial = 0; trial < 50; ++trial) {
      const Vector params = testing::randn(rng, lay.size, 5.0);  // large, to saturate tanh
      const Matrix r = testing::randn_matrix(rng, T, D, 3.0);
      const Vector varpi = testing::randn(rng, K);
      ModTrace tr;
      modulate(r, varpi, params, lay, cfg, &tr);
      for (double a : tr.alpha) {
        CHECK(a >= 1.0 - lambda);
        CHECK(a <= 1.0 + lambda);
      }
      CHECK(tr.gate > 0.0);
      CHECK(tr.gate < 1.0);
      for (double v : tr.v) CHECK(std::abs(v) <= cfg.lambda_proto);
    }
  }
}

TEST_CASE("modulate: zero parameters give the identity, zero tokens are rejected") {
  const std::size_t D = 4, K = 3;
  const AdapterLayerLayout lay(D, K);
  Rng rng(8);
  const Matrix r = testing::randn_matrix(rng, 3, D);
  const Vector zeros(lay.size, 0.0);
  const Matrix out = modulate(r, uniform(K), zeros, lay, AdapterConfig{});
  CHECK(testing::max_abs_diff(out.values(), r.values()) == 0.0);
  CHECK_THROWS_AS(modulate(Matrix(0, D), uniform(K), zeros, lay, AdapterConfig{}), ContractError);
  CHECK_THROWS_AS(modulate(r, uniform(K + 1), zeros, lay, AdapterConfig{}), DimensionError);
}

TEST_CASE("modulate: statistics are population mean and std") {
  const std::size_t D = 2, K = 2;
  const AdapterLayerLayout lay(D, K);
  Matrix r(4, D);
  const double col0[] = {1.0, 2.0, 3.0, 6.0};
  for (std::size_t t = 0; t < 4; ++t) {
    r(t, 0) = col0[t];
    r(t, 1) = -1.0;
  }
  ModTrace tr;
  modulate(r, uniform(K), Vector(lay.size, 0.0), lay, AdapterConfig{}, &tr);
  CHECK(tr.mean[0] == doctest::Approx(3.0));
  CHECK(tr.stddev[0] == doctest::Approx(std::sqrt(3.5)).epsilon(1e-9));  // (4+1+0+9)/4
  CHECK(tr.mean[1] == doctest::Approx(-1.0));
  CHECK(tr.stddev[1] == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("nulling the prototype branch makes the output independent of varpi") {
  const std::size_t D = 5, K = 3;
  const AdapterLayerLayout lay(D, K);
  Rng rng(9);
  Vector params = testing::randn(rng, lay.size);
  for (std::size_t i = lay.w_proto; i < lay.b_proto + 2 * D; ++i) params[i] = 0.0;
  const Matrix r = testing::randn_matrix(rng, 4, D);
  const Matrix a = modulate(r, testing::randn(rng, K), params, lay, AdapterConfig{});
  const Matrix b = modulate(r, testing::randn(rng, K), params, lay, AdapterConfig{});
  CHECK(testing::max_abs_diff(a.values(), b.values()) < 1e-15);
}

TEST_CASE("modulate backward matches finite differences") {
  const std::size_t D = 4, K = 3, T = 5;
  const AdapterLayerLayout lay(D, K);
  AdapterConfig cfg;
  cfg.lambda = 0.3;
  cfg.lambda_proto = 0.7;
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector params = testing::randn(rng, lay.size, 0.5);
    const Matrix r = testing::randn_matrix(rng, T, D);
    const Vector varpi = testing::randn(rng, K);
    const Matrix w = testing::randn_matrix(rng, T, D);  // loss = <w, out>
    auto loss_p = [&](std::span<const double> p) {
      const Matrix o = modulate(r, varpi, p, lay, cfg);
      return kernels::dot(o.values(), w.values());
    };
    auto loss_r = [&](std::span<const double> rv) {
      const Matrix o = modulate(Matrix(T, D, Vector(rv.begin(), rv.end())), varpi, params, lay, cfg);
      return kernels::dot(o.values(), w.values());
    };
    ModTrace tr;
    modulate(r, varpi, params, lay, cfg, &tr);
    Vector g(lay.size, 0.0);
    const Matrix dr = modulate_backward(r, varpi, params, lay, cfg, tr, w, g);
    CHECK(relative_error(g, finite_diff_grad(loss_p, params)) < 1e-6);
    CHECK(relative_error(dr.values(), finite_diff_grad(loss_r, r.values())) < 1e-6);
  }
}

TEST_CASE("full adapter loss gradient matches finite differences at 20 points") {
  const BackboneConfig c = small_backbone();
  FrozenBackbone bb(c);
  const std::size_t K = 3;
  AdapterConfig ac;
  ac.depth = 2;
  ac.lambda = 0.5;
  Rng rng(11);
  double worst = 0.0;
  for (int point = 0; point < 20; ++point) {
    AdapterModel m = AdapterModel::initialize(ac, c.width, K, 100 + static_cast<std::uint64_t>(point));
    randomize(m, rng, 0.3);
    std::vector<Matrix> lower;
    std::vector<Vector> varpi;
    for (int i = 0; i < 4; ++i) {
      lower.push_back(lower_features(bb, m, testing::randn(rng, c.input_dim())));
      varpi.push_back(testing::randn(rng, K, 0.5));
    }
    std::vector<LossItem> items;
    for (int i = 0; i < 4; ++i)
      items.push_back({&lower[i], varpi[i], static_cast<std::int32_t>(i % K), 0.25 + 0.1 * i});

    Vector g;
    adapter_loss_and_grad(bb, m, items, &g);
    const Vector p0(m.params().begin(), m.params().end());
    auto f = [&](std::span<const double> p) {
      AdapterModel q = m;
      std::copy(p.begin(), p.end(), q.mutable_params().begin());
      return adapter_loss_and_grad(bb, q, items, nullptr);
    };
    const double err = relative_error(g, finite_diff_grad(f, p0));
    worst = std::max(worst, err);
    CHECK(err < 1e-4);
  }
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("zero-weight items contribute nothing and labels are range-checked") {
  const BackboneConfig c = small_backbone();
  FrozenBackbone bb(c);
  const AdapterModel m = AdapterModel::initialize(AdapterConfig{}, c.width, 3, 1);
  Rng rng(12);
  const Matrix low = lower_features(bb, m, testing::randn(rng, c.input_dim()));
  const Vector v = uniform(3);
  std::vector<LossItem> items{{&low, v, 1, 0.0}};
  Vector g;
  CHECK(adapter_loss_and_grad(bb, m, items, &g) == 0.0);
  for (double x : g) CHECK(x == 0.0);
  items[0].label = 3;
  items[0].weight = 1.0;
  CHECK_THROWS_AS(adapter_loss_and_grad(bb, m, items, &g), DimensionError);
}

TEST_CASE("trainable ratio at the defaults is at most 5%") {
  const BackboneConfig c;
  FrozenBackbone bb(c);
  for (std::size_t K : {2u, 3u, 5u}) {
    const AdapterModel m = AdapterModel::initialize(AdapterConfig{}, c.width, K, 1);
    const double ratio = trainable_ratio(bb, m);
    MESSAGE("K=" << K << " ratio " << ratio);
    CHECK(ratio > 0.0);
    CHECK(ratio <= 0.05);
  }
}

TEST_CASE("training the adapter leaves the backbone digest unchanged") {
  const BackboneConfig c = small_backbone();
  const FrozenBackbone bb(c);
  const std::uint64_t before = bb.digest();
  AdapterModel m = AdapterModel::initialize(AdapterConfig{}, c.width, 3, 4);
  Rng rng(13);
  std::vector<Matrix> lower;
  for (int i = 0; i < 6; ++i) lower.push_back(lower_features(bb, m, testing::randn(rng, c.input_dim())));
  const Vector v = uniform(3);
  std::vector<LossItem> items;
  for (int i = 0; i < 6; ++i) items.push_back({&lower[i], v, i % 3, 1.0 / 6.0});
  Vector g;
  const double l0 = adapter_loss_and_grad(bb, m, items, &g);
  for (int step = 0; step < 50; ++step) {
    adapter_loss_and_grad(bb, m, items, &g);
    kernels::axpy(-0.05, g, m.mutable_params());
  }
  CHECK(adapter_loss_and_grad(bb, m, items, nullptr) < l0);
  CHECK(bb.digest() == before);
}

TEST_CASE("adapter checkpoint round trip") {
  const BackboneConfig c = small_backbone();
  AdapterConfig ac;
  ac.lambda = 0.2;
  AdapterModel m = AdapterModel::initialize(ac, c.width, 4, 3);
  Rng rng(14);
  randomize(m, rng, 1.0);
  const auto path = std::filesystem::temp_directory_path() / "scope_test_adapter.bin";
  save_adapter(m, path, R"({"k":1})");
  CHECK(load_adapter(path) == m);
  std::filesystem::remove(path);

  auto bytes = encode_adapter(m, "{}");
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_adapter(bytes), FormatError);
  bytes = encode_adapter(m, "{}");
  bytes.pop_back();
  CHECK_THROWS(decode_adapter(bytes));
}
