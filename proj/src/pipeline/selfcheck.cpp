#include "scope/pipeline/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scope/adapter/adapter.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"
#include "scope/core/numeric.hpp"
#include "scope/core/rng.hpp"
#include "scope/fusion/fusion.hpp"
#include "scope/metrics/metrics.hpp"
#include "scope/proto/prototypes.hpp"
#include "scope/tpn/etf.hpp"
#include "scope/tpn/tpn.hpp"

namespace scope::pipeline {

namespace {

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

CheckResult bound(std::string name, double worst, double tol) {
  return {std::move(name), worst <= tol, "worst " + sci(worst) + " (tol " + sci(tol) + ")"};
}

Vector normals(Rng& rng, std::size_t n, double sd = 1.0) {
  Vector v(n);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

CheckResult kernel_equivalence(Rng& rng) {
  const auto& ref = kernels::scalar_table();
  double worst = 0.0;
  std::string isas;
  for (auto isa : {kernels::Isa::avx2, kernels::Isa::neon}) {
    const auto* t = kernels::table_for(isa);
    if (!t) continue;
    isas += std::string(isas.empty() ? "" : ",") + std::string(kernels::isa_name(isa));
    for (std::size_t n : {1u, 3u, 4u, 7u, 16u, 33u, 100u}) {
      const Vector x = normals(rng, n), y = normals(rng, n);
      worst = std::max(worst, std::abs(t->dot(x.data(), y.data(), n) - ref.dot(x.data(), y.data(), n)));
      Vector a = y, b = y;
      t->axpy(0.7, x.data(), a.data(), n);
      ref.axpy(0.7, x.data(), b.data(), n);
      worst = std::max(worst, relative_error(a, b));
      const std::size_t rows = n % 5 + 2;
      const Vector m = normals(rng, rows * n), u = normals(rng, rows);
      Vector o1(rows), o2(rows), p1(n), p2(n);
      t->gemv(m.data(), rows, n, x.data(), o1.data(), false);
      ref.gemv(m.data(), rows, n, x.data(), o2.data(), false);
      worst = std::max(worst, relative_error(o1, o2));
      t->gemv_t(m.data(), rows, n, u.data(), p1.data(), false);
      ref.gemv_t(m.data(), rows, n, u.data(), p2.data(), false);
      worst = std::max(worst, relative_error(p1, p2));
      Vector g1 = m, g2 = m;
      t->ger(0.3, u.data(), x.data(), g1.data(), rows, n);
      ref.ger(0.3, u.data(), x.data(), g2.data(), rows, n);
      worst = std::max(worst, relative_error(g1, g2));
    }
  }
  CheckResult r = bound("kernels: simd vs scalar", worst, 1e-12);
  r.detail = (isas.empty() ? "scalar only; " : isas + " vs scalar, ") + r.detail;
  return r;
}

CheckResult etf_gradient(Rng& rng) {
  const Matrix head(16, 5, normals(rng, 80));
  const Matrix g = tpn::etf_loss_and_grad(head).grad;
  Matrix probe = head;
  const Vector fd = finite_diff_grad(
      [&](std::span<const double> p) {
        std::ranges::copy(p, probe.values().begin());
        return tpn::etf_loss_and_grad(probe).loss;
      },
      head.values());
  return bound("gradient: etf loss", relative_error(g.values(), fd), 1e-6);
}

CheckResult tpn_gradient(Rng& rng) {
  tpn::TpnArch arch;
  arch.num_classes = 3;
  tpn::TpnModel model = tpn::TpnModel::initialize(arch, rng);
  std::vector<Vector> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(normals(rng, arch.channels * arch.time_points));
  std::vector<const Vector*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  const std::vector<std::int32_t> labels{0, 1, 2, 1};
  Vector g;
  tpn::tpn_loss_and_grad(model, ptrs, labels, 0.1, 0.0, &g);
  tpn::TpnModel probe = model;
  const Vector fd = finite_diff_grad(
      [&](std::span<const double> p) {
        std::ranges::copy(p, probe.mutable_params().begin());
        return tpn::tpn_loss_and_grad(probe, ptrs, labels, 0.1, 0.0, nullptr).total();
      },
      model.params());
  return bound("gradient: task-prior network", relative_error(g, fd), 1e-5);
}

CheckResult prototype_gradient(Rng& rng) {
  const std::size_t K = 3, M = 2, d = 6, B = 12;
  proto::PrototypeBank bank;
  bank.num_classes = K;
  bank.per_class = M;
  bank.dim = d;
  bank.prototypes = Matrix(K * M, d, normals(rng, K * M * d));
  bank.renormalize();
  const Matrix emb(B, d, normals(rng, B * d));
  std::vector<std::int32_t> labels(B);
  std::vector<std::size_t> batch(B);
  for (std::size_t i = 0; i < B; ++i) {
    labels[i] = static_cast<std::int32_t>(i % K);
    batch[i] = i;
  }
  proto::RefineConfig rc;
  const auto targets = proto::prototype_targets(bank, emb, labels, batch, rc);
  Matrix grad;
  proto::prototype_loss(bank, emb, targets, rc.tau, &grad);
  proto::PrototypeBank probe = bank;
  const Vector fd = finite_diff_grad(
      [&](std::span<const double> p) {
        std::ranges::copy(p, probe.prototypes.values().begin());
        return proto::prototype_loss(probe, emb, targets, rc.tau, nullptr);
      },
      bank.prototypes.values());
  return bound("gradient: prototype loss", relative_error(grad.values(), fd), 1e-5);
}

CheckResult adapter_gradient(Rng& rng) {
  adapter::BackboneConfig bc;
  bc.depth = 4;
  bc.hidden = 16;
  const adapter::FrozenBackbone backbone(bc);
  adapter::AdapterConfig ac;
  ac.depth = 2;
  const std::size_t K = 3;
  adapter::AdapterModel model = adapter::AdapterModel::initialize(ac, backbone.width(), K, rng.next_u64());
  for (auto& p : model.mutable_params()) p += rng.normal(0.0, 0.1);
  std::vector<Matrix> lower;
  std::vector<Vector> varpi;
  for (int i = 0; i < 3; ++i) {
    lower.push_back(adapter::lower_features(backbone, model, normals(rng, bc.channels * bc.time_points)));
    varpi.push_back(normals(rng, K, 0.5));
  }
  std::vector<adapter::LossItem> items;
  for (int i = 0; i < 3; ++i) items.push_back({&lower[i], varpi[i], i % 3, 0.2 + 0.3 * i});
  Vector g;
  adapter::adapter_loss_and_grad(backbone, model, items, &g);
  adapter::AdapterModel probe = model;
  const Vector fd = finite_diff_grad(
      [&](std::span<const double> p) {
        std::ranges::copy(p, probe.mutable_params().begin());
        return adapter::adapter_loss_and_grad(backbone, probe, items, nullptr);
      },
      model.params());
  return bound("gradient: adapter and head", relative_error(g, fd), 1e-6);
}

CheckResult sinkhorn_marginals(Rng& rng) {
  double row = 0.0, col = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t B = 1 + rng.below(50), M = 1 + rng.below(5);
    Matrix s(B, M);
    for (auto& v : s.values()) v = rng.uniform(-1.0, 1.0);
    // eps 0.5: at the refinement default (0.05) 50 passes do not always close the column gap
    const Matrix q = proto::sinkhorn_assign(s, 0.5, 50);
    for (std::size_t i = 0; i < B; ++i) {
      double r = 0.0;
      for (std::size_t m = 0; m < M; ++m) r += q(i, m);
      row = std::max(row, std::abs(r - 1.0));
    }
    for (std::size_t m = 0; m < M; ++m) {
      double c = 0.0;
      for (std::size_t i = 0; i < B; ++i) c += q(i, m);
      col = std::max(col, std::abs(c - static_cast<double>(B) / static_cast<double>(M)));
    }
  }
  return {"sinkhorn: marginals after 50 iterations at eps 0.5", row <= 1e-9 && col <= 1e-6,
          "row " + sci(row) + " (tol 1e-09), column " + sci(col) + " (tol 1e-06)"};
}

CheckResult ds_oracle(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t K = 2 + rng.below(5);
    const Vector m1 = fusion::bba_from_logits(normals(rng, K, 2.0));
    const Vector m2 = fusion::bba_from_logits(normals(rng, K, 2.0));
    worst = std::max(worst, relative_error(fusion::ds_combine(m1, m2), fusion::ds_combine_bruteforce(m1, m2)));
    const double g = fusion::entropy_confidence(fusion::ds_combine(m1, m2));
    if (!(g >= 0.0 && g <= 1.0)) worst = std::max(worst, 1.0);
  }
  return bound("fusion: closed form vs focal-set Dempster rule", worst, 1e-12);
}

CheckResult rank_metrics(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(40);
    metrics::ScoredPredictions p;
    for (std::size_t i = 0; i < n; ++i) {
      p.scores.push_back(static_cast<double>(rng.below(6)) / 5.0);
      p.labels.push_back(i < 1 ? 1 : (i < 2 ? 0 : static_cast<std::int32_t>(rng.below(2))));
    }
    worst = std::max(worst, std::abs(metrics::auroc(p) - metrics::auroc_trapezoid(p)));
  }
  return bound("metrics: auroc rank form vs trapezoid", worst, 1e-12);
}

}  // namespace

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
  using Check = CheckResult (*)(Rng&);
  const std::pair<const char*, Check> checks[] = {
      {"kernels", kernel_equivalence},   {"etf", etf_gradient},         {"tpn", tpn_gradient},
      {"prototypes", prototype_gradient}, {"adapter", adapter_gradient}, {"sinkhorn", sinkhorn_marginals},
      {"fusion", ds_oracle},             {"metrics", rank_metrics},
  };
  std::vector<CheckResult> out;
  for (const auto& [stream, fn] : checks) {
    Rng rng = Rng::derive(seed, std::string("selfcheck/") + stream);
    try {
      out.push_back(fn(rng));
    } catch (const std::exception& e) {
      out.push_back({stream, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace scope::pipeline
