#include "scope/proto/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "scope/core/binary_io.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"

namespace scope::proto {

namespace {

constexpr std::string_view kMagic = "SCOPEPRO";
constexpr std::uint16_t kVersion = 1;

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

Vector random_unit(Rng& rng, std::size_t d) {
  for (;;) {
    Vector v(d);
    for (double& x : v) x = rng.normal();
    if (l2_norm(v) > 1e-12) return normalized(v);
  }
}

KMeansResult lloyd(const Matrix& x, std::size_t k, Rng& rng, std::size_t max_iter) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  KMeansResult r;
  r.centroids = Matrix(k, d);

  // k-means++ seeding.
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  std::copy(x.row(first).begin(), x.row(first).end(), r.centroids.row(0).begin());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], sq_dist(x.row(i), r.centroids.row(c - 1)));
      total += dist[i];
    }
    std::size_t pick;
    if (total > 0.0) {
      pick = rng.categorical(dist);
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), r.centroids.row(c).begin());
  }

  r.assignment.assign(n, k);
  std::vector<double> count(k);
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(x.row(i), r.centroids.row(c));
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (r.assignment[i] != best) {
        r.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && r.iterations > 0) break;

    Matrix next(k, d);
    std::fill(count.begin(), count.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      kernels::axpy(1.0, x.row(i), next.row(r.assignment[i]));
      count[r.assignment[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0.0) {
        for (double& v : next.row(c)) v /= count[c];
        continue;
      }
      // Empty cluster: move it to the point farthest from its centroid.
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dd = sq_dist(x.row(i), r.centroids.row(r.assignment[i]));
        if (dd > fd) {
          fd = dd;
          far = i;
        }
      }
      std::copy(x.row(far).begin(), x.row(far).end(), next.row(c).begin());
    }
    r.centroids = std::move(next);
  }

  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) r.inertia += sq_dist(x.row(i), r.centroids.row(r.assignment[i]));
  return r;
}

}  // namespace

void PrototypeBank::validate(double tol) const {
  if (num_classes == 0 || per_class == 0 || dim == 0)
    throw DimensionError("prototype bank: K, M and d must be positive");
  if (prototypes.rows() != num_classes * per_class || prototypes.cols() != dim)
    throw DimensionError("prototype bank: matrix must be (K*M) x d");
  for (std::size_t r = 0; r < prototypes.rows(); ++r) {
    const double n = l2_norm(prototypes.row(r));
    if (!(std::abs(n - 1.0) <= tol))
      throw NumericError("prototype " + std::to_string(r) + " has norm " + std::to_string(n));
  }
}

void PrototypeBank::renormalize() {
  for (std::size_t r = 0; r < prototypes.rows(); ++r) {
    auto row = prototypes.row(r);
    const double n = l2_norm(row);
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericError("prototype " + std::to_string(r) + " collapsed during refinement");
    for (double& v : row) v /= n;
  }
}

Matrix sinkhorn_assign(const Matrix& s, double epsilon, std::size_t iters) {
  const std::size_t B = s.rows();
  const std::size_t M = s.cols();
  if (B == 0 || M == 0) throw ContractError("sinkhorn: empty similarity matrix");
  if (!(epsilon > 0.0)) throw ContractError("sinkhorn: epsilon must be positive");
  if (iters == 0) throw ContractError("sinkhorn: need at least one iteration");
  if (!s.all_finite()) throw NumericError("sinkhorn: non-finite similarity");

  Matrix lq(B, M);
  for (std::size_t i = 0; i < s.size(); ++i) lq.values()[i] = s.values()[i] / epsilon;
  const double log_col = std::log(static_cast<double>(B) / static_cast<double>(M));
  Vector col(B);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t i = 0; i < B; ++i) col[i] = lq(i, m);
      const double shift = log_col - log_sum_exp(col);
      for (std::size_t i = 0; i < B; ++i) lq(i, m) += shift;
    }
    for (std::size_t i = 0; i < B; ++i) {
      const double lse = log_sum_exp(lq.row(i));
      for (double& v : lq.row(i)) v -= lse;
    }
  }
  for (double& v : lq.values()) v = std::exp(v);
  return lq;
}

Matrix row_softmax_assign(const Matrix& s, double epsilon) {
  if (!(epsilon > 0.0)) throw ContractError("row softmax: epsilon must be positive");
  if (!s.all_finite()) throw NumericError("row softmax: non-finite similarity");
  Matrix q(s.rows(), s.cols());
  Vector row(s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t m = 0; m < s.cols(); ++m) row[m] = s(i, m) / epsilon;
    const Vector p = softmax(row);
    std::copy(p.begin(), p.end(), q.row(i).begin());
  }
  return q;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, Rng& rng, std::size_t restarts,
                    std::size_t max_iter) {
  if (k == 0 || points.rows() < k) throw ContractError("kmeans: need at least k points");
  if (restarts == 0) throw ContractError("kmeans: need at least one restart");
  KMeansResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansResult cur = lloyd(points, k, rng, max_iter);
    if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

PrototypeBank init_prototypes_kmeans(const Matrix& embeddings, std::span<const std::int32_t> prior_labels,
                                     std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                                     const InitOptions& opts, std::vector<std::string>* warnings) {
  if (embeddings.rows() != prior_labels.size())
    throw DimensionError("init_prototypes_kmeans: one prior label per embedding required");
  if (num_classes == 0 || per_class == 0) throw ContractError("init_prototypes_kmeans: K and M must be positive");
  const std::size_t d = embeddings.cols();
  PrototypeBank bank;
  bank.num_classes = num_classes;
  bank.per_class = per_class;
  bank.dim = d;
  bank.prototypes = Matrix(num_classes * per_class, d);
  auto warn = [&](std::string msg) {
    if (warnings) warnings->push_back(std::move(msg));
  };

  for (std::size_t k = 0; k < num_classes; ++k) {
    Rng rng = Rng::derive(seed, "proto/init/class" + std::to_string(k));
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < prior_labels.size(); ++i)
      if (prior_labels[i] == static_cast<std::int32_t>(k)) idx.push_back(i);
    if (idx.size() > opts.max_per_class) {
      rng.shuffle(idx);
      idx.resize(opts.max_per_class);
      std::sort(idx.begin(), idx.end());
    }

    auto put = [&](std::size_t m, std::span<const double> v) {
      auto row = bank.prototypes.row(k * per_class + m);
      if (l2_norm(v) > 1e-12) {
        const Vector u = normalized(v);
        std::copy(u.begin(), u.end(), row.begin());
      } else {
        warn("class " + std::to_string(k) + " prototype " + std::to_string(m) +
             ": zero centroid replaced by a random unit vector");
        const Vector u = random_unit(rng, d);
        std::copy(u.begin(), u.end(), row.begin());
      }
    };

    if (idx.empty()) {
      warn("class " + std::to_string(k) + " has no predicted samples; random unit prototypes");
      for (std::size_t m = 0; m < per_class; ++m) put(m, random_unit(rng, d));
      continue;
    }
    Matrix pts(idx.size(), d);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(embeddings.row(idx[r]).begin(), embeddings.row(idx[r]).end(), pts.row(r).begin());

    if (idx.size() < per_class) {
      warn("class " + std::to_string(k) + " has " + std::to_string(idx.size()) + " < M samples; centroids duplicated with jitter");
      for (std::size_t m = 0; m < per_class; ++m) {
        Vector v(pts.row(m % idx.size()).begin(), pts.row(m % idx.size()).end());
        const double scale = std::max(l2_norm(v), 1.0) * opts.jitter;
        if (m >= idx.size())
          for (double& x : v) x += scale * rng.normal();
        put(m, v);
      }
      continue;
    }
    const KMeansResult km = kmeans(pts, per_class, rng, opts.restarts);
    for (std::size_t m = 0; m < per_class; ++m) put(m, km.centroids.row(m));
  }
  return bank;
}

Matrix class_similarity(const Matrix& emb, const PrototypeBank& bank, std::size_t k) {
  if (k >= bank.num_classes) throw DimensionError("class_similarity: class out of range");
  if (emb.cols() != bank.dim) throw DimensionError("class_similarity: embedding dim mismatch");
  Matrix s(emb.rows(), bank.per_class);
  for (std::size_t i = 0; i < emb.rows(); ++i)
    for (std::size_t m = 0; m < bank.per_class; ++m) s(i, m) = cosine_similarity(emb.row(i), bank.at(k, m));
  return s;
}

void RefineConfig::validate() const {
  if (batch_size == 0) throw ConfigError("prototypes: batch_size must be positive");
  if (sinkhorn_iters == 0) throw ConfigError("prototypes: sinkhorn_iters must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("prototypes: epsilon must be positive");
  if (!(tau > 0.0)) throw ConfigError("prototypes: tau must be positive");
  if (!(uniform_mix >= 0.0 && uniform_mix <= 1.0)) throw ConfigError("prototypes: uniform_mix must lie in [0, 1]");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("prototypes: learning rate must be positive");
}

PrototypeTargets prototype_targets(const PrototypeBank& bank, const Matrix& emb,
                                   std::span<const std::int32_t> labels,
                                   std::span<const std::size_t> batch, const RefineConfig& cfg) {
  if (emb.rows() != labels.size()) throw DimensionError("prototype loss: one label per embedding");
  if (emb.cols() != bank.dim) throw DimensionError("prototype loss: embedding dim mismatch");
  const std::size_t K = bank.num_classes;
  const std::size_t M = bank.per_class;
  PrototypeTargets t;
  t.rows.resize(K);
  t.q.resize(K);
  for (std::size_t i : batch) {
    if (i >= emb.rows()) throw DimensionError("prototype loss: batch index out of range");
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw DimensionError("prototype loss: label out of range");
    t.rows[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto& rows = t.rows[k];
    if (rows.empty()) continue;
    Matrix zk(rows.size(), bank.dim);
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy(emb.row(rows[r]).begin(), emb.row(rows[r]).end(), zk.row(r).begin());
    const Matrix s = class_similarity(zk, bank, k);
    Matrix q = cfg.use_sinkhorn ? sinkhorn_assign(s, cfg.epsilon, cfg.sinkhorn_iters)
                                : row_softmax_assign(s, cfg.epsilon);
    for (double& v : q.values()) v = (1.0 - cfg.uniform_mix) * v + cfg.uniform_mix / static_cast<double>(M);
    t.q[k] = std::move(q);
  }
  return t;
}

double prototype_loss(const PrototypeBank& bank, const Matrix& emb, const PrototypeTargets& targets,
                      double tau, Matrix* grad) {
  const std::size_t K = bank.num_classes;
  const std::size_t M = bank.per_class;
  const std::size_t d = bank.dim;
  if (targets.rows.size() != K || targets.q.size() != K)
    throw DimensionError("prototype loss: targets do not match the bank");
  if (grad) *grad = Matrix(K * M, d);
  std::size_t present = 0;
  for (const auto& v : targets.rows) present += !v.empty();
  if (present == 0) throw ContractError("prototype loss: empty batch");

  double loss = 0.0;
  Vector srow(M), pnorm(M), s(M);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& rows = targets.rows[k];
    if (rows.empty()) continue;
    const Matrix& q = targets.q[k];
    const double w = 1.0 / (static_cast<double>(rows.size()) * static_cast<double>(present));
    for (std::size_t m = 0; m < M; ++m) pnorm[m] = l2_norm(bank.at(k, m));

    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto z = emb.row(rows[r]);
      const double zn = l2_norm(z);
      for (std::size_t m = 0; m < M; ++m) {
        s[m] = cosine_similarity(z, bank.at(k, m));
        srow[m] = tau * s[m];
      }
      const double lse = log_sum_exp(srow);
      for (std::size_t m = 0; m < M; ++m) {
        loss -= w * q(r, m) * (srow[m] - lse);
        if (!grad) continue;
        // dL/ds = tau (p - q); ds/dp = (z~ - s p~) / ||p||.
        const double ds = w * tau * (std::exp(srow[m] - lse) - q(r, m));
        auto g = grad->row(k * M + m);
        const auto p = bank.at(k, m);
        for (std::size_t i = 0; i < d; ++i) g[i] += ds * (z[i] / zn - s[m] * p[i] / pnorm[m]) / pnorm[m];
      }
    }
  }
  return loss;
}

double prototype_loss_and_grad(const PrototypeBank& bank, const Matrix& emb,
                               std::span<const std::int32_t> labels,
                               std::span<const std::size_t> batch, const RefineConfig& cfg,
                               Matrix* grad) {
  return prototype_loss(bank, emb, prototype_targets(bank, emb, labels, batch, cfg), cfg.tau, grad);
}

std::string RefineLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch_loss"] = epoch_loss;
  return j.dump(2) + "\n";
}

PrototypeBank refine_prototypes(PrototypeBank bank, const Matrix& emb,
                                std::span<const std::int32_t> labels, const RefineConfig& cfg,
                                RefineLog* log) {
  cfg.validate();
  bank.validate(1e-6);
  if (emb.rows() == 0) throw ContractError("refine_prototypes: labeled set is empty");
  bank.epsilon = cfg.epsilon;
  bank.tau = cfg.tau;
  Rng rng = Rng::derive(cfg.seed, "proto/refine");
  Optimizer opt(cfg.optimizer, bank.prototypes.size());
  std::vector<std::size_t> order(emb.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Matrix grad;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const double loss = prototype_loss_and_grad(bank, emb, labels, batch, cfg, &grad);
      if (!std::isfinite(loss) || !grad.all_finite())
        throw NumericError("refine_prototypes: non-finite loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batches));
      opt.step(bank.prototypes.values(), grad.values());
      bank.renormalize();
      total += loss;
      ++batches;
    }
    if (log) log->epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return bank;
}

ProtoPrediction proto_predict(std::span<const double> z, const PrototypeBank& bank) {
  if (z.size() != bank.dim) throw DimensionError("proto_predict: embedding dim mismatch");
  const std::size_t K = bank.num_classes;
  const std::size_t M = bank.per_class;
  ProtoPrediction out;
  out.similarities.resize(K * M);
  out.class_logits.assign(K, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t m = 0; m < M; ++m) {
      const double s = cosine_similarity(z, bank.at(k, m));
      out.similarities[k * M + m] = s;
      out.class_logits[k] = std::max(out.class_logits[k], s);
    }
  out.label = static_cast<std::int32_t>(argmax(out.similarities) / M);
  return out;
}

std::vector<std::uint8_t> encode_bank(const PrototypeBank& bank) {
  io::ByteWriter w;
  io::write_header(w, kMagic, kVersion);
  w.u32(static_cast<std::uint32_t>(bank.num_classes));
  w.u32(static_cast<std::uint32_t>(bank.per_class));
  w.u32(static_cast<std::uint32_t>(bank.dim));
  w.f64(bank.epsilon);
  w.f64(bank.tau);
  w.f64_array(bank.prototypes.values());
  return w.buffer();
}

PrototypeBank decode_bank(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  io::read_header(r, kMagic, kVersion);
  PrototypeBank b;
  b.num_classes = r.u32();
  b.per_class = r.u32();
  b.dim = r.u32();
  b.epsilon = r.f64();
  b.tau = r.f64();
  if (b.num_classes == 0 || b.per_class == 0 || b.dim == 0)
    throw DimensionError("prototype bank header: K, M and d must be positive");
  const std::size_t n = b.num_classes * b.per_class * b.dim;
  if (n > r.remaining() / 8) throw TruncationError("prototype blob shorter than K*M*d", r.offset());
  b.prototypes = Matrix(b.num_classes * b.per_class, b.dim, r.f64_array(n));
  if (r.remaining() != 0) throw FormatError("prototype bank: trailing bytes");
  b.validate(1e-6);
  return b;
}

void save_bank(const PrototypeBank& bank, const std::filesystem::path& path) {
  io::write_file(path, encode_bank(bank));
}

PrototypeBank load_bank(const std::filesystem::path& path) { return decode_bank(io::read_file(path)); }

}  // namespace scope::proto
