#include "scope/tpn/tpn.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "scope/core/binary_io.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"
#include "scope/tpn/etf.hpp"

namespace scope::tpn {

namespace {

constexpr std::string_view kMagic = "SCOPETPN";
constexpr std::uint16_t kVersion = 1;

double elu(double a) { return a > 0.0 ? a : std::expm1(a); }
double elu_grad(double a) { return a > 0.0 ? 1.0 : std::exp(a); }

struct Dims {
  std::size_t C, T, F1, G, F2, k1, k2, p1, p2, T1, T2, pad1, pad2, K, d, F;
  explicit Dims(const TpnArch& a)
      : C(a.channels),
        T(a.time_points),
        F1(a.temporal_filters),
        G(a.temporal_filters * a.depth_multiplier),
        F2(a.separable_filters),
        k1(a.temporal_kernel),
        k2(a.separable_kernel),
        p1(a.pool1),
        p2(a.pool2),
        T1(a.time_points / std::max<std::size_t>(a.pool1, 1)),
        T2(T1 / std::max<std::size_t>(a.pool2, 1)),
        pad1((a.temporal_kernel - 1) / 2),
        pad2((a.separable_kernel - 1) / 2),
        K(a.num_classes),
        d(a.embedding_dim()),
        F(a.input_dim()) {}
};

// Forward activations of one sample, kept for the backward pass.
struct Trace {
  Vector x;
  Vector a1, a2, e2, q, a3, a4, e4;
  Vector z;
};

void forward(const TpnModel& m, std::span<const double> raw, Trace& tr) {
  const TpnArch& arch = m.arch();
  const Dims D(arch);
  if (raw.size() != D.F)
    throw DimensionError("TPN input has " + std::to_string(raw.size()) + " features, expected " +
                         std::to_string(D.F));
  const auto p = m.params();
  const auto& L = m.layout();
  tr.x.resize(D.F);
  for (std::size_t i = 0; i < D.F; ++i)
    tr.x[i] = (raw[i] - m.input_mean()[i]) / m.input_scale()[i];

  if (arch.mode == EncoderMode::mlp) {
    tr.a1.assign(D.d, 0.0);
    kernels::KernelTable const& kt = kernels::active();
    kt.gemv(p.data() + L.mlp_weight, D.d, D.F, tr.x.data(), tr.a1.data(), false);
    tr.z.resize(D.d);
    for (std::size_t i = 0; i < D.d; ++i) {
      tr.a1[i] += p[L.mlp_bias + i];
      tr.z[i] = elu(tr.a1[i]);
    }
    return;
  }

  tr.a1.assign(D.F1 * D.C * D.T, 0.0);
  for (std::size_t f = 0; f < D.F1; ++f)
    for (std::size_t c = 0; c < D.C; ++c)
      for (std::size_t t = 0; t < D.T; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < D.k1; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(D.pad1);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(D.T)) continue;
          acc += p[L.temporal + f * D.k1 + j] * tr.x[c * D.T + static_cast<std::size_t>(src)];
        }
        tr.a1[(f * D.C + c) * D.T + t] = acc;
      }

  tr.a2.assign(D.G * D.T, 0.0);
  tr.e2.resize(D.G * D.T);
  const std::size_t Dm = arch.depth_multiplier;
  for (std::size_t g = 0; g < D.G; ++g) {
    const std::size_t f = g / Dm;
    for (std::size_t t = 0; t < D.T; ++t) {
      double acc = p[L.spatial_bias + g];
      for (std::size_t c = 0; c < D.C; ++c)
        acc += p[L.spatial + g * D.C + c] * tr.a1[(f * D.C + c) * D.T + t];
      tr.a2[g * D.T + t] = acc;
      tr.e2[g * D.T + t] = elu(acc);
    }
  }

  tr.q.assign(D.G * D.T1, 0.0);
  for (std::size_t g = 0; g < D.G; ++g)
    for (std::size_t u = 0; u < D.T1; ++u) {
      double acc = 0.0;
      for (std::size_t i = 0; i < D.p1; ++i) acc += tr.e2[g * D.T + u * D.p1 + i];
      tr.q[g * D.T1 + u] = acc / static_cast<double>(D.p1);
    }

  tr.a3.assign(D.G * D.T1, 0.0);
  for (std::size_t g = 0; g < D.G; ++g)
    for (std::size_t u = 0; u < D.T1; ++u) {
      double acc = 0.0;
      for (std::size_t j = 0; j < D.k2; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(u + j) - static_cast<std::ptrdiff_t>(D.pad2);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(D.T1)) continue;
        acc += p[L.depthwise + g * D.k2 + j] * tr.q[g * D.T1 + static_cast<std::size_t>(src)];
      }
      tr.a3[g * D.T1 + u] = acc;
    }

  tr.a4.assign(D.F2 * D.T1, 0.0);
  tr.e4.resize(D.F2 * D.T1);
  for (std::size_t o = 0; o < D.F2; ++o)
    for (std::size_t u = 0; u < D.T1; ++u) {
      double acc = p[L.pointwise_bias + o];
      for (std::size_t g = 0; g < D.G; ++g) acc += p[L.pointwise + o * D.G + g] * tr.a3[g * D.T1 + u];
      tr.a4[o * D.T1 + u] = acc;
      tr.e4[o * D.T1 + u] = elu(acc);
    }

  tr.z.assign(D.d, 0.0);
  for (std::size_t o = 0; o < D.F2; ++o)
    for (std::size_t v = 0; v < D.T2; ++v) {
      double acc = 0.0;
      for (std::size_t i = 0; i < D.p2; ++i) acc += tr.e4[o * D.T1 + v * D.p2 + i];
      tr.z[o * D.T2 + v] = acc / static_cast<double>(D.p2);
    }
}

// Accumulates d(loss)/d(encoder params) for one sample given dz.
void backward(const TpnModel& m, const Trace& tr, std::span<const double> dz, Vector& grad) {
  const TpnArch& arch = m.arch();
  const Dims D(arch);
  const auto p = m.params();
  const auto& L = m.layout();

  if (arch.mode == EncoderMode::mlp) {
    Vector da(D.d);
    for (std::size_t i = 0; i < D.d; ++i) {
      da[i] = dz[i] * elu_grad(tr.a1[i]);
      grad[L.mlp_bias + i] += da[i];
    }
    kernels::active().ger(1.0, da.data(), tr.x.data(), grad.data() + L.mlp_weight, D.d, D.F);
    return;
  }

  Vector da4(D.F2 * D.T1, 0.0);
  for (std::size_t o = 0; o < D.F2; ++o)
    for (std::size_t v = 0; v < D.T2; ++v)
      for (std::size_t i = 0; i < D.p2; ++i) {
        const std::size_t idx = o * D.T1 + v * D.p2 + i;
        da4[idx] = dz[o * D.T2 + v] / static_cast<double>(D.p2) * elu_grad(tr.a4[idx]);
      }

  Vector da3(D.G * D.T1, 0.0);
  for (std::size_t o = 0; o < D.F2; ++o)
    for (std::size_t u = 0; u < D.T1; ++u) {
      const double g4 = da4[o * D.T1 + u];
      if (g4 == 0.0) continue;
      grad[L.pointwise_bias + o] += g4;
      for (std::size_t g = 0; g < D.G; ++g) {
        grad[L.pointwise + o * D.G + g] += g4 * tr.a3[g * D.T1 + u];
        da3[g * D.T1 + u] += p[L.pointwise + o * D.G + g] * g4;
      }
    }

  Vector dq(D.G * D.T1, 0.0);
  for (std::size_t g = 0; g < D.G; ++g)
    for (std::size_t u = 0; u < D.T1; ++u) {
      const double g3 = da3[g * D.T1 + u];
      for (std::size_t j = 0; j < D.k2; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(u + j) - static_cast<std::ptrdiff_t>(D.pad2);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(D.T1)) continue;
        const auto s = static_cast<std::size_t>(src);
        grad[L.depthwise + g * D.k2 + j] += g3 * tr.q[g * D.T1 + s];
        dq[g * D.T1 + s] += p[L.depthwise + g * D.k2 + j] * g3;
      }
    }

  Vector da2(D.G * D.T, 0.0);
  for (std::size_t g = 0; g < D.G; ++g)
    for (std::size_t u = 0; u < D.T1; ++u)
      for (std::size_t i = 0; i < D.p1; ++i) {
        const std::size_t idx = g * D.T + u * D.p1 + i;
        da2[idx] = dq[g * D.T1 + u] / static_cast<double>(D.p1) * elu_grad(tr.a2[idx]);
      }

  Vector da1(D.F1 * D.C * D.T, 0.0);
  const std::size_t Dm = arch.depth_multiplier;
  for (std::size_t g = 0; g < D.G; ++g) {
    const std::size_t f = g / Dm;
    for (std::size_t t = 0; t < D.T; ++t) {
      const double g2 = da2[g * D.T + t];
      grad[L.spatial_bias + g] += g2;
      for (std::size_t c = 0; c < D.C; ++c) {
        grad[L.spatial + g * D.C + c] += g2 * tr.a1[(f * D.C + c) * D.T + t];
        da1[(f * D.C + c) * D.T + t] += p[L.spatial + g * D.C + c] * g2;
      }
    }
  }

  for (std::size_t f = 0; f < D.F1; ++f)
    for (std::size_t c = 0; c < D.C; ++c)
      for (std::size_t t = 0; t < D.T; ++t) {
        const double g1 = da1[(f * D.C + c) * D.T + t];
        for (std::size_t j = 0; j < D.k1; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(D.pad1);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(D.T)) continue;
          grad[L.temporal + f * D.k1 + j] += g1 * tr.x[c * D.T + static_cast<std::size_t>(src)];
        }
      }
}

std::vector<unsigned char> decay_mask(const TpnModel& m) {
  const auto& L = m.layout();
  std::vector<unsigned char> mask(L.total, 1);
  const Dims D(m.arch());
  auto clear = [&](std::size_t off, std::size_t n) {
    std::fill(mask.begin() + static_cast<std::ptrdiff_t>(off),
              mask.begin() + static_cast<std::ptrdiff_t>(off + n), 0);
  };
  if (m.arch().mode == EncoderMode::mlp) {
    clear(L.mlp_bias, D.d);
  } else {
    clear(L.spatial_bias, D.G);
    clear(L.pointwise_bias, D.F2);
  }
  return mask;
}

}  // namespace

std::string_view encoder_mode_name(EncoderMode m) noexcept {
  return m == EncoderMode::conv ? "conv" : "mlp";
}

EncoderMode parse_encoder_mode(std::string_view name) {
  if (name == "conv") return EncoderMode::conv;
  if (name == "mlp") return EncoderMode::mlp;
  throw ConfigError("unknown encoder mode \"" + std::string(name) + "\" (expected conv|mlp)");
}

std::size_t TpnArch::embedding_dim() const noexcept {
  if (mode == EncoderMode::mlp) return mlp_hidden;
  if (pool1 == 0 || pool2 == 0) return 0;
  return separable_filters * (time_points / (pool1 * pool2));
}

void TpnArch::validate() const {
  if (channels == 0 || time_points == 0) throw ConfigError("tpn: channels and time_points must be positive");
  if (num_classes < 2) throw ConfigError("tpn: need at least 2 classes");
  if (mode == EncoderMode::conv) {
    if (temporal_filters == 0 || depth_multiplier == 0 || separable_filters == 0)
      throw ConfigError("tpn: filter counts must be positive");
    if (temporal_kernel % 2 == 0 || separable_kernel % 2 == 0)
      throw ConfigError("tpn: kernel sizes must be odd for same padding");
    if (pool1 == 0 || pool2 == 0 || time_points % (pool1 * pool2) != 0)
      throw ConfigError("tpn: time_points must be divisible by pool1 * pool2");
  } else if (mlp_hidden == 0) {
    throw ConfigError("tpn: mlp_hidden must be positive");
  }
  if (embedding_dim() + 1 < num_classes)
    throw ContractError("tpn: embedding dim " + std::to_string(embedding_dim()) +
                        " < K-1; no simplex ETF exists");
}

TpnLayout TpnLayout::of(const TpnArch& a) {
  TpnLayout L;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  const std::size_t d = a.embedding_dim();
  if (a.mode == EncoderMode::conv) {
    const std::size_t G = a.temporal_filters * a.depth_multiplier;
    L.temporal = take(a.temporal_filters * a.temporal_kernel);
    L.spatial = take(G * a.channels);
    L.spatial_bias = take(G);
    L.depthwise = take(G * a.separable_kernel);
    L.pointwise = take(a.separable_filters * G);
    L.pointwise_bias = take(a.separable_filters);
  } else {
    L.mlp_weight = take(d * a.input_dim());
    L.mlp_bias = take(d);
  }
  L.head = take(d * a.num_classes);
  L.total = off;
  return L;
}

TpnModel::TpnModel(TpnArch arch, Vector params, Vector input_mean, Vector input_scale)
    : arch_(arch), layout_(TpnLayout::of(arch)), params_(std::move(params)) {
  arch_.validate();
  if (params_.size() != layout_.total)
    throw DimensionError("TPN parameter count " + std::to_string(params_.size()) + " != " +
                         std::to_string(layout_.total));
  set_input_normalization(std::move(input_mean), std::move(input_scale));
}

void TpnModel::set_input_normalization(Vector mean, Vector scale) {
  const std::size_t F = arch_.input_dim();
  if (mean.empty()) mean.assign(F, 0.0);
  if (scale.empty()) scale.assign(F, 1.0);
  if (mean.size() != F || scale.size() != F)
    throw DimensionError("TPN normalisation vectors must have one entry per feature");
  for (double s : scale)
    if (!(s > 0.0) || !std::isfinite(s)) throw NumericError("TPN input scale must be positive");
  mean_ = std::move(mean);
  scale_ = std::move(scale);
}

TpnModel TpnModel::initialize(const TpnArch& arch, Rng& rng) {
  arch.validate();
  const TpnLayout L = TpnLayout::of(arch);
  Vector p(L.total, 0.0);
  auto fill = [&](std::size_t off, std::size_t n, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < n; ++i) p[off + i] = sd * rng.normal();
  };
  const std::size_t d = arch.embedding_dim();
  if (arch.mode == EncoderMode::conv) {
    const std::size_t G = arch.temporal_filters * arch.depth_multiplier;
    fill(L.temporal, arch.temporal_filters * arch.temporal_kernel, static_cast<double>(arch.temporal_kernel));
    fill(L.spatial, G * arch.channels, static_cast<double>(arch.channels));
    fill(L.depthwise, G * arch.separable_kernel, static_cast<double>(arch.separable_kernel));
    fill(L.pointwise, arch.separable_filters * G, static_cast<double>(G));
  } else {
    fill(L.mlp_weight, d * arch.input_dim(), static_cast<double>(arch.input_dim()));
  }
  const double head_sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d * arch.num_classes; ++i) p[L.head + i] = head_sd * rng.normal();
  return TpnModel(arch, std::move(p), {}, {});
}

TpnModel TpnModel::zeros(const TpnArch& arch) {
  return TpnModel(arch, Vector(TpnLayout::of(arch).total, 0.0), {}, {});
}

Matrix TpnModel::head() const {
  const std::size_t d = embedding_dim();
  const std::size_t K = num_classes();
  Matrix w(d, K);
  std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.head), d * K, w.values().begin());
  return w;
}

void TpnModel::set_head(const Matrix& w) {
  if (w.rows() != embedding_dim() || w.cols() != num_classes())
    throw DimensionError("TPN head must be d x K");
  std::copy(w.values().begin(), w.values().end(),
            params_.begin() + static_cast<std::ptrdiff_t>(layout_.head));
}

Vector encode(const TpnModel& model, std::span<const double> x) {
  Trace tr;
  forward(model, x, tr);
  return std::move(tr.z);
}

Matrix encode_batch(const TpnModel& model, const std::vector<data::Sample>& samples) {
  Matrix z(samples.size(), model.embedding_dim());
  Trace tr;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    forward(model, samples[n].features, tr);
    std::copy(tr.z.begin(), tr.z.end(), z.row(n).begin());
  }
  return z;
}

Vector logits_from_embedding(const TpnModel& model, std::span<const double> z) {
  const std::size_t d = model.embedding_dim();
  const std::size_t K = model.num_classes();
  if (z.size() != d) throw DimensionError("embedding length does not match the TPN head");
  Vector s(K, 0.0);
  kernels::active().gemv_t(model.params().data() + model.layout().head, d, K, z.data(), s.data(),
                           false);
  return s;
}

PriorPrediction prior_predict(const TpnModel& model, const std::vector<data::Sample>& samples) {
  PriorPrediction out;
  out.embeddings = encode_batch(model, samples);
  out.logits = Matrix(samples.size(), model.num_classes());
  out.labels.resize(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Vector s = logits_from_embedding(model, out.embeddings.row(n));
    std::copy(s.begin(), s.end(), out.logits.row(n).begin());
    out.labels[n] = static_cast<std::int32_t>(argmax(s));
  }
  return out;
}

void TpnTrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw ConfigError("tpn: epochs and batch_size must be positive");
  if (!(etf_weight >= 0.0)) throw ConfigError("tpn: etf_weight must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("tpn: label_smoothing must lie in [0, 1)");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("tpn: learning rate must be positive");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("tpn: weight decay must be >= 0");
}

LossTerms tpn_loss_and_grad(const TpnModel& model, std::span<const Vector* const> inputs,
                            std::span<const std::int32_t> labels, double etf_weight,
                            double label_smoothing, Vector* grad) {
  if (inputs.size() != labels.size()) throw DimensionError("inputs and labels differ in length");
  if (inputs.empty()) throw ContractError("tpn_loss_and_grad: empty batch");
  const std::size_t d = model.embedding_dim();
  const std::size_t K = model.num_classes();
  const auto& L = model.layout();
  const double B = static_cast<double>(inputs.size());
  const auto head = model.params().subspan(L.head, d * K);

  if (grad) grad->assign(L.total, 0.0);
  LossTerms terms;
  Trace tr;
  Vector ds(K), dz(d);
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const auto y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw DimensionError("label out of range");
    forward(model, *inputs[n], tr);
    const Vector s = logits_from_embedding(model, tr.z);
    const double lse = log_sum_exp(s);
    if (argmax(s) == static_cast<std::size_t>(y)) ++terms.correct;
    for (std::size_t k = 0; k < K; ++k) {
      const double q = (k == static_cast<std::size_t>(y) ? 1.0 - label_smoothing : 0.0) +
                       label_smoothing / static_cast<double>(K);
      terms.ce -= q * (s[k] - lse) / B;
      ds[k] = (std::exp(s[k] - lse) - q) / B;
    }
    if (!grad) continue;
    kernels::active().ger(1.0, tr.z.data(), ds.data(), grad->data() + L.head, d, K);
    kernels::active().gemv(head.data(), d, K, ds.data(), dz.data(), false);
    backward(model, tr, dz, *grad);
  }

  if (etf_weight > 0.0) {
    const EtfLossGrad e = etf_loss_and_grad(model.head());
    terms.etf = etf_weight * e.loss;
    if (grad) kernels::axpy(etf_weight, e.grad.values(), std::span<double>(*grad).subspan(L.head, d * K));
  }
  return terms;
}

std::string TpnTrainingLog::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back({{"epoch", e.epoch}, {"ce", e.ce}, {"etf", e.etf},
                           {"train_accuracy", e.train_accuracy}});
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

TpnModel train_tpn(const std::vector<data::Sample>& labeled, const TpnArch& arch,
                   const TpnTrainConfig& cfg, TpnTrainingLog* log) {
  arch.validate();
  cfg.validate();
  if (labeled.empty()) throw ContractError("train_tpn: labeled split is empty");
  const std::size_t F = arch.input_dim();
  const std::size_t K = arch.num_classes;

  std::vector<std::size_t> class_count(K, 0);
  Vector mean(F, 0.0), scale(F, 0.0);
  for (const auto& s : labeled) {
    if (s.features.size() != F) throw DimensionError("train_tpn: feature length mismatch");
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= K)
      throw DimensionError("train_tpn: label " + std::to_string(s.label) + " out of range");
    ++class_count[static_cast<std::size_t>(s.label)];
    for (std::size_t i = 0; i < F; ++i) mean[i] += s.features[i];
  }
  const double N = static_cast<double>(labeled.size());
  for (double& m : mean) m /= N;
  for (const auto& s : labeled)
    for (std::size_t i = 0; i < F; ++i) scale[i] += (s.features[i] - mean[i]) * (s.features[i] - mean[i]);
  for (double& v : scale) {
    v = std::sqrt(v / N);
    if (!(v > 1e-8)) v = 1.0;
  }

  TpnTrainingLog local_log;
  TpnTrainingLog& lg = log ? *log : local_log;
  lg = {};
  for (std::size_t k = 0; k < K; ++k)
    if (class_count[k] == 0) lg.warnings.push_back("class " + std::to_string(k) + " absent from labeled split");

  Rng init = Rng::derive(cfg.seed, "tpn/init");
  Rng order_rng = Rng::derive(cfg.seed, "tpn/shuffle");
  TpnModel model = TpnModel::initialize(arch, init);
  model.set_input_normalization(mean, scale);

  const double etf_weight = (K == 2 && !cfg.etf_for_binary) ? 0.0 : cfg.etf_weight;
  Optimizer opt(cfg.optimizer, model.layout().total);
  const auto mask = decay_mask(model);
  std::vector<std::size_t> order(labeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Vector grad;
  std::vector<const Vector*> xs;
  std::vector<std::int32_t> ys;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochRecord rec{epoch + 1};
    std::size_t correct = 0, batches = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      xs.clear();
      ys.clear();
      for (std::size_t i = start; i < end; ++i) {
        xs.push_back(&labeled[order[i]].features);
        ys.push_back(labeled[order[i]].label);
      }
      const LossTerms t = tpn_loss_and_grad(model, xs, ys, etf_weight, cfg.label_smoothing, &grad);
      if (!std::isfinite(t.total()) || !all_finite(grad))
        throw NumericError("train_tpn: non-finite loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(b) + " (ce=" + std::to_string(t.ce) +
                           ", etf=" + std::to_string(t.etf) + ")");
      opt.step(model.mutable_params(), grad, mask);
      rec.ce += t.ce;
      rec.etf += t.etf;
      correct += t.correct;
      ++batches;
    }
    rec.ce /= static_cast<double>(batches);
    rec.etf /= static_cast<double>(batches);
    rec.train_accuracy = static_cast<double>(correct) / N;
    lg.epochs.push_back(rec);
  }
  return model;
}

std::vector<std::uint8_t> encode_tpn(const TpnModel& model, const std::string& config_echo) {
  const TpnArch& a = model.arch();
  io::ByteWriter w;
  io::write_header(w, kMagic, kVersion);
  w.string(config_echo);
  w.u8(a.mode == EncoderMode::conv ? 0 : 1);
  for (std::size_t v : {a.channels, a.time_points, a.num_classes, a.temporal_filters,
                        a.depth_multiplier, a.separable_filters, a.temporal_kernel,
                        a.separable_kernel, a.pool1, a.pool2, a.mlp_hidden})
    w.u32(static_cast<std::uint32_t>(v));
  w.u64(model.input_mean().size());
  w.f64_array(model.input_mean());
  w.f64_array(model.input_scale());
  w.u64(model.params().size());
  w.f64_array(model.params());
  return w.buffer();
}

TpnModel decode_tpn(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  io::read_header(r, kMagic, kVersion);
  (void)r.string();
  TpnArch a;
  const auto mode = r.u8();
  if (mode > 1) throw FormatError("TPN checkpoint: unknown encoder mode");
  a.mode = mode == 0 ? EncoderMode::conv : EncoderMode::mlp;
  for (std::size_t* v : {&a.channels, &a.time_points, &a.num_classes, &a.temporal_filters,
                         &a.depth_multiplier, &a.separable_filters, &a.temporal_kernel,
                         &a.separable_kernel, &a.pool1, &a.pool2, &a.mlp_hidden})
    *v = r.u32();
  a.validate();
  const auto F = r.u64();
  if (F != a.input_dim()) throw DimensionError("TPN checkpoint: normalisation length mismatch");
  Vector mean = r.f64_array(F);
  Vector scale = r.f64_array(F);
  const auto n = r.u64();
  if (n != TpnLayout::of(a).total) throw DimensionError("TPN checkpoint: parameter count mismatch");
  Vector params = r.f64_array(n);
  if (r.remaining() != 0) throw FormatError("TPN checkpoint: trailing bytes");
  return TpnModel(a, std::move(params), std::move(mean), std::move(scale));
}

void save_tpn(const TpnModel& model, const std::filesystem::path& path, const std::string& config_echo) {
  io::write_file(path, encode_tpn(model, config_echo));
}

TpnModel load_tpn(const std::filesystem::path& path) { return decode_tpn(io::read_file(path)); }

}  // namespace scope::tpn
