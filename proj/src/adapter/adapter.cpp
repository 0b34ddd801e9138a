#include "scope/adapter/adapter.hpp"

#include <cmath>

#include "scope/core/binary_io.hpp"
#include "scope/core/digest.hpp"
#include "scope/core/error.hpp"
#include "scope/core/kernels.hpp"
#include "scope/core/rng.hpp"

namespace scope::adapter {

namespace {

constexpr std::string_view kMagic = "SCOPEADA";
constexpr std::uint16_t kVersion = 1;
constexpr double kStdFloor = 1e-8;

double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

struct Forward {
  std::vector<Matrix> h;  // inputs of each adapted layer, then the final features
  std::vector<Matrix> r;
  std::vector<BranchTrace> branch;
  std::vector<ModTrace> mod;
  Vector pooled;
  Vector logits;
};

void run_adapted(const FrozenBackbone& bb, const AdapterModel& model, const Matrix& lower,
                 std::span<const double> varpi, Forward& f) {
  const std::size_t L = model.config().depth;
  const std::size_t N = bb.depth();
  const std::size_t D = bb.width();
  const std::size_t K = model.num_classes();
  if (lower.cols() != D || lower.rows() != bb.tokens())
    throw DimensionError("adapted forward: cached features have the wrong shape");
  if (L > 0 && varpi.size() != K) throw DimensionError("adapted forward: varpi must have K entries");
  f.h.assign(1, lower);
  f.r.resize(L);
  f.branch.resize(L);
  f.mod.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    f.r[i] = bb.branch(N - L + i, f.h[i], &f.branch[i]);
    Matrix out = modulate(f.r[i], varpi, model.layer_params(i), model.layer_layout(), model.config(), &f.mod[i]);
    Matrix next = f.h[i];
    kernels::axpy(1.0, out.values(), next.values());
    f.h.push_back(std::move(next));
  }
  const Matrix& top = f.h.back();
  f.pooled.assign(D, 0.0);
  for (std::size_t t = 0; t < top.rows(); ++t) kernels::axpy(1.0 / static_cast<double>(top.rows()), top.row(t), f.pooled);
  const auto p = model.params();
  const std::size_t ho = model.head_offset();
  f.logits.assign(K, 0.0);
  kernels::active().gemv(p.data() + ho, K, D, f.pooled.data(), f.logits.data(), false);
  for (std::size_t k = 0; k < K; ++k) f.logits[k] += p[ho + K * D + k];
}

}  // namespace

void BackboneConfig::validate() const {
  if (channels == 0 || time_points == 0 || width == 0 || hidden == 0)
    throw ConfigError("backbone: channels, time_points, width and hidden must be positive");
  if (patch == 0 || time_points % patch != 0)
    throw ConfigError("backbone: time_points must be a multiple of patch");
  if (!(bias_scale >= 0.0)) throw ConfigError("backbone: bias_scale must be >= 0");
  if (!(residual_scale >= 0.0)) throw ConfigError("backbone: residual_scale must be >= 0");
}

FrozenBackbone::FrozenBackbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t D = cfg_.width, H = cfg_.hidden, P = cfg_.channels * cfg_.patch, T = cfg_.tokens();
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  embed_w_ = take(D * P);
  embed_b_ = take(D);
  pos_ = take(T * D);
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    LayerOffsets o{};
    o.w1 = take(H * D);
    o.b1 = take(H);
    o.w2 = take(D * H);
    o.b2 = take(D);
    layers_.push_back(o);
  }
  params_.assign(off, 0.0);

  Rng rng = Rng::derive(cfg_.seed, "backbone/init");
  auto fill = [&](std::size_t at, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) params_[at + i] = sd * rng.normal();
  };
  const double gain = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(cfg_.depth, 1)));
  fill(embed_w_, D * P, 1.0 / std::sqrt(static_cast<double>(P)));
  fill(embed_b_, D, cfg_.bias_scale);
  fill(pos_, T * D, cfg_.bias_scale);
  for (const auto& o : layers_) {
    fill(o.w1, H * D, 1.0 / std::sqrt(static_cast<double>(D)));
    fill(o.b1, H, cfg_.bias_scale);
    fill(o.w2, D * H, gain * cfg_.residual_scale / std::sqrt(static_cast<double>(H)));
    fill(o.b2, D, gain * cfg_.bias_scale);
  }
}

std::uint64_t FrozenBackbone::digest() const noexcept { return digest64(params_); }

Matrix FrozenBackbone::embed(std::span<const double> x) const {
  if (x.size() != cfg_.input_dim())
    throw DimensionError("backbone input has " + std::to_string(x.size()) + " features, expected " +
                         std::to_string(cfg_.input_dim()));
  const std::size_t D = cfg_.width, P = cfg_.channels * cfg_.patch, T = cfg_.tokens();
  Matrix h(T, D);
  Vector patch(P);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < cfg_.channels; ++c)
      for (std::size_t j = 0; j < cfg_.patch; ++j)
        patch[c * cfg_.patch + j] = x[c * cfg_.time_points + t * cfg_.patch + j];
    auto row = h.row(t);
    kernels::active().gemv(params_.data() + embed_w_, D, P, patch.data(), row.data(), false);
    for (std::size_t d = 0; d < D; ++d) row[d] += params_[embed_b_ + d] + params_[pos_ + t * D + d];
  }
  return h;
}

Matrix FrozenBackbone::branch(std::size_t layer, const Matrix& h, BranchTrace* trace) const {
  if (layer >= layers_.size()) throw ContractError("backbone: layer index out of range");
  const std::size_t D = cfg_.width, H = cfg_.hidden, T = h.rows();
  if (h.cols() != D) throw DimensionError("backbone: feature width mismatch");
  const auto& o = layers_[layer];
  const auto& kt = kernels::active();
  Matrix pre(T, H), act(T, H), r(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    auto p = pre.row(t);
    kt.gemv(params_.data() + o.w1, H, D, h.row(t).data(), p.data(), false);
    auto a = act.row(t);
    for (std::size_t j = 0; j < H; ++j) {
      p[j] += params_[o.b1 + j];
      a[j] = silu(p[j]);
    }
    auto out = r.row(t);
    kt.gemv(params_.data() + o.w2, D, H, a.data(), out.data(), false);
    for (std::size_t d = 0; d < D; ++d) out[d] += params_[o.b2 + d];
  }
  if (trace) {
    trace->pre = std::move(pre);
    trace->act = std::move(act);
  }
  return r;
}

void FrozenBackbone::branch_backward(std::size_t layer, const BranchTrace& trace, const Matrix& dr,
                                     Matrix& dh) const {
  const std::size_t D = cfg_.width, H = cfg_.hidden, T = dr.rows();
  const auto& o = layers_[layer];
  const auto& kt = kernels::active();
  Vector da(H);
  for (std::size_t t = 0; t < T; ++t) {
    kt.gemv_t(params_.data() + o.w2, D, H, dr.row(t).data(), da.data(), false);
    for (std::size_t j = 0; j < H; ++j) da[j] *= silu_grad(trace.pre(t, j));
    kt.gemv_t(params_.data() + o.w1, H, D, da.data(), dh.row(t).data(), true);
  }
}

std::vector<Matrix> FrozenBackbone::forward_all(std::span<const double> x) const {
  std::vector<Matrix> hs;
  hs.push_back(embed(x));
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    Matrix next = hs.back();
    const Matrix r = branch(l, hs.back());
    kernels::axpy(1.0, r.values(), next.values());
    hs.push_back(std::move(next));
  }
  return hs;
}

Matrix FrozenBackbone::forward_to(std::span<const double> x, std::size_t upto) const {
  if (upto > cfg_.depth) throw ContractError("backbone: forward_to beyond the last layer");
  Matrix h = embed(x);
  for (std::size_t l = 0; l < upto; ++l) {
    const Matrix r = branch(l, h);
    kernels::axpy(1.0, r.values(), h.values());
  }
  return h;
}

void AdapterConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("adapter: lambda must be positive");
  if (!(lambda_proto > 0.0)) throw ConfigError("adapter: lambda_proto must be positive");
}

AdapterLayerLayout::AdapterLayerLayout(std::size_t width, std::size_t classes) : D(width), K(classes) {
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  w_self = take(4 * D * D);
  b_self = take(2 * D);
  w_proto = take(2 * D * K);
  b_proto = take(2 * D);
  w_gate = take(K);
  b_gate = take(1);
  size = off;
}

Matrix modulate(const Matrix& r, std::span<const double> varpi, std::span<const double> params,
                const AdapterLayerLayout& lay, const AdapterConfig& cfg, ModTrace* trace) {
  const std::size_t T = r.rows(), D = lay.D, K = lay.K;
  if (T == 0) throw ContractError("modulate: no tokens, temporal std undefined");
  if (r.cols() != D) throw DimensionError("modulate: feature width mismatch");
  if (varpi.size() != K) throw DimensionError("modulate: varpi must have K entries");
  if (params.size() != lay.size) throw DimensionError("modulate: adapter parameter block has the wrong size");
  const auto& kt = kernels::active();

  ModTrace local;
  ModTrace& m = trace ? *trace : local;
  m.mean.assign(D, 0.0);
  m.stddev.assign(D, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) m.mean[d] += r(t, d);
  for (double& v : m.mean) v /= static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const double c = r(t, d) - m.mean[d];
      m.stddev[d] += c * c;
    }
  for (double& v : m.stddev) v = std::sqrt(v / static_cast<double>(T) + kStdFloor);

  Vector c(2 * D);
  std::copy(m.mean.begin(), m.mean.end(), c.begin());
  std::copy(m.stddev.begin(), m.stddev.end(), c.begin() + static_cast<std::ptrdiff_t>(D));
  m.u.assign(2 * D, 0.0);
  kt.gemv(params.data() + lay.w_self, 2 * D, 2 * D, c.data(), m.u.data(), false);
  m.v_pre.assign(2 * D, 0.0);
  kt.gemv(params.data() + lay.w_proto, 2 * D, K, varpi.data(), m.v_pre.data(), false);
  m.v.resize(2 * D);
  for (std::size_t i = 0; i < 2 * D; ++i) {
    m.u[i] += params[lay.b_self + i];
    m.v_pre[i] += params[lay.b_proto + i];
    m.v[i] = cfg.lambda_proto * std::tanh(m.v_pre[i]);
  }
  m.gate_pre = kt.dot(params.data() + lay.w_gate, varpi.data(), K) + params[lay.b_gate];
  m.gate = sigmoid(m.gate_pre);

  m.d_alpha.resize(D);
  m.alpha.resize(D);
  m.beta.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    m.d_alpha[d] = m.u[d] + m.gate * m.v[d];
    m.beta[d] = m.u[D + d] + m.gate * m.v[D + d];
    m.alpha[d] = 1.0 + cfg.lambda * std::tanh(m.d_alpha[d]);
  }
  Matrix out(T, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) out(t, d) = m.alpha[d] * r(t, d) + m.beta[d];
  return out;
}

Matrix modulate_backward(const Matrix& r, std::span<const double> varpi, std::span<const double> params,
                         const AdapterLayerLayout& lay, const AdapterConfig& cfg, const ModTrace& m,
                         const Matrix& dout, std::span<double> grad) {
  const std::size_t T = r.rows(), D = lay.D, K = lay.K;
  const auto& kt = kernels::active();
  Matrix dr(T, D);
  Vector du(2 * D, 0.0);  // [d d_alpha; d beta]
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const double g = dout(t, d);
      du[d] += g * r(t, d);  // d alpha for now
      du[D + d] += g;
      dr(t, d) = m.alpha[d] * g;
    }
  for (std::size_t d = 0; d < D; ++d) {
    const double th = std::tanh(m.d_alpha[d]);
    du[d] *= cfg.lambda * (1.0 - th * th);
  }

  // Self branch.
  Vector c(2 * D);
  std::copy(m.mean.begin(), m.mean.end(), c.begin());
  std::copy(m.stddev.begin(), m.stddev.end(), c.begin() + static_cast<std::ptrdiff_t>(D));
  kt.ger(1.0, du.data(), c.data(), grad.data() + lay.w_self, 2 * D, 2 * D);
  for (std::size_t i = 0; i < 2 * D; ++i) grad[lay.b_self + i] += du[i];
  Vector dc(2 * D, 0.0);
  kt.gemv_t(params.data() + lay.w_self, 2 * D, 2 * D, du.data(), dc.data(), false);

  // Prototype branch and gate.
  double dgate = 0.0;
  Vector dv_pre(2 * D);
  for (std::size_t i = 0; i < 2 * D; ++i) {
    dgate += du[i] * m.v[i];
    const double th = std::tanh(m.v_pre[i]);
    dv_pre[i] = du[i] * m.gate * cfg.lambda_proto * (1.0 - th * th);
    grad[lay.b_proto + i] += dv_pre[i];
  }
  kt.ger(1.0, dv_pre.data(), varpi.data(), grad.data() + lay.w_proto, 2 * D, K);
  const double dgate_pre = dgate * m.gate * (1.0 - m.gate);
  for (std::size_t k = 0; k < K; ++k) grad[lay.w_gate + k] += dgate_pre * varpi[k];
  grad[lay.b_gate] += dgate_pre;

  // Statistics: dmu/dr = 1/T, dsigma/dr = (r - mu) / (T sigma).
  const double invT = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d)
      dr(t, d) += dc[d] * invT + dc[D + d] * (r(t, d) - m.mean[d]) * invT / m.stddev[d];
  return dr;
}

AdapterModel::AdapterModel(const AdapterConfig& cfg, std::size_t width, std::size_t classes)
    : cfg_(cfg), D_(width), K_(classes), layer_(width, classes) {
  cfg_.validate();
  if (width == 0 || classes == 0) throw ConfigError("adapter: width and classes must be positive");
  params_.assign(cfg_.depth * layer_.size + K_ * D_ + K_, 0.0);
}

AdapterModel AdapterModel::initialize(const AdapterConfig& cfg, std::size_t width, std::size_t classes,
                                      std::uint64_t seed) {
  AdapterModel m(cfg, width, classes);
  Rng rng = Rng::derive(seed, "adapter/head");
  const double sd = 1.0 / std::sqrt(static_cast<double>(width));
  for (std::size_t i = 0; i < classes * width; ++i) m.params_[m.head_offset() + i] = sd * rng.normal();
  return m;
}

Matrix lower_features(const FrozenBackbone& backbone, const AdapterModel& model, std::span<const double> x) {
  if (model.config().depth > backbone.depth())
    throw ConfigError("adapter depth " + std::to_string(model.config().depth) + " exceeds backbone depth " +
                      std::to_string(backbone.depth()));
  if (model.width() != backbone.width()) throw DimensionError("adapter width does not match the backbone");
  return backbone.forward_to(x, backbone.depth() - model.config().depth);
}

Vector adapted_logits(const FrozenBackbone& backbone, const AdapterModel& model, const Matrix& lower,
                      std::span<const double> varpi) {
  Forward f;
  run_adapted(backbone, model, lower, varpi, f);
  return f.logits;
}

Vector adapted_forward(const FrozenBackbone& backbone, const AdapterModel& model, std::span<const double> x,
                       std::span<const double> varpi) {
  return adapted_logits(backbone, model, lower_features(backbone, model, x), varpi);
}

Vector frozen_logits(const FrozenBackbone& backbone, const AdapterModel& model, std::span<const double> x) {
  const Matrix top = backbone.forward_to(x, backbone.depth());
  const std::size_t D = backbone.width(), K = model.num_classes();
  if (model.width() != D) throw DimensionError("adapter width does not match the backbone");
  Vector pooled(D, 0.0);
  for (std::size_t t = 0; t < top.rows(); ++t) kernels::axpy(1.0 / static_cast<double>(top.rows()), top.row(t), pooled);
  const auto p = model.params();
  Vector logits(K, 0.0);
  kernels::active().gemv(p.data() + model.head_offset(), K, D, pooled.data(), logits.data(), false);
  for (std::size_t k = 0; k < K; ++k) logits[k] += p[model.head_offset() + K * D + k];
  return logits;
}

double adapter_loss_and_grad(const FrozenBackbone& backbone, const AdapterModel& model,
                             std::span<const LossItem> items, Vector* grad) {
  const std::size_t L = model.config().depth, N = backbone.depth(), D = backbone.width(), K = model.num_classes();
  const auto& kt = kernels::active();
  if (grad) grad->assign(model.params().size(), 0.0);
  double loss = 0.0;
  Forward f;
  Vector dlogits(K), dpooled(D);
  for (const auto& it : items) {
    if (it.label < 0 || static_cast<std::size_t>(it.label) >= K) throw DimensionError("adapter loss: label out of range");
    if (it.weight == 0.0) continue;
    run_adapted(backbone, model, *it.lower, it.varpi, f);
    const double lse = log_sum_exp(f.logits);
    loss += it.weight * (lse - f.logits[static_cast<std::size_t>(it.label)]);
    if (!grad) continue;

    for (std::size_t k = 0; k < K; ++k)
      dlogits[k] = it.weight * (std::exp(f.logits[k] - lse) - (k == static_cast<std::size_t>(it.label) ? 1.0 : 0.0));
    const std::size_t ho = model.head_offset();
    kt.ger(1.0, dlogits.data(), f.pooled.data(), grad->data() + ho, K, D);
    for (std::size_t k = 0; k < K; ++k) (*grad)[ho + K * D + k] += dlogits[k];
    if (L == 0) continue;
    kt.gemv_t(model.params().data() + ho, K, D, dlogits.data(), dpooled.data(), false);

    const std::size_t T = it.lower->rows();
    Matrix dh(T, D);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) dh(t, d) = dpooled[d] / static_cast<double>(T);
    for (std::size_t i = L; i-- > 0;) {
      const std::span<double> g = std::span<double>(*grad).subspan(i * model.layer_layout().size, model.layer_layout().size);
      const Matrix dr = modulate_backward(f.r[i], it.varpi, model.layer_params(i), model.layer_layout(),
                                          model.config(), f.mod[i], dh, g);
      if (i == 0) break;  // nothing trainable below the first adapted layer
      backbone.branch_backward(N - L + i, f.branch[i], dr, dh);
    }
  }
  return loss;
}

double trainable_ratio(const FrozenBackbone& backbone, const AdapterModel& model) {
  const double t = static_cast<double>(model.params().size());
  return t / (t + static_cast<double>(backbone.parameter_count()));
}

std::vector<std::uint8_t> encode_adapter(const AdapterModel& model, const std::string& config_echo) {
  io::ByteWriter w;
  io::write_header(w, kMagic, kVersion);
  w.string(config_echo);
  w.u32(static_cast<std::uint32_t>(model.config().depth));
  w.f64(model.config().lambda);
  w.f64(model.config().lambda_proto);
  w.u32(static_cast<std::uint32_t>(model.width()));
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.u64(model.params().size());
  w.f64_array(model.params());
  return w.buffer();
}

AdapterModel decode_adapter(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  io::read_header(r, kMagic, kVersion);
  (void)r.string();
  AdapterConfig cfg;
  cfg.depth = r.u32();
  cfg.lambda = r.f64();
  cfg.lambda_proto = r.f64();
  const std::size_t D = r.u32();
  const std::size_t K = r.u32();
  AdapterModel m(cfg, D, K);
  const auto n = r.u64();
  if (n != m.params().size()) throw DimensionError("adapter checkpoint: parameter count mismatch");
  const Vector p = r.f64_array(n);
  if (r.remaining() != 0) throw FormatError("adapter checkpoint: trailing bytes");
  std::copy(p.begin(), p.end(), m.mutable_params().begin());
  return m;
}

void save_adapter(const AdapterModel& model, const std::filesystem::path& path, const std::string& config_echo) {
  io::write_file(path, encode_adapter(model, config_echo));
}

AdapterModel load_adapter(const std::filesystem::path& path) { return decode_adapter(io::read_file(path)); }

}  // namespace scope::adapter
