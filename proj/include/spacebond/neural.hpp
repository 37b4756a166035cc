#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "spacebond/embedding_store.hpp"
#include "spacebond/pseudo_pairs.hpp"
#include "spacebond/rng.hpp"

namespace spacebond::nn {

enum class Activation : std::uint8_t { identity = 0, gelu = 1 };

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

template <typename Real>
struct Linear {
  BasicMatrix<Real> weight;  // in × out
  std::vector<Real> bias;    // out

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

template <typename Real>
struct ProjectorGrad {
  std::vector<Linear<Real>> layers;
};

/// MLP projector with row-L2-normalized output. Activation sits between
/// layers, never after the last one.
template <typename Real = float>
class Projector {
 public:
  std::vector<Linear<Real>> layers;
  Activation activation = Activation::gelu;

  /// Linear(d_in→hidden) + GELU + Linear(hidden→d_out), uniform fan-in init.
  static Projector mlp(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::uint64_t seed) {
    if (d_in == 0 || hidden == 0 || d_out == 0) throw SpaceBondError("projector dimensions must be positive");
    Projector p;
    Rng rng(seed);
    p.layers.push_back(init_linear(d_in, hidden, rng));
    p.layers.push_back(init_linear(hidden, d_out, rng));
    return p;
  }

  static Projector identity(std::size_t d) {
    Projector p;
    p.activation = Activation::identity;
    Linear<Real> l{BasicMatrix<Real>(d, d), std::vector<Real>(d, Real(0))};
    for (std::size_t i = 0; i < d; ++i) l.weight(i, i) = Real(1);
    p.layers.push_back(std::move(l));
    return p;
  }

  std::size_t d_in() const { return layers.front().in(); }
  std::size_t d_out() const { return layers.back().out(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.in() * l.out() + l.out();
    return n;
  }

  struct Tape {
    std::vector<BasicMatrix<Real>> inputs;  // input to each layer
    std::vector<BasicMatrix<Real>> pre;     // pre-activation output of each hidden layer
    BasicMatrix<Real> output;               // normalized output
    std::vector<double> norms;              // row norms before normalization
  };

  BasicMatrix<Real> forward(const BasicMatrix<Real>& x) const {
    Tape tape;
    return forward(x, tape);
  }

  BasicMatrix<Real> forward(const BasicMatrix<Real>& x, Tape& tape) const {
    if (layers.empty()) throw SpaceBondError("projector has no layers");
    if (x.cols() != d_in()) {
      throw SpaceBondError("projector_forward: input has " + std::to_string(x.cols()) +
                           " columns, expected " + std::to_string(d_in()));
    }
    tape.inputs.clear();
    tape.pre.clear();
    BasicMatrix<Real> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      tape.inputs.push_back(h);
      BasicMatrix<Real> z = matmul(h, layers[l].weight);
      for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += layers[l].bias[j];
      }
      if (l + 1 < layers.size()) {
        tape.pre.push_back(z);
        if (activation == Activation::gelu) {
          for (Real& v : z.flat()) v = static_cast<Real>(gelu(static_cast<double>(v)));
        }
      }
      h = std::move(z);
    }
    tape.norms.assign(h.rows(), 0.0);
    for (std::size_t i = 0; i < h.rows(); ++i) {
      const double n = row_norm<Real>(h.row(i));
      if (!(n > 0.0) || !std::isfinite(n)) throw SpaceBondError("projector output row has zero or non-finite norm");
      tape.norms[i] = n;
      for (Real& v : h.row(i)) v = static_cast<Real>(static_cast<double>(v) / n);
    }
    tape.output = h;
    return h;
  }

  ProjectorGrad<Real> zero_grad() const {
    ProjectorGrad<Real> g;
    for (const auto& l : layers) {
      g.layers.push_back({BasicMatrix<Real>(l.in(), l.out()), std::vector<Real>(l.out(), Real(0))});
    }
    return g;
  }

  /// Accumulates d(loss)/d(params) into `grad`, given d(loss)/d(output).
  void backward(const Tape& tape, const BasicMatrix<Real>& d_output, ProjectorGrad<Real>& grad) const {
    const auto& y = tape.output;
    BasicMatrix<Real> dz(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += static_cast<double>(y(i, j)) * d_output(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        dz(i, j) = static_cast<Real>((d_output(i, j) - y(i, j) * dot) / tape.norms[i]);
      }
    }
    for (std::size_t l = layers.size(); l-- > 0;) {
      auto& gl = grad.layers[l];
      const BasicMatrix<Real> gw = matmul_at(tape.inputs[l], dz);
      auto gflat = gl.weight.flat();
      auto wflat = gw.flat();
      for (std::size_t k = 0; k < gflat.size(); ++k) gflat[k] += wflat[k];
      for (std::size_t j = 0; j < dz.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < dz.rows(); ++i) s += dz(i, j);
        gl.bias[j] += static_cast<Real>(s);
      }
      if (l == 0) break;
      BasicMatrix<Real> dh = matmul_bt(dz, layers[l].weight);
      if (activation == Activation::gelu) {
        const auto& pre = tape.pre[l - 1];
        auto dflat = dh.flat();
        auto pflat = pre.flat();
        for (std::size_t k = 0; k < dflat.size(); ++k) {
          dflat[k] = static_cast<Real>(dflat[k] * gelu_grad(static_cast<double>(pflat[k])));
        }
      }
      dz = std::move(dh);
    }
  }

  template <typename Other>
  Projector<Other> cast() const {
    Projector<Other> p;
    p.activation = activation;
    for (const auto& l : layers) {
      p.layers.push_back({l.weight.template cast<Other>(), std::vector<Other>(l.bias.begin(), l.bias.end())});
    }
    return p;
  }

  friend bool operator==(const Projector& a, const Projector& b) {
    if (a.activation != b.activation || a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      if (!(a.layers[l].weight == b.layers[l].weight) || a.layers[l].bias != b.layers[l].bias) return false;
    }
    return true;
  }

 private:
  static Linear<Real> init_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear<Real> l{BasicMatrix<Real>(in, out), std::vector<Real>(out)};
    for (Real& w : l.weight.flat()) w = static_cast<Real>(rng.uniform(-bound, bound));
    for (Real& b : l.bias) b = static_cast<Real>(rng.uniform(-bound, bound));
    return l;
  }
};

// ---------------------------------------------------------------------------
// Symmetric InfoNCE.

template <typename Real>
struct InfoNceResult {
  double loss = 0.0;
  BasicMatrix<Real> grad_a;
  BasicMatrix<Real> grad_b;
};

namespace detail {

/// Cross-entropy of softmax(logits) against `target`, and the softmax.
inline double cross_entropy(const std::vector<double>& logits, std::size_t target, std::vector<double>& probs) {
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  probs.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    probs[j] = std::exp(logits[j] - mx);
    z += probs[j];
  }
  for (auto& p : probs) p /= z;
  return -(logits[target] - mx - std::log(z));
}

}  // namespace detail

/// loss = ½ [mean_i CE(row i of L, i) + mean_j CE(column j of L, j)],
/// L = a·bᵀ / temperature.
template <typename Real>
InfoNceResult<Real> infonce(const BasicMatrix<Real>& a, const BasicMatrix<Real>& b, double temperature,
                            bool with_grad = true) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw SpaceBondError("infonce: shape mismatch");
  if (!(temperature > 0.0)) throw SpaceBondError("infonce: temperature must be > 0");
  const std::size_t n = a.rows();
  if (n == 0) throw SpaceBondError("infonce: empty batch");
  const BasicMatrix<Real> sim = matmul_bt(a, b);

  std::vector<double> logits(n), probs;
  BasicMatrix<double> g(with_grad ? n : 0, with_grad ? n : 0);
  const double half_over_n = 0.5 / static_cast<double>(n);
  double row_loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits[j] = static_cast<double>(sim(i, j)) / temperature;
    row_loss += detail::cross_entropy(logits, i, probs);
    if (with_grad) {
      for (std::size_t j = 0; j < n; ++j) g(i, j) += half_over_n * (probs[j] - (i == j ? 1.0 : 0.0));
    }
  }
  double col_loss = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) logits[i] = static_cast<double>(sim(i, j)) / temperature;
    col_loss += detail::cross_entropy(logits, j, probs);
    if (with_grad) {
      for (std::size_t i = 0; i < n; ++i) g(i, j) += half_over_n * (probs[i] - (i == j ? 1.0 : 0.0));
    }
  }
  InfoNceResult<Real> out;
  out.loss = 0.5 * (row_loss / static_cast<double>(n) + col_loss / static_cast<double>(n));
  if (with_grad) {
    BasicMatrix<Real> gs(n, n);
    for (std::size_t k = 0; k < n * n; ++k) gs.flat()[k] = static_cast<Real>(g.flat()[k] / temperature);
    out.grad_a = matmul(gs, b);
    out.grad_b = matmul_at(gs, a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bond losses.

enum class LossKind { displacement, combination };

inline std::string_view to_string(LossKind k) { return k == LossKind::displacement ? "displacement" : "combination"; }

template <typename Real>
struct LossResult {
  double loss = 0.0;
  ProjectorGrad<Real> grad;
};

namespace detail {

template <typename Real>
BasicMatrix<Real> prepared(const PseudoPairBatch& batch, SpaceRole space, Modality m) {
  return normalized_rows(batch.get(space, m)).template cast<Real>();
}

}  // namespace detail

/// Sum of the six InfoNCE terms pairing fixed targets with projected inputs.
/// `project_inputs` go through ψ; every (target, projected) pair contributes
/// one term. `projected_first` selects the argument order.
template <typename Real>
LossResult<Real> paired_infonce_loss(const Projector<Real>& psi, const std::vector<BasicMatrix<Real>>& targets,
                                     const std::vector<BasicMatrix<Real>>& inputs, double temperature,
                                     bool projected_first, bool with_grad = true) {
  if (!(temperature > 0.0)) throw SpaceBondError("bond loss: temperature must be > 0");
  LossResult<Real> out;
  if (with_grad) out.grad = psi.zero_grad();
  for (const auto& x : inputs) {
    typename Projector<Real>::Tape tape;
    const auto y = psi.forward(x, tape);
    BasicMatrix<Real> dy(y.rows(), y.cols());
    for (const auto& t : targets) {
      if (t.rows() != y.rows() || t.cols() != y.cols()) {
        throw SpaceBondError("bond loss: shape mismatch between target and projected matrix");
      }
      const auto r = projected_first ? infonce(y, t, temperature, with_grad) : infonce(t, y, temperature, with_grad);
      out.loss += r.loss;
      if (with_grad) {
        const auto& gy = projected_first ? r.grad_a : r.grad_b;
        auto d = dy.flat();
        auto s = gy.flat();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
      }
    }
    if (with_grad) psi.backward(tape, dy, out.grad);
  }
  return out;
}

/// Displacement bond: expert anchors (T̃, Ṽ of the image-text expert) against
/// ψ(T̃ᵘ), ψ(Ṽᵘ), ψ(Ãᵘ).
template <typename Real>
LossResult<Real> loss_displacement(const PseudoPairBatch& batch, const Projector<Real>& psi, double temperature,
                                   bool with_grad = true) {
  if (!(temperature > 0.0)) throw SpaceBondError("loss_displacement: temperature must be > 0");
  using detail::prepared;
  const std::vector<BasicMatrix<Real>> targets = {
      prepared<Real>(batch, SpaceRole::expert, Modality::text),
      prepared<Real>(batch, SpaceRole::expert, Modality::image)};
  const std::vector<BasicMatrix<Real>> inputs = {
      prepared<Real>(batch, SpaceRole::unified, Modality::text),
      prepared<Real>(batch, SpaceRole::unified, Modality::image),
      prepared<Real>(batch, SpaceRole::unified, Modality::audio)};
  return paired_infonce_loss(psi, targets, inputs, temperature, false, with_grad);
}

/// Combination bond: ψ(T̃ᵃᵗ), ψ(Ãᵃᵗ) against T̃ᵘ, Ṽᵘ, Ãᵘ.
template <typename Real>
LossResult<Real> loss_combination(const PseudoPairBatch& batch, const Projector<Real>& psi, double temperature,
                                  bool with_grad = true) {
  if (!(temperature > 0.0)) throw SpaceBondError("loss_combination: temperature must be > 0");
  using detail::prepared;
  const std::vector<BasicMatrix<Real>> targets = {
      prepared<Real>(batch, SpaceRole::unified, Modality::text),
      prepared<Real>(batch, SpaceRole::unified, Modality::image),
      prepared<Real>(batch, SpaceRole::unified, Modality::audio)};
  const std::vector<BasicMatrix<Real>> inputs = {
      prepared<Real>(batch, SpaceRole::expert, Modality::text),
      prepared<Real>(batch, SpaceRole::expert, Modality::audio)};
  return paired_infonce_loss(psi, targets, inputs, temperature, true, with_grad);
}

template <typename Real>
LossResult<Real> bond_loss(LossKind kind, const PseudoPairBatch& batch, const Projector<Real>& psi,
                           double temperature, bool with_grad = true) {
  return kind == LossKind::displacement ? loss_displacement(batch, psi, temperature, with_grad)
                                        : loss_combination(batch, psi, temperature, with_grad);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker.

struct TensorCheck {
  std::string name;
  double max_abs_error = 0.0;
  double relative_error = 0.0;  // max |analytic - numeric| / max(|analytic|, |numeric|) over the tensor
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;

  double worst_relative_error() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.relative_error);
    return w;
  }
};

/// Central differences on every parameter of `psi` against the analytic
/// gradient returned by `loss`.
inline GradCheckReport check_gradients(
    const Projector<double>& psi,
    const std::function<LossResult<double>(const Projector<double>&, bool with_grad)>& loss, double eps = 1e-3) {
  const auto analytic = loss(psi, true).grad;
  Projector<double> probe = psi;
  GradCheckReport report;
  auto check = [&](std::span<double> param, std::span<const double> grad, std::string name) {
    TensorCheck tc{std::move(name)};
    double scale = 0.0;
    for (std::size_t k = 0; k < param.size(); ++k) {
      const double saved = param[k];
      param[k] = saved + eps;
      const double up = loss(probe, false).loss;
      param[k] = saved - eps;
      const double down = loss(probe, false).loss;
      param[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      tc.max_abs_error = std::max(tc.max_abs_error, std::abs(numeric - grad[k]));
      scale = std::max({scale, std::abs(numeric), std::abs(grad[k])});
    }
    tc.relative_error = scale > 0.0 ? tc.max_abs_error / scale : tc.max_abs_error;
    report.tensors.push_back(tc);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    check(probe.layers[l].weight.flat(), analytic.layers[l].weight.flat(), "layer" + std::to_string(l) + ".weight");
    check(probe.layers[l].bias, analytic.layers[l].bias, "layer" + std::to_string(l) + ".bias");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update, in place.
template <typename Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw SpaceBondError("adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw SpaceBondError("adam_step: state shape mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = static_cast<double>(grads[k]);
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] = static_cast<Real>(static_cast<double>(params[k]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

/// Adam over every tensor of a projector.
template <typename Real>
class ProjectorOptimizer {
 public:
  explicit ProjectorOptimizer(AdamConfig cfg) : cfg_(cfg) {}

  void step(Projector<Real>& p, const ProjectorGrad<Real>& g) {
    if (states_.empty()) states_.resize(2 * p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      adam_step<Real>(p.layers[l].weight.flat(), g.layers[l].weight.flat(), states_[2 * l], cfg_);
      adam_step<Real>(p.layers[l].bias, g.layers[l].bias, states_[2 * l + 1], cfg_);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<AdamState> states_;
};

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 5;
  double infonce_temperature = 1.0 / 50.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t hidden = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || !(infonce_temperature > 0.0) || hidden == 0 ||
        !(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) || !(adam_epsilon > 0.0)) {
      throw SpaceBondError("invalid training configuration");
    }
  }
};

/// Feeds every batch of one epoch, in order, to the sink.
using BatchSink = std::function<void(const PseudoPairBatch&)>;
using EpochStream = std::function<void(std::size_t epoch, const BatchSink& sink)>;

struct TrainResult {
  Projector<float> projector;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

inline TrainResult train_projector(const EpochStream& stream, LossKind kind, std::size_t d_in, std::size_t d_out,
                                   const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result{Projector<float>::mlp(d_in, cfg.hidden, d_out, cfg.seed), {}};
  ProjectorOptimizer<float> opt({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t batches = 0;
    stream(epoch, [&](const PseudoPairBatch& batch) {
      auto r = bond_loss(kind, batch, result.projector, cfg.infonce_temperature);
      if (!std::isfinite(r.loss)) {
        throw SpaceBondError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      opt.step(result.projector, r.grad);
      total += r.loss;
      ++batches;
    });
    if (batches == 0) throw SpaceBondError("train_projector: empty batch stream");
    result.epoch_losses.push_back(total / static_cast<double>(batches));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: "PRJ1" | u32 layers | per layer (u32 rows, u32 cols, f32 W, f32 b) | u8 activation

inline std::string encode_projector(const Projector<float>& p) {
  std::string out = "PRJ1";
  io::put_u32(out, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    io::put_u32(out, static_cast<std::uint32_t>(l.in()));
    io::put_u32(out, static_cast<std::uint32_t>(l.out()));
    for (float w : l.weight.flat()) io::put_f32(out, w);
    for (float b : l.bias) io::put_f32(out, b);
  }
  out.push_back(static_cast<char>(p.activation));
  return out;
}

inline Projector<float> decode_projector(const std::string& buf, const std::string& origin) {
  auto need = [&](std::size_t pos, std::size_t n) {
    if (pos + n > buf.size()) throw SpaceBondError(origin + ": truncated projector checkpoint");
  };
  need(0, 8);
  if (buf.compare(0, 4, "PRJ1") != 0) throw SpaceBondError(origin + ": bad projector magic");
  const std::uint32_t count = io::get_u32(buf, 4);
  if (count == 0) throw SpaceBondError(origin + ": projector has no layers");
  Projector<float> p;
  std::size_t pos = 8;
  for (std::uint32_t l = 0; l < count; ++l) {
    need(pos, 8);
    const std::size_t rows = io::get_u32(buf, pos);
    const std::size_t cols = io::get_u32(buf, pos + 4);
    pos += 8;
    need(pos, (rows * cols + cols) * 4);
    Linear<float> layer{Matrix(rows, cols), std::vector<float>(cols)};
    for (auto& w : layer.weight.flat()) {
      w = io::get_f32(buf, pos);
      pos += 4;
    }
    for (auto& b : layer.bias) {
      b = io::get_f32(buf, pos);
      pos += 4;
    }
    if (!p.layers.empty() && p.layers.back().out() != rows) {
      throw SpaceBondError(origin + ": layer shapes do not chain");
    }
    p.layers.push_back(std::move(layer));
  }
  need(pos, 1);
  const auto tag = static_cast<std::uint8_t>(buf[pos]);
  if (tag > 1) throw SpaceBondError(origin + ": unknown activation tag");
  p.activation = static_cast<Activation>(tag);
  if (pos + 1 != buf.size()) throw SpaceBondError(origin + ": trailing bytes in projector checkpoint");
  return p;
}

inline void save_projector(const Projector<float>& p, const std::filesystem::path& path) {
  io::write_file(path, encode_projector(p));
}

inline Projector<float> load_projector(const std::filesystem::path& path) {
  return decode_projector(io::read_file(path), path.string());
}

}  // namespace spacebond::nn
