#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtscid/error.hpp"
#include "mtscid/random.hpp"
#include "mtscid/spectral.hpp"
#include "mtscid/tape.hpp"
#include "mtscid/tensor.hpp"

namespace mtscid {

/// Architecture hyperparameters plus the ablation switches.
struct ModelConfig {
  std::size_t window = 100;  ///< L, timesteps per window
  std::size_t variates = 1;  ///< C
  std::size_t latent = 64;   ///< d
  std::vector<std::size_t> patch_sizes{10, 20};
  std::size_t kernel = 5;
  /// Prototype softmax temperature; sqrt(C) when unset.
  std::optional<double> tau;

  bool disable_taeb = false;  ///< drop the temporal autoencoder branch
  bool disable_iveb = false;  ///< drop the inter-variate encoder branch
  bool disable_patch_attention = false;
  bool conv_as_linear = false;       ///< per-timestep linear map instead of the convolution
  bool channel_mixing_conv = false;  ///< full C->C convolution instead of depthwise
  bool time_domain_mode = false;     ///< identity in place of dft/idft in both branches

  /// Number of spectral bins seen by the attention layers.
  std::size_t bins() const { return time_domain_mode ? window : window / 2 + 1; }

  double temperature() const {
    return tau ? *tau : std::sqrt(static_cast<double>(variates));
  }

  void Validate() const {
    if (disable_taeb && disable_iveb) {
      throw ConfigError("at most one branch may be disabled");
    }
    if (window < 1) throw ConfigError("window length must be >= 1");
    if (variates < 1) throw ConfigError("variate count must be >= 1");
    if (latent < 1) throw ConfigError("latent width d must be >= 1");
    if (tau && !(*tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!disable_taeb && !disable_patch_attention) {
      if (patch_sizes.empty()) throw ConfigError("at least one patch size is required");
      for (std::size_t p : patch_sizes) {
        if (p < 2) throw ConfigError("patch sizes must be >= 2");
        if (window % p != 0) {
          throw ConfigError("patch size " + std::to_string(p) +
                            " does not divide window length " + std::to_string(window));
        }
      }
    }
    if (!disable_iveb && !conv_as_linear) {
      if (kernel % 2 == 0 || kernel < 1 || kernel > window) {
        throw ConfigError("kernel size must be odd and in [1, L]");
      }
    }
    if (conv_as_linear && channel_mixing_conv) {
      throw ConfigError("conv_as_linear and channel_mixing_conv are exclusive");
    }
  }
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct TemporalBranchState {
  Tensor<T> w_real;  // [C, d]
  Tensor<T> w_imag;  // [C, d]; undefined in time-domain mode
  std::vector<Tensor<T>> map_matrices;  // one [n_i, p_i] per patch size
  Tensor<T> norm_scale;  // [d]
  Tensor<T> norm_shift;  // [d]
  Tensor<T> decoder_weight;  // [d, C]
  Tensor<T> decoder_bias;    // [C]
};

template <typename T>
struct InterVariateBranchState {
  /// [C, k] depthwise; [C, C, k] channel mixing; [C, C] when conv_as_linear.
  Tensor<T> conv_kernels;
  Tensor<T> conv_bias;   // [C]
  Tensor<T> norm_scale;  // [C]
  Tensor<T> norm_shift;  // [C]
};

/// All learnable tensors of both branches. A disabled branch has no state.
template <typename T>
struct ModelState {
  std::optional<TemporalBranchState<T>> temporal;
  std::optional<InterVariateBranchState<T>> inter;

  /// Named handles in a fixed order (shared storage, not copies).
  std::vector<NamedTensor<T>> Parameters() const {
    std::vector<NamedTensor<T>> out;
    if (temporal) {
      const auto& s = *temporal;
      out.push_back({"temporal.w_real", s.w_real});
      if (s.w_imag.defined()) out.push_back({"temporal.w_imag", s.w_imag});
      for (std::size_t i = 0; i < s.map_matrices.size(); ++i) {
        out.push_back({"temporal.map." + std::to_string(i), s.map_matrices[i]});
      }
      out.push_back({"temporal.norm_scale", s.norm_scale});
      out.push_back({"temporal.norm_shift", s.norm_shift});
      out.push_back({"temporal.decoder_weight", s.decoder_weight});
      out.push_back({"temporal.decoder_bias", s.decoder_bias});
    }
    if (inter) {
      const auto& s = *inter;
      out.push_back({"inter.conv_kernels", s.conv_kernels});
      out.push_back({"inter.conv_bias", s.conv_bias});
      out.push_back({"inter.norm_scale", s.norm_scale});
      out.push_back({"inter.norm_shift", s.norm_shift});
    }
    return out;
  }

  /// Deep copy of every parameter.
  ModelState Clone() const {
    ModelState copy = *this;
    for (auto& t : copy.MutableTensors()) t.get() = t.get().Clone();
    return copy;
  }

  std::vector<std::reference_wrapper<Tensor<T>>> MutableTensors() {
    std::vector<std::reference_wrapper<Tensor<T>>> out;
    if (temporal) {
      auto& s = *temporal;
      out.push_back(s.w_real);
      if (s.w_imag.defined()) out.push_back(s.w_imag);
      for (auto& m : s.map_matrices) out.push_back(m);
      out.push_back(s.norm_scale);
      out.push_back(s.norm_shift);
      out.push_back(s.decoder_weight);
      out.push_back(s.decoder_bias);
    }
    if (inter) {
      auto& s = *inter;
      out.push_back(s.conv_kernels);
      out.push_back(s.conv_bias);
      out.push_back(s.norm_scale);
      out.push_back(s.norm_shift);
    }
    return out;
  }

  /// Copies values from another state of identical layout into this one's
  /// storage.
  void AssignFrom(const ModelState& other) {
    auto dst = Parameters();
    auto src = other.Parameters();
    if (dst.size() != src.size()) throw ShapeError("state layout mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].tensor.shape() != src[i].tensor.shape()) {
        throw ShapeError("state layout mismatch at " + dst[i].name);
      }
      auto out = dst[i].tensor.mutable_values();
      auto in = src[i].tensor.values();
      std::copy(in.begin(), in.end(), out.begin());
    }
  }
};

/// Fixed sinusoidal memory M in R^{L x C}, M[i][j] = cos(2*pi*i*j / L).
template <typename T>
struct PrototypeBank {
  Tensor<T> matrix;  // [L, C]
  Tensor<T> matrix_t;  // [C, L]

  std::size_t rows() const { return matrix.dim(0); }
  std::size_t cols() const { return matrix.dim(1); }
};

template <typename T>
PrototypeBank<T> BuildPrototypes(std::size_t length, std::size_t variates) {
  if (length < 1 || variates < 1) throw ConfigError("prototype bank needs L, C >= 1");
  std::vector<T> m(length * variates), mt(length * variates);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < variates; ++j) {
      // i*j reduced mod L first; cos is periodic and the argument stays small.
      const double v = std::cos(2.0 * std::numbers::pi / static_cast<double>(length) *
                                static_cast<double>((i * j) % length));
      m[i * variates + j] = static_cast<T>(v);
      mt[j * length + i] = static_cast<T>(v);
    }
  }
  return {Tensor<T>({length, variates}, std::move(m)),
          Tensor<T>({variates, length}, std::move(mt))};
}

template <typename T>
struct ForwardOutput {
  Tensor<T> x_hat;  // [B, L, C]; undefined without the temporal branch
  Tensor<T> o;      // [B, L, C]; undefined without the inter-variate branch
  Tensor<T> w;      // [B, L, L]; undefined without the inter-variate branch
};

namespace detail {

template <typename T>
Tensor<T> UniformInit(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(NumElements(shape));
  for (auto& x : v) x = static_cast<T>(rng.Uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> Param(Shape shape, T value) {
  return Tensor<T>::Full(std::move(shape), value, true);
}

// Parameter-free scaled dot product self-attention with Q = K = V = v over
// the second-to-last axis.
template <typename T>
Tensor<T> SelfAttention(Tape<T>& tape, const Tensor<T>& v, double scale) {
  auto logits = tape.Scale(tape.MatMul(v, tape.Transpose(v)), static_cast<T>(scale));
  return tape.MatMul(tape.Softmax(logits, -1), v);
}

}  // namespace detail

/// Fan-in uniform initialization for weights, zeros for biases, ones / zeros
/// for layer-norm affine.
template <typename T>
ModelState<T> InitModelState(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  Rng rng(seed);
  const std::size_t C = cfg.variates, d = cfg.latent, L = cfg.window;
  ModelState<T> state;
  if (!cfg.disable_taeb) {
    TemporalBranchState<T> s;
    s.w_real = detail::UniformInit<T>(rng, {C, d}, C);
    if (!cfg.time_domain_mode) s.w_imag = detail::UniformInit<T>(rng, {C, d}, C);
    if (!cfg.disable_patch_attention) {
      for (std::size_t p : cfg.patch_sizes) {
        const std::size_t n = L / p;
        s.map_matrices.push_back(detail::UniformInit<T>(rng, {n, p}, n));
      }
    }
    s.norm_scale = detail::Param<T>({d}, T{1});
    s.norm_shift = detail::Param<T>({d}, T{0});
    s.decoder_weight = detail::UniformInit<T>(rng, {d, C}, d);
    s.decoder_bias = detail::Param<T>({C}, T{0});
    state.temporal = std::move(s);
  }
  if (!cfg.disable_iveb) {
    InterVariateBranchState<T> s;
    const std::size_t k = cfg.kernel;
    if (cfg.conv_as_linear) {
      s.conv_kernels = detail::UniformInit<T>(rng, {C, C}, C);
    } else if (cfg.channel_mixing_conv) {
      s.conv_kernels = detail::UniformInit<T>(rng, {C, C, k}, C * k);
    } else {
      s.conv_kernels = detail::UniformInit<T>(rng, {C, k}, k);
    }
    s.conv_bias = detail::Param<T>({C}, T{0});
    s.norm_scale = detail::Param<T>({C}, T{1});
    s.norm_shift = detail::Param<T>({C}, T{0});
    state.inter = std::move(s);
  }
  return state;
}

namespace detail {

inline void CheckInput(const Shape& shape, const ModelConfig& cfg) {
  if (shape.size() != 3 || shape[1] != cfg.window || shape[2] != cfg.variates) {
    throw ShapeError("model input must be [B, " + std::to_string(cfg.window) + ", " +
                     std::to_string(cfg.variates) + "], got " + ShapeToString(shape));
  }
}

}  // namespace detail

/// Temporal autoencoder: spectral projection and attention, back to time
/// domain with residual and layer norm, multi-scale patch attention maps,
/// then a linear decoder. x: [B, L, C] -> x_hat: [B, L, C].
template <typename T>
Tensor<T> TemporalForward(Tape<T>& tape, const Tensor<T>& x, const TemporalBranchState<T>& s,
                          const ModelConfig& cfg, const Dft<T>& dft) {
  detail::CheckInput(x.shape(), cfg);
  const std::size_t batch = x.dim(0), d = cfg.latent;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor<T> z;
  if (cfg.time_domain_mode) {
    auto v = tape.MatMul(x, s.w_real);
    z = tape.Add(detail::SelfAttention(tape, v, attn_scale), v);
  } else {
    auto spec = dft.Forward(tape, x, SpectralAxis::kRows);  // [B, f, C]
    auto vr = tape.MatMul(spec.real, s.w_real);             // [B, f, d]
    auto vi = tape.MatMul(spec.imag, s.w_imag);
    Spectrum<T> hidden{tape.Add(detail::SelfAttention(tape, vr, attn_scale), vr),
                       tape.Add(detail::SelfAttention(tape, vi, attn_scale), vi)};
    z = dft.Inverse(tape, hidden, SpectralAxis::kRows);     // [B, L, d]
  }
  z = tape.LayerNorm(z, s.norm_scale, s.norm_shift, -1);

  Tensor<T> z_hat = z;
  if (!cfg.disable_patch_attention) {
    Tensor<T> acc;
    for (std::size_t i = 0; i < cfg.patch_sizes.size(); ++i) {
      const std::size_t p = cfg.patch_sizes[i];
      auto zp = tape.Patch(z, p);  // [(B d), n, p]
      auto logits = tape.Scale(tape.MatMul(zp, tape.Transpose(zp)),
                               static_cast<T>(1.0 / std::sqrt(static_cast<double>(p))));
      auto mapped = tape.MatMul(tape.Softmax(logits, -1), s.map_matrices[i]);  // [(B d), n, p]
      // Every scale unpatches to [B, L, d], so the average is taken there.
      auto back = tape.Unpatch(mapped, batch, d);
      acc = acc.defined() ? tape.Add(acc, back) : back;
    }
    z_hat = cfg.patch_sizes.size() == 1
                ? acc
                : tape.Scale(acc, static_cast<T>(1.0 / static_cast<double>(cfg.patch_sizes.size())));
  }
  return tape.Add(tape.MatMul(z_hat, s.decoder_weight), s.decoder_bias);
}

/// Inter-variate encoder: local convolution, spectral attention across
/// variates, back to time domain with residual x and layer norm over C.
/// x: [B, L, C] -> o: [B, L, C].
template <typename T>
Tensor<T> InterVariateForward(Tape<T>& tape, const Tensor<T>& x,
                              const InterVariateBranchState<T>& s, const ModelConfig& cfg,
                              const Dft<T>& dft) {
  detail::CheckInput(x.shape(), cfg);
  Tensor<T> t;  // [B, C, L]
  if (cfg.conv_as_linear) {
    t = tape.Transpose(tape.Add(tape.MatMul(x, s.conv_kernels), s.conv_bias));
  } else if (cfg.channel_mixing_conv) {
    t = tape.Conv1d(x, s.conv_kernels, s.conv_bias);
  } else {
    t = tape.Conv1dDepthwise(x, s.conv_kernels, s.conv_bias);
  }
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.bins()));
  Tensor<T> back;  // [B, C, L]
  if (cfg.time_domain_mode) {
    back = detail::SelfAttention(tape, t, attn_scale);
  } else {
    auto spec = dft.Forward(tape, t, SpectralAxis::kLast);  // [B, C, f]
    Spectrum<T> mixed{detail::SelfAttention(tape, spec.real, attn_scale),
                      detail::SelfAttention(tape, spec.imag, attn_scale)};
    back = dft.Inverse(tape, mixed, SpectralAxis::kLast);
  }
  return tape.LayerNorm(tape.Add(tape.Transpose(back), x), s.norm_scale, s.norm_shift, -1);
}

/// w[b][t][i] = softmax_i(<o[b][t], M[i]> / tau). o: [B, L, C] -> [B, L, L].
template <typename T>
Tensor<T> PrototypeAttention(Tape<T>& tape, const Tensor<T>& o, const PrototypeBank<T>& bank,
                             double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (o.rank() < 2 || o.dim(-1) != bank.cols()) {
    throw ShapeError("prototype attention: representation width " +
                     std::to_string(o.dim(-1)) + " != prototype columns " +
                     std::to_string(bank.cols()));
  }
  return tape.Softmax(tape.Scale(tape.MatMul(o, bank.matrix_t), static_cast<T>(1.0 / tau)), -1);
}

/// The dual-branch network with its fixed prototype bank.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed)
      : Model(cfg, InitModelState<T>(cfg, seed)) {}

  Model(ModelConfig cfg, ModelState<T> state)
      : cfg_(std::move(cfg)),
        state_(std::move(state)),
        bank_(BuildPrototypes<T>(cfg_.window, cfg_.variates)),
        dft_(cfg_.window) {
    cfg_.Validate();
    CheckLayout();
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelState<T>& state() const { return state_; }
  ModelState<T>& mutable_state() { return state_; }
  const PrototypeBank<T>& prototypes() const { return bank_; }
  std::vector<NamedTensor<T>> Parameters() const { return state_.Parameters(); }

  ForwardOutput<T> Forward(Tape<T>& tape, const Tensor<T>& x) const {
    detail::CheckInput(x.shape(), cfg_);
    ForwardOutput<T> out;
    if (state_.temporal) out.x_hat = TemporalForward(tape, x, *state_.temporal, cfg_, dft_);
    if (state_.inter) {
      out.o = InterVariateForward(tape, x, *state_.inter, cfg_, dft_);
      out.w = PrototypeAttention(tape, out.o, bank_, cfg_.temperature());
    }
    return out;
  }

 private:
  void CheckLayout() const {
    if (cfg_.disable_taeb == state_.temporal.has_value() ||
        cfg_.disable_iveb == state_.inter.has_value()) {
      throw ConfigError("model state does not match enabled branches");
    }
    // Compare against a freshly initialized layout.
    const auto ref = InitModelState<T>(cfg_, 0).Parameters();
    const auto got = state_.Parameters();
    if (ref.size() != got.size()) throw ShapeError("model state has wrong parameter count");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (ref[i].tensor.shape() != got[i].tensor.shape()) {
        throw ShapeError("parameter " + got[i].name + " has shape " +
                         ShapeToString(got[i].tensor.shape()) + ", expected " +
                         ShapeToString(ref[i].tensor.shape()));
      }
    }
  }

  ModelConfig cfg_;
  ModelState<T> state_;
  PrototypeBank<T> bank_;
  Dft<T> dft_;
};

}  // namespace mtscid
