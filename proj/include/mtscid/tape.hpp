#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mtscid/error.hpp"
#include "mtscid/tensor.hpp"

namespace mtscid {

namespace detail {

inline std::vector<std::size_t> ContiguousStrides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

// Numpy-style broadcast of two shapes. Strides are expressed in the output
// rank; broadcast dimensions get stride 0.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;

  BroadcastPlan(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    out.assign(rank, 1);
    a_strides.assign(rank, 0);
    b_strides.assign(rank, 0);
    const auto sa = ContiguousStrides(a);
    const auto sb = ContiguousStrides(b);
    for (std::size_t i = 0; i < rank; ++i) {
      const std::size_t ia = i + a.size();
      const std::size_t ib = i + b.size();
      const std::size_t da = ia >= rank ? a[ia - rank] : 1;
      const std::size_t db = ib >= rank ? b[ib - rank] : 1;
      if (da != db && da != 1 && db != 1) {
        throw ShapeError("cannot broadcast " + ShapeToString(a) + " with " +
                         ShapeToString(b));
      }
      out[i] = std::max(da, db);
      if (ia >= rank && da != 1) a_strides[i] = sa[ia - rank];
      if (ib >= rank && db != 1) b_strides[i] = sb[ib - rank];
    }
  }

  // Calls fn(out_index, a_index, b_index) for every output element in
  // row-major order.
  template <typename Fn>
  void ForEach(Fn&& fn) const {
    const std::size_t total = NumElements(out);
    if (total == 0) return;
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t o = 0; o < total; ++o) {
      fn(o, ia, ib);
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        ia += a_strides[d];
        ib += b_strides[d];
        if (idx[d] < out[d]) break;
        ia -= a_strides[d] * out[d];
        ib -= b_strides[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

// Splits a shape around an axis into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;

  AxisSplit(const Shape& shape, std::size_t axis) {
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  }
};

}  // namespace detail

/// Records differentiable operations in execution order and replays them in
/// reverse to populate gradients. A tape built with recording disabled runs
/// the same forward math without keeping any graph (inference mode).
///
/// Tapes are not thread-safe; use one tape per thread.
template <typename T>
class Tape {
 public:
  using TensorT = Tensor<T>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void Clear() { nodes_.clear(); }

  /// Called with (position, op name) during Backward for each replayed op.
  void SetBackwardObserver(std::function<void(std::size_t, const std::string&)> fn) {
    observer_ = std::move(fn);
  }

  std::vector<std::string> OpNames() const {
    std::vector<std::string> names;
    names.reserve(nodes_.size());
    for (const auto& n : nodes_) names.push_back(n.name);
    return names;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backward. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void Backward(const TensorT& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ShapeError("backward requires a scalar loss");
    }
    if (!loss.requires_grad()) {
      throw Error("backward on a loss that is detached from every parameter");
    }
    for (auto& n : nodes_) n.output->grad.assign(n.output->values.size(), T{0});
    loss.impl_->EnsureGrad();
    loss.impl_->grad[0] += T{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (observer_) observer_(i, nodes_[i].name);
      nodes_[i].backward();
    }
  }

  // ---------------------------------------------------------------------------
  // Elementwise and reductions

  TensorT Add(const TensorT& a, const TensorT& b) {
    return Binary("add", a, b, [](T x, T y) { return x + y; },
                  [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
  }

  TensorT Sub(const TensorT& a, const TensorT& b) {
    return Binary("sub", a, b, [](T x, T y) { return x - y; },
                  [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
  }

  TensorT Mul(const TensorT& a, const TensorT& b) {
    return Binary("mul", a, b, [](T x, T y) { return x * y; },
                  [](T, T y) { return y; }, [](T x, T) { return x; });
  }

  TensorT Scale(const TensorT& a, T s) {
    return Unary("scale", a, [s](T x) { return x * s; },
                 [s](T, T) { return s; });
  }

  TensorT AddScalar(const TensorT& a, T s) {
    return Unary("add_scalar", a, [s](T x) { return x + s; },
                 [](T, T) { return T{1}; });
  }

  TensorT Square(const TensorT& a) {
    return Unary("square", a, [](T x) { return x * x; },
                 [](T x, T) { return T{2} * x; });
  }

  TensorT Log(const TensorT& a) {
    return Unary("log", a, [](T x) { return std::log(x); },
                 [](T x, T) { return T{1} / x; });
  }

  /// Sum of all elements.
  TensorT Sum(const TensorT& a) {
    T total{0};
    for (T v : a.values()) total += v;
    auto out = Make({}, {total}, "sum");
    RecordIf("sum", {a.impl_}, out, [ai = a.impl_, oi = out.impl_] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      const T g = oi->grad[0];
      for (auto& v : ai->grad) v += g;
    });
    return out;
  }

  TensorT Sum(const TensorT& a, int axis) { return AxisReduce("sum_axis", a, axis, false); }

  TensorT Mean(const TensorT& a) {
    return Scale(Sum(a), T{1} / static_cast<T>(a.numel()));
  }

  TensorT Mean(const TensorT& a, int axis) { return AxisReduce("mean_axis", a, axis, true); }

  /// Squared L2 norm of all elements.
  TensorT SqL2(const TensorT& a) {
    T total{0};
    for (T v : a.values()) total += v * v;
    auto out = Make({}, {total}, "sq_l2");
    RecordIf("sq_l2", {a.impl_}, out, [ai = a.impl_, oi = out.impl_] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < ai->values.size(); ++i) {
        ai->grad[i] += T{2} * ai->values[i] * g;
      }
    });
    return out;
  }

  TensorT SqL2(const TensorT& a, int axis) { return AxisReduce(Square(a), axis, "sq_l2_axis"); }

  // ---------------------------------------------------------------------------
  // Linear algebra and layout

  /// Batched matrix product. Leading batch dimensions broadcast.
  TensorT MatMul(const TensorT& a, const TensorT& b) {
    if (a.rank() < 2 || b.rank() < 2) {
      throw ShapeError("matmul requires rank >= 2 operands");
    }
    const std::size_t n = a.dim(-2);
    const std::size_t k = a.dim(-1);
    const std::size_t m = b.dim(-1);
    if (b.dim(-2) != k) {
      throw ShapeError("matmul inner dimension mismatch: " +
                       ShapeToString(a.shape()) + " x " + ShapeToString(b.shape()));
    }
    const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    auto plan = std::make_shared<detail::BroadcastPlan>(batch_a, batch_b);
    Shape out_shape = plan->out;
    out_shape.push_back(n);
    out_shape.push_back(m);
    std::vector<T> out(NumElements(out_shape), T{0});
    const T* av = a.impl_->values.data();
    const T* bv = b.impl_->values.data();
    plan->ForEach([&](std::size_t o, std::size_t ia, std::size_t ib) {
      const T* A = av + ia * n * k;
      const T* B = bv + ib * k * m;
      T* Cm = out.data() + o * n * m;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const T aik = A[i * k + kk];
          if (aik == T{0}) continue;
          const T* brow = B + kk * m;
          T* crow = Cm + i * m;
          for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
        }
      }
    });
    auto result = Make(std::move(out_shape), std::move(out), "matmul");
    RecordIf("matmul", {a.impl_, b.impl_}, result,
             [ai = a.impl_, bi = b.impl_, oi = result.impl_, plan, n, k, m] {
               const bool ga = ai->requires_grad;
               const bool gb = bi->requires_grad;
               if (ga) ai->EnsureGrad();
               if (gb) bi->EnsureGrad();
               plan->ForEach([&](std::size_t o, std::size_t ia, std::size_t ib) {
                 const T* A = ai->values.data() + ia * n * k;
                 const T* B = bi->values.data() + ib * k * m;
                 const T* dC = oi->grad.data() + o * n * m;
                 if (ga) {
                   T* dA = ai->grad.data() + ia * n * k;
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t kk = 0; kk < k; ++kk) {
                       T acc{0};
                       const T* brow = B + kk * m;
                       const T* crow = dC + i * m;
                       for (std::size_t j = 0; j < m; ++j) acc += crow[j] * brow[j];
                       dA[i * k + kk] += acc;
                     }
                   }
                 }
                 if (gb) {
                   T* dB = bi->grad.data() + ib * k * m;
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t kk = 0; kk < k; ++kk) {
                       const T aik = A[i * k + kk];
                       if (aik == T{0}) continue;
                       const T* crow = dC + i * m;
                       T* drow = dB + kk * m;
                       for (std::size_t j = 0; j < m; ++j) drow[j] += aik * crow[j];
                     }
                   }
                 }
               });
             });
    return result;
  }

  /// General axis permutation: output axis i is input axis perm[i].
  TensorT Permute(const TensorT& a, const std::vector<std::size_t>& perm) {
    const std::size_t rank = a.rank();
    if (perm.size() != rank) throw ShapeError("permute: wrong number of axes");
    std::vector<bool> seen(rank, false);
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
      if (perm[i] >= rank || seen[perm[i]]) {
        throw ShapeError("permute: invalid permutation");
      }
      seen[perm[i]] = true;
      out_shape[i] = a.shape()[perm[i]];
    }
    // Gather map from output position to input position.
    const auto in_strides = detail::ContiguousStrides(a.shape());
    std::vector<std::size_t> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) strides[i] = in_strides[perm[i]];
    auto map = std::make_shared<std::vector<std::size_t>>(a.numel());
    {
      std::vector<std::size_t> idx(rank, 0);
      std::size_t src = 0;
      for (std::size_t o = 0; o < map->size(); ++o) {
        (*map)[o] = src;
        for (std::size_t d = rank; d-- > 0;) {
          ++idx[d];
          src += strides[d];
          if (idx[d] < out_shape[d]) break;
          src -= strides[d] * out_shape[d];
          idx[d] = 0;
        }
      }
    }
    std::vector<T> out(a.numel());
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = a.impl_->values[(*map)[o]];
    auto result = Make(std::move(out_shape), std::move(out), "permute");
    RecordIf("permute", {a.impl_}, result, [ai = a.impl_, oi = result.impl_, map] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      for (std::size_t o = 0; o < map->size(); ++o) ai->grad[(*map)[o]] += oi->grad[o];
    });
    return result;
  }

  /// Swaps two axes.
  TensorT Transpose(const TensorT& a, int axis0 = -2, int axis1 = -1) {
    std::vector<std::size_t> perm(a.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[NormalizeAxis(axis0, a.rank())], perm[NormalizeAxis(axis1, a.rank())]);
    return Permute(a, perm);
  }

  TensorT Reshape(const TensorT& a, Shape shape) {
    if (NumElements(shape) != a.numel()) {
      throw ShapeError("reshape " + ShapeToString(a.shape()) + " -> " +
                       ShapeToString(shape));
    }
    auto result = Make(std::move(shape), a.impl_->values, "reshape");
    RecordIf("reshape", {a.impl_}, result, [ai = a.impl_, oi = result.impl_] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
    return result;
  }

  /// [B, L, d] -> [(B*d), L/p, p]: each latent channel becomes an
  /// independent sequence cut into contiguous patches of length p.
  TensorT Patch(const TensorT& z, std::size_t p) {
    if (z.rank() != 3) throw ShapeError("patch expects [B, L, d]");
    const std::size_t batch = z.dim(0), len = z.dim(1), ch = z.dim(2);
    if (p == 0 || len % p != 0) {
      throw ShapeError("patch size " + std::to_string(p) +
                       " does not divide length " + std::to_string(len));
    }
    return Reshape(Permute(z, {0, 2, 1}), {batch * ch, len / p, p});
  }

  /// Inverse of Patch: [(B*d), n, p] -> [B, n*p, d].
  TensorT Unpatch(const TensorT& y, std::size_t batch, std::size_t channels) {
    if (y.rank() != 3 || batch * channels != y.dim(0)) {
      throw ShapeError("unpatch: leading dimension is not batch*channels");
    }
    const std::size_t len = y.dim(1) * y.dim(2);
    return Permute(Reshape(y, {batch, channels, len}), {0, 2, 1});
  }

  // ---------------------------------------------------------------------------
  // Normalizations

  /// Numerically stable softmax along an axis.
  TensorT Softmax(const TensorT& a, int axis = -1) {
    const std::size_t ax = NormalizeAxis(axis, a.rank());
    if (!a.AllFinite()) throw NonFiniteError("softmax input contains non-finite values");
    const detail::AxisSplit s(a.shape(), ax);
    std::vector<T> out(a.numel());
    const T* x = a.impl_->values.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < s.length; ++j) mx = std::max(mx, x[base + j * s.inner]);
        T denom{0};
        for (std::size_t j = 0; j < s.length; ++j) {
          const T e = std::exp(x[base + j * s.inner] - mx);
          out[base + j * s.inner] = e;
          denom += e;
        }
        for (std::size_t j = 0; j < s.length; ++j) out[base + j * s.inner] /= denom;
      }
    }
    auto result = Make(a.shape(), std::move(out), "softmax");
    RecordIf("softmax", {a.impl_}, result, [ai = a.impl_, oi = result.impl_, s] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      const T* y = oi->values.data();
      const T* dy = oi->grad.data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.length * s.inner + in;
          T dot{0};
          for (std::size_t j = 0; j < s.length; ++j) {
            const std::size_t q = base + j * s.inner;
            dot += dy[q] * y[q];
          }
          for (std::size_t j = 0; j < s.length; ++j) {
            const std::size_t q = base + j * s.inner;
            ai->grad[q] += y[q] * (dy[q] - dot);
          }
        }
      }
    });
    return result;
  }

  /// Standardizes along an axis (biased variance), then applies the optional
  /// per-feature affine scale and shift (each of shape [axis length]).
  TensorT LayerNorm(const TensorT& x, const TensorT& scale, const TensorT& shift,
                    int axis = -1, T eps = T(1e-5)) {
    const std::size_t ax = NormalizeAxis(axis, x.rank());
    const detail::AxisSplit s(x.shape(), ax);
    if (s.length < 1) throw ShapeError("layer_norm over empty axis");
    const bool affine = scale.defined();
    if (affine != shift.defined()) {
      throw ShapeError("layer_norm: scale and shift must both be given or both omitted");
    }
    if (affine && (scale.numel() != s.length || shift.numel() != s.length)) {
      throw ShapeError("layer_norm: affine parameters must have length " +
                       std::to_string(s.length));
    }
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(s.outer * s.inner);
    std::vector<T> out(x.numel());
    const T* xv = x.impl_->values.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        T mean{0};
        for (std::size_t j = 0; j < s.length; ++j) mean += xv[base + j * s.inner];
        mean /= static_cast<T>(s.length);
        T var{0};
        for (std::size_t j = 0; j < s.length; ++j) {
          const T c = xv[base + j * s.inner] - mean;
          var += c * c;
        }
        var /= static_cast<T>(s.length);
        const T rstd = T{1} / std::sqrt(var + eps);
        (*inv_std)[o * s.inner + in] = rstd;
        for (std::size_t j = 0; j < s.length; ++j) {
          const std::size_t q = base + j * s.inner;
          const T h = (xv[q] - mean) * rstd;
          (*xhat)[q] = h;
          out[q] = affine ? h * scale.impl_->values[j] + shift.impl_->values[j] : h;
        }
      }
    }
    auto result = Make(x.shape(), std::move(out), "layer_norm");
    std::vector<std::shared_ptr<TensorData<T>>> inputs{x.impl_};
    if (affine) {
      inputs.push_back(scale.impl_);
      inputs.push_back(shift.impl_);
    }
    RecordIf("layer_norm", inputs, result,
             [xi = x.impl_, gi = affine ? scale.impl_ : nullptr,
              bi = affine ? shift.impl_ : nullptr, oi = result.impl_, xhat, inv_std, s] {
               const T* dy = oi->grad.data();
               if (gi && gi->requires_grad) gi->EnsureGrad();
               if (bi && bi->requires_grad) bi->EnsureGrad();
               if (xi->requires_grad) xi->EnsureGrad();
               const T n = static_cast<T>(s.length);
               for (std::size_t o = 0; o < s.outer; ++o) {
                 for (std::size_t in = 0; in < s.inner; ++in) {
                   const std::size_t base = o * s.length * s.inner + in;
                   T sum_g{0};
                   T sum_gh{0};
                   for (std::size_t j = 0; j < s.length; ++j) {
                     const std::size_t q = base + j * s.inner;
                     const T g = gi ? dy[q] * gi->values[j] : dy[q];
                     sum_g += g;
                     sum_gh += g * (*xhat)[q];
                     if (gi && gi->requires_grad) gi->grad[j] += dy[q] * (*xhat)[q];
                     if (bi && bi->requires_grad) bi->grad[j] += dy[q];
                   }
                   if (!xi->requires_grad) continue;
                   const T rstd = (*inv_std)[o * s.inner + in];
                   for (std::size_t j = 0; j < s.length; ++j) {
                     const std::size_t q = base + j * s.inner;
                     const T g = gi ? dy[q] * gi->values[j] : dy[q];
                     xi->grad[q] += rstd * (g - sum_g / n - (*xhat)[q] * sum_gh / n);
                   }
                 }
               }
             });
    return result;
  }

  // ---------------------------------------------------------------------------
  // Convolutions

  /// Per-variate "same"-padded 1D cross-correlation.
  /// x: [B, L, C], kernels: [C, k], bias: [C] (may be undefined) -> [B, C, L].
  TensorT Conv1dDepthwise(const TensorT& x, const TensorT& kernels, const TensorT& bias) {
    if (x.rank() != 3 || kernels.rank() != 2) {
      throw ShapeError("conv1d_depthwise expects x [B,L,C] and kernels [C,k]");
    }
    const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
    const std::size_t k = kernels.dim(1);
    if (kernels.dim(0) != ch) throw ShapeError("conv1d_depthwise: kernel count != C");
    if (k % 2 == 0) throw ShapeError("conv1d_depthwise: kernel size must be odd");
    if (len < k) throw ShapeError("conv1d_depthwise: sequence shorter than kernel");
    if (bias.defined() && bias.numel() != ch) throw ShapeError("conv1d_depthwise: bias != C");
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<T> out(batch * ch * len, T{0});
    const T* xv = x.impl_->values.data();
    const T* wv = kernels.impl_->values.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        T* yrow = out.data() + (b * ch + c) * len;
        const T bc = bias.defined() ? bias.impl_->values[c] : T{0};
        for (std::size_t t = 0; t < len; ++t) {
          T acc = bc;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            acc += wv[c * k + j] * xv[(b * len + static_cast<std::size_t>(src)) * ch + c];
          }
          yrow[t] = acc;
        }
      }
    }
    auto result = Make({batch, ch, len}, std::move(out), "conv1d_depthwise");
    std::vector<std::shared_ptr<TensorData<T>>> inputs{x.impl_, kernels.impl_};
    if (bias.defined()) inputs.push_back(bias.impl_);
    RecordIf("conv1d_depthwise", inputs, result,
             [xi = x.impl_, wi = kernels.impl_, bi = bias.defined() ? bias.impl_ : nullptr,
              oi = result.impl_, batch, len, ch, k, half] {
               if (xi->requires_grad) xi->EnsureGrad();
               if (wi->requires_grad) wi->EnsureGrad();
               if (bi && bi->requires_grad) bi->EnsureGrad();
               for (std::size_t b = 0; b < batch; ++b) {
                 for (std::size_t c = 0; c < ch; ++c) {
                   const T* dy = oi->grad.data() + (b * ch + c) * len;
                   for (std::size_t t = 0; t < len; ++t) {
                     const T g = dy[t];
                     if (bi && bi->requires_grad) bi->grad[c] += g;
                     for (std::size_t j = 0; j < k; ++j) {
                       const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
                       if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                       const std::size_t xq = (b * len + static_cast<std::size_t>(src)) * ch + c;
                       if (wi->requires_grad) wi->grad[c * k + j] += g * xi->values[xq];
                       if (xi->requires_grad) xi->grad[xq] += g * wi->values[c * k + j];
                     }
                   }
                 }
               }
             });
    return result;
  }

  /// Channel-mixing "same"-padded 1D cross-correlation.
  /// x: [B, L, C], weight: [Co, C, k], bias: [Co] (may be undefined) -> [B, Co, L].
  TensorT Conv1d(const TensorT& x, const TensorT& weight, const TensorT& bias) {
    if (x.rank() != 3 || weight.rank() != 3) {
      throw ShapeError("conv1d expects x [B,L,C] and weight [Co,C,k]");
    }
    const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
    const std::size_t co = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != ch) throw ShapeError("conv1d: weight input channels != C");
    if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
    if (len < k) throw ShapeError("conv1d: sequence shorter than kernel");
    if (bias.defined() && bias.numel() != co) throw ShapeError("conv1d: bias != Co");
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<T> out(batch * co * len, T{0});
    const T* xv = x.impl_->values.data();
    const T* wv = weight.impl_->values.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < co; ++o) {
        T* yrow = out.data() + (b * co + o) * len;
        const T bo = bias.defined() ? bias.impl_->values[o] : T{0};
        for (std::size_t t = 0; t < len; ++t) {
          T acc = bo;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const T* xrow = xv + (b * len + static_cast<std::size_t>(src)) * ch;
            for (std::size_t c = 0; c < ch; ++c) acc += wv[(o * ch + c) * k + j] * xrow[c];
          }
          yrow[t] = acc;
        }
      }
    }
    auto result = Make({batch, co, len}, std::move(out), "conv1d");
    std::vector<std::shared_ptr<TensorData<T>>> inputs{x.impl_, weight.impl_};
    if (bias.defined()) inputs.push_back(bias.impl_);
    RecordIf("conv1d", inputs, result,
             [xi = x.impl_, wi = weight.impl_, bi = bias.defined() ? bias.impl_ : nullptr,
              oi = result.impl_, batch, len, ch, co, k, half] {
               if (xi->requires_grad) xi->EnsureGrad();
               if (wi->requires_grad) wi->EnsureGrad();
               if (bi && bi->requires_grad) bi->EnsureGrad();
               for (std::size_t b = 0; b < batch; ++b) {
                 for (std::size_t o = 0; o < co; ++o) {
                   const T* dy = oi->grad.data() + (b * co + o) * len;
                   for (std::size_t t = 0; t < len; ++t) {
                     const T g = dy[t];
                     if (bi && bi->requires_grad) bi->grad[o] += g;
                     for (std::size_t j = 0; j < k; ++j) {
                       const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
                       if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                       const std::size_t xb = (b * len + static_cast<std::size_t>(src)) * ch;
                       for (std::size_t c = 0; c < ch; ++c) {
                         const std::size_t wq = (o * ch + c) * k + j;
                         if (wi->requires_grad) wi->grad[wq] += g * xi->values[xb + c];
                         if (xi->requires_grad) xi->grad[xb + c] += g * wi->values[wq];
                       }
                     }
                   }
                 }
               }
             });
    return result;
  }

 private:
  using DataPtr = std::shared_ptr<TensorData<T>>;

  struct Node {
    std::string name;
    DataPtr output;
    std::function<void()> backward;
  };

  static TensorT Make(Shape shape, std::vector<T> values, const char* op) {
    for (T v : values) {
      if (!std::isfinite(v)) {
        throw NonFiniteError(std::string(op) + " produced a non-finite value");
      }
    }
    return TensorT(std::move(shape), std::move(values));
  }

  void RecordIf(const char* name, const std::vector<DataPtr>& inputs, TensorT& out,
                std::function<void()> backward) {
    if (!recording_) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const DataPtr& p) { return p->requires_grad; });
    if (!any) return;
    out.impl_->requires_grad = true;
    nodes_.push_back(Node{name, out.impl_, std::move(backward)});
  }

  template <typename Fwd, typename Dfdx>
  TensorT Unary(const char* name, const TensorT& a, Fwd fwd, Dfdx dfdx) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.impl_->values[i]);
    auto result = Make(a.shape(), std::move(out), name);
    RecordIf(name, {a.impl_}, result, [ai = a.impl_, oi = result.impl_, dfdx] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      for (std::size_t i = 0; i < ai->values.size(); ++i) {
        ai->grad[i] += oi->grad[i] * dfdx(ai->values[i], oi->values[i]);
      }
    });
    return result;
  }

  template <typename Fwd, typename Da, typename Db>
  TensorT Binary(const char* name, const TensorT& a, const TensorT& b, Fwd fwd, Da da, Db db) {
    auto plan = std::make_shared<detail::BroadcastPlan>(a.shape(), b.shape());
    std::vector<T> out(NumElements(plan->out));
    const T* av = a.impl_->values.data();
    const T* bv = b.impl_->values.data();
    plan->ForEach([&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = fwd(av[ia], bv[ib]);
    });
    auto result = Make(plan->out, std::move(out), name);
    RecordIf(name, {a.impl_, b.impl_}, result,
             [ai = a.impl_, bi = b.impl_, oi = result.impl_, plan, da, db] {
               const bool ga = ai->requires_grad;
               const bool gb = bi->requires_grad;
               if (ga) ai->EnsureGrad();
               if (gb) bi->EnsureGrad();
               plan->ForEach([&](std::size_t o, std::size_t ia, std::size_t ib) {
                 const T g = oi->grad[o];
                 const T x = ai->values[ia];
                 const T y = bi->values[ib];
                 if (ga) ai->grad[ia] += g * da(x, y);
                 if (gb) bi->grad[ib] += g * db(x, y);
               });
             });
    return result;
  }

  TensorT AxisReduce(const char* name, const TensorT& a, int axis, bool mean) {
    const std::size_t ax = NormalizeAxis(axis, a.rank());
    const detail::AxisSplit s(a.shape(), ax);
    Shape out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i) {
      if (i != ax) out_shape.push_back(a.shape()[i]);
    }
    const T factor = mean ? T{1} / static_cast<T>(s.length) : T{1};
    std::vector<T> out(s.outer * s.inner, T{0});
    const T* x = a.impl_->values.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.length; ++j) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          out[o * s.inner + in] += x[(o * s.length + j) * s.inner + in];
        }
      }
    }
    for (auto& v : out) v *= factor;
    auto result = Make(std::move(out_shape), std::move(out), name);
    RecordIf(name, {a.impl_}, result, [ai = a.impl_, oi = result.impl_, s, factor] {
      if (!ai->requires_grad) return;
      ai->EnsureGrad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.length; ++j) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            ai->grad[(o * s.length + j) * s.inner + in] += factor * oi->grad[o * s.inner + in];
          }
        }
      }
    });
    return result;
  }

  TensorT AxisReduce(const TensorT& squared, int axis, const char* name) {
    return AxisReduce(name, squared, axis, false);
  }

  bool recording_;
  std::vector<Node> nodes_;
  std::function<void(std::size_t, const std::string&)> observer_;
};

}  // namespace mtscid
