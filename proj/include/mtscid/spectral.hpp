#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <utility>
#include <vector>

#include "mtscid/error.hpp"
#include "mtscid/tape.hpp"
#include "mtscid/tensor.hpp"

namespace mtscid {

/// Real and imaginary parts of a one-sided spectrum.
template <typename T>
struct Spectrum {
  Tensor<T> real;
  Tensor<T> imag;
};

/// Which axis of the operand holds the time (or frequency) dimension.
enum class SpectralAxis {
  kRows,  // second-to-last axis, e.g. [B, L, C]
  kLast,  // last axis, e.g. [B, C, L]
};

/// Real-input DFT of fixed length L as multiplication by precomputed
/// cosine/sine bases, producing f = L/2 + 1 frequency bins.
///
/// Forward is unnormalized; the inverse scales by 1/L and uses conjugate
/// symmetry to rebuild the full spectrum, so Inverse(Forward(x)) == x.
/// The imaginary parts of the DC bin (and the Nyquist bin for even L) do not
/// contribute to the inverse.
template <typename T>
class Dft {
 public:
  explicit Dft(std::size_t length) : length_(length), bins_(length / 2 + 1) {
    if (length == 0) throw ShapeError("dft length must be positive");
    const std::size_t L = length_, F = bins_;
    std::vector<T> fr(F * L), fi(F * L), ir(L * F), ii(L * F);
    for (std::size_t k = 0; k < F; ++k) {
      // Conjugate-symmetric bins appear twice in the full spectrum.
      const bool single = k == 0 || (L % 2 == 0 && k == L / 2);
      const double weight = (single ? 1.0 : 2.0) / static_cast<double>(L);
      for (std::size_t n = 0; n < L; ++n) {
        // Reduce k*n mod L so the angle stays in [0, 2pi) for accuracy.
        const double angle = 2.0 * std::numbers::pi *
                             static_cast<double>((k * n) % L) / static_cast<double>(L);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        fr[k * L + n] = static_cast<T>(c);
        fi[k * L + n] = static_cast<T>(-s);
        ir[n * F + k] = static_cast<T>(weight * c);
        ii[n * F + k] = static_cast<T>(-weight * s);
      }
    }
    fwd_real_ = Tensor<T>({F, L}, fr);
    fwd_imag_ = Tensor<T>({F, L}, fi);
    inv_real_ = Tensor<T>({L, F}, ir);
    inv_imag_ = Tensor<T>({L, F}, ii);
    fwd_real_t_ = Transposed(fwd_real_);
    fwd_imag_t_ = Transposed(fwd_imag_);
    inv_real_t_ = Transposed(inv_real_);
    inv_imag_t_ = Transposed(inv_imag_);
  }

  std::size_t length() const { return length_; }
  std::size_t bins() const { return bins_; }

  Spectrum<T> Forward(Tape<T>& tape, const Tensor<T>& x, SpectralAxis axis) const {
    CheckExtent(x, axis, length_, "dft");
    if (axis == SpectralAxis::kRows) {
      return {tape.MatMul(fwd_real_, x), tape.MatMul(fwd_imag_, x)};
    }
    return {tape.MatMul(x, fwd_real_t_), tape.MatMul(x, fwd_imag_t_)};
  }

  Tensor<T> Inverse(Tape<T>& tape, const Spectrum<T>& spec, SpectralAxis axis) const {
    CheckExtent(spec.real, axis, bins_, "idft");
    CheckExtent(spec.imag, axis, bins_, "idft");
    if (axis == SpectralAxis::kRows) {
      return tape.Add(tape.MatMul(inv_real_, spec.real), tape.MatMul(inv_imag_, spec.imag));
    }
    return tape.Add(tape.MatMul(spec.real, inv_real_t_), tape.MatMul(spec.imag, inv_imag_t_));
  }

 private:
  static Tensor<T> Transposed(const Tensor<T>& m) {
    const std::size_t r = m.dim(0), c = m.dim(1);
    std::vector<T> v(r * c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) v[j * r + i] = m[i * c + j];
    }
    return Tensor<T>({c, r}, std::move(v));
  }

  static void CheckExtent(const Tensor<T>& x, SpectralAxis axis, std::size_t want,
                          const char* op) {
    const int ax = axis == SpectralAxis::kRows ? -2 : -1;
    if (x.rank() < 2 || x.dim(ax) != want) {
      throw ShapeError(std::string(op) + ": expected extent " + std::to_string(want) +
                       " on the transform axis, got shape " + ShapeToString(x.shape()));
    }
  }

  std::size_t length_;
  std::size_t bins_;
  Tensor<T> fwd_real_, fwd_imag_, inv_real_, inv_imag_;
  Tensor<T> fwd_real_t_, fwd_imag_t_, inv_real_t_, inv_imag_t_;
};

}  // namespace mtscid
