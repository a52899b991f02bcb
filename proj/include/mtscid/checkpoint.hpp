#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "mtscid/data.hpp"
#include "mtscid/error.hpp"
#include "mtscid/model.hpp"

namespace mtscid {

// Layout (all integers unsigned 32-bit little-endian, floats IEEE-754):
//
//   "MTSCID01"
//   window, variates, latent, kernel, m, patch_sizes[m]
//   u8 has_tau, f64 tau
//   u8 disable_taeb, disable_iveb, disable_patch_attention, conv_as_linear,
//      channel_mixing_conv, time_domain_mode
//   tensor_count
//   per tensor: name_len, name bytes, rank, dims[rank], f32 values
//
// Normalization statistics, when present, are stored as the tensors
// "data.norm_mean" and "data.norm_std".
inline constexpr char kCheckpointMagic[] = "MTSCID01";

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelState<T> state;
  std::optional<NormStats> norm;
};

namespace detail {

class ByteWriter {
 public:
  void U8(std::uint8_t v) { bytes_.push_back(v); }
  void U32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void U64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void F32(float v) { U32(std::bit_cast<std::uint32_t>(v)); }
  void F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }
  void Bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void Size(std::size_t v) {
    if (v > 0xffffffffu) throw IoError("checkpoint field exceeds 32 bits");
    U32(static_cast<std::uint32_t>(v));
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t U8() {
    Need(1);
    return bytes_[pos_++];
  }
  std::uint32_t U32() {
    Need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t U64() {
    Need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float F32() { return std::bit_cast<float>(U32()); }
  double F64() { return std::bit_cast<double>(U64()); }
  std::string Bytes(std::size_t n) {
    Need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void Need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
void SaveCheckpoint(const std::string& path, const ModelConfig& cfg, const ModelState<T>& state,
                    const std::optional<NormStats>& norm = {}) {
  detail::ByteWriter w;
  w.Bytes(kCheckpointMagic);
  w.Size(cfg.window);
  w.Size(cfg.variates);
  w.Size(cfg.latent);
  w.Size(cfg.kernel);
  w.Size(cfg.patch_sizes.size());
  for (std::size_t p : cfg.patch_sizes) w.Size(p);
  w.U8(cfg.tau ? 1 : 0);
  w.F64(cfg.tau ? *cfg.tau : 0.0);
  for (bool flag : {cfg.disable_taeb, cfg.disable_iveb, cfg.disable_patch_attention, cfg.conv_as_linear,
                    cfg.channel_mixing_conv, cfg.time_domain_mode}) {
    w.U8(flag ? 1 : 0);
  }
  const auto params = state.Parameters();
  w.Size(params.size());
  for (const auto& p : params) {
    w.Size(p.name.size());
    w.Bytes(p.name);
    w.Size(p.tensor.rank());
    for (std::size_t d : p.tensor.shape()) w.Size(d);
    for (T v : p.tensor.values()) w.F32(static_cast<float>(v));
  }
  // Normalization statistics keep full precision so reloaded scoring matches.
  w.U8(norm ? 1 : 0);
  if (norm) {
    w.Size(norm->mean.size());
    for (double v : norm->mean) w.F64(v);
    for (double v : norm->stddev) w.F64(v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing " + path);
}

template <typename T>
Checkpoint<T> LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(bytes));
  if (r.Bytes(8) != kCheckpointMagic) throw IoError(path + ": not a checkpoint (bad magic)");

  Checkpoint<T> ck;
  ModelConfig& cfg = ck.config;
  cfg.window = r.U32();
  cfg.variates = r.U32();
  cfg.latent = r.U32();
  cfg.kernel = r.U32();
  const std::uint32_t m = r.U32();
  cfg.patch_sizes.clear();
  for (std::uint32_t i = 0; i < m; ++i) cfg.patch_sizes.push_back(r.U32());
  const bool has_tau = r.U8() != 0;
  const double tau = r.F64();
  if (has_tau) cfg.tau = tau;
  cfg.disable_taeb = r.U8() != 0;
  cfg.disable_iveb = r.U8() != 0;
  cfg.disable_patch_attention = r.U8() != 0;
  cfg.conv_as_linear = r.U8() != 0;
  cfg.channel_mixing_conv = r.U8() != 0;
  cfg.time_domain_mode = r.U8() != 0;
  cfg.Validate();

  ck.state = InitModelState<T>(cfg, 0);
  auto params = ck.state.Parameters();
  const std::uint32_t count = r.U32();
  std::vector<bool> seen(params.size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.Bytes(r.U32());
    Shape shape(r.U32());
    for (auto& d : shape) d = r.U32();
    std::size_t j = 0;
    while (j < params.size() && params[j].name != name) ++j;
    if (j == params.size()) throw IoError(path + ": unexpected tensor " + name);
    if (params[j].tensor.shape() != shape) throw IoError(path + ": wrong shape for " + name);
    for (auto& v : params[j].tensor.mutable_values()) v = static_cast<T>(r.F32());
    seen[j] = true;
  }
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (!seen[j]) throw IoError(path + ": missing tensor " + params[j].name);
  }
  if (r.U8() != 0) {
    const std::uint32_t c = r.U32();
    if (c != cfg.variates) throw IoError(path + ": malformed normalization stats");
    NormStats norm;
    for (std::uint32_t i = 0; i < c; ++i) norm.mean.push_back(r.F64());
    for (std::uint32_t i = 0; i < c; ++i) norm.stddev.push_back(r.F64());
    ck.norm = std::move(norm);
  }
  if (!r.done()) throw IoError(path + ": trailing bytes");
  return ck;
}

}  // namespace mtscid
