#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

#include "recovermark/image.hpp"
#include "recovermark/tensor.hpp"

namespace recovermark {

/// Mask-conditioned spatial relay between the saliency region and the
/// background. With F and B the saliency and background pixels in raster
/// order, background pixel B[i] carries saliency pixel F[i*|F|/|B|] (floor).
/// Copies are modulated by a ±1 checkerboard, which moves the payload into
/// the highest spatial frequency band, and gathering demodulates and averages
/// every copy back into place. The hiding and extraction networks therefore
/// only need local operations.
class CarrierMap {
 public:
  CarrierMap() = default;
  explicit CarrierMap(const BinaryMask& mask) : height_(mask.height()), width_(mask.width()) {
    for (std::size_t p = 0; p < mask.size(); ++p) (mask.test(p) ? face_ : bg_).push_back(static_cast<int>(p));
    for (int p : bg_) phase_.push_back(((p / width_ + p % width_) & 1) ? -1 : 1);
    const std::size_t nf = face_.size(), nb = bg_.size();
    if (nf == 0 || nb == 0) return;
    source_.resize(nb);
    first_.assign(nf + 1, 0);
    for (std::size_t i = 0; i < nb; ++i) {
      source_[i] = static_cast<int>(i * nf / nb);
      ++first_[source_[i] + 1];
    }
    for (std::size_t j = 0; j < nf; ++j) first_[j + 1] += first_[j];
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool active() const { return !source_.empty(); }

  /// Copies saliency-pixel values, times the carrier phase, onto their
  /// carrier background pixels.
  /// Saliency pixels of the output are zero.
  template <typename T>
  void scatter(const T* in, T* out, int channels) const {
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    std::fill(out, out + plane * channels, T(0));
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < source_.size(); ++i) out[c * plane + bg_[i]] = phase_[i] * in[c * plane + face_[source_[i]]];
  }
  template <typename T>
  void scatter_backward(const T* g_out, T* g_in, int channels) const {
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    std::fill(g_in, g_in + plane * channels, T(0));
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < source_.size(); ++i) g_in[c * plane + face_[source_[i]]] += phase_[i] * g_out[c * plane + bg_[i]];
  }

  /// Background pixels are demodulated in place; each saliency pixel becomes
  /// the mean of its demodulated carriers (the nearest carrier when it has
  /// none) with the last channel negated, which tells the decoder where the
  /// saliency region is. Without saliency pixels this is the identity.
  template <typename T>
  void gather(const T* in, T* out, int channels) const {
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    std::copy(in, in + plane * channels, out);
    if (!active()) return;
    for (int c = 0; c < channels; ++c) {
      const T* src = in + c * plane;
      T* dst = out + c * plane;
      for (std::size_t i = 0; i < bg_.size(); ++i) dst[bg_[i]] = phase_[i] * src[bg_[i]];
      for (std::size_t j = 0; j < face_.size(); ++j) {
        const auto [lo, hi] = carriers(j);
        T sum = 0;
        for (std::size_t i = lo; i < hi; ++i) sum += phase_[i] * src[bg_[i]];
        dst[face_[j]] = sign(c, channels) * sum / static_cast<T>(hi - lo);
      }
    }
  }
  template <typename T>
  void gather_backward(const T* g_out, T* g_in, int channels) const {
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    std::copy(g_out, g_out + plane * channels, g_in);
    if (!active()) return;
    for (int c = 0; c < channels; ++c) {
      const T* g = g_out + c * plane;
      T* gi = g_in + c * plane;
      for (int p : face_) gi[p] = 0;
      for (std::size_t i = 0; i < bg_.size(); ++i) gi[bg_[i]] = phase_[i] * g[bg_[i]];
      for (std::size_t j = 0; j < face_.size(); ++j) {
        const auto [lo, hi] = carriers(j);
        const T share = sign(c, channels) * g[face_[j]] / static_cast<T>(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) gi[bg_[i]] += phase_[i] * share;
      }
    }
  }

 private:
  static int sign(int c, int channels) { return c == channels - 1 ? -1 : 1; }

  // Carrier range [lo, hi) in bg_ order for saliency pixel j.
  std::pair<std::size_t, std::size_t> carriers(std::size_t j) const {
    std::size_t lo = first_[j], hi = first_[j + 1];
    if (lo == hi) {
      lo = std::min(j * bg_.size() / face_.size(), bg_.size() - 1);
      hi = lo + 1;
    }
    return {lo, hi};
  }

  int height_ = 0, width_ = 0;
  std::vector<int> face_, bg_;
  std::vector<int> phase_;           // per background pixel: checkerboard sign
  std::vector<int> source_;          // per background pixel: index into face_
  std::vector<std::size_t> first_;   // CSR offsets of carriers per face pixel
};

inline std::vector<CarrierMap> carrier_maps(std::span<const BinaryMask> masks) {
  return {masks.begin(), masks.end()};
}

template <typename T>
BasicTensor<T> relay_scatter(const BasicTensor<T>& x, const std::vector<CarrierMap>& maps) {
  if (static_cast<std::size_t>(x.n()) != maps.size()) throw std::invalid_argument("relay_scatter: batch size");
  BasicTensor<T> out(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) maps[i].scatter(x.sample(i), out.sample(i), x.c());
  return out;
}
template <typename T>
BasicTensor<T> relay_scatter_backward(const BasicTensor<T>& g, const std::vector<CarrierMap>& maps) {
  BasicTensor<T> out(g.n(), g.c(), g.h(), g.w());
  for (int i = 0; i < g.n(); ++i) maps[i].scatter_backward(g.sample(i), out.sample(i), g.c());
  return out;
}
template <typename T>
BasicTensor<T> relay_gather(const BasicTensor<T>& x, const std::vector<CarrierMap>& maps) {
  if (static_cast<std::size_t>(x.n()) != maps.size()) throw std::invalid_argument("relay_gather: batch size");
  BasicTensor<T> out(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) maps[i].gather(x.sample(i), out.sample(i), x.c());
  return out;
}
template <typename T>
BasicTensor<T> relay_gather_backward(const BasicTensor<T>& g, const std::vector<CarrierMap>& maps) {
  BasicTensor<T> out(g.n(), g.c(), g.h(), g.w());
  for (int i = 0; i < g.n(); ++i) maps[i].gather_backward(g.sample(i), out.sample(i), g.c());
  return out;
}

}  // namespace recovermark
