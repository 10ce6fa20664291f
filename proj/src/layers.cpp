#include "recovermark/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>

namespace recovermark {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Unfolds one CHW sample into a (C·k·k) × (H·W) matrix for "same" padding.
template <typename T>
void im2col(const T* src, int channels, int h, int w, int k, T* cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* s = plane + static_cast<std::size_t>(sy) * w;
          std::fill(dst, dst + x_lo, T(0));
          for (int x = x_lo; x < x_hi; ++x) dst[x] = s[x + dx];
          std::fill(dst + x_hi, dst + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, T* dst_img) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* plane = dst_img + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* s = row + static_cast<std::size_t>(y) * w;
          T* d = plane + static_cast<std::size_t>(sy) * w;
          for (int x = x_lo; x < x_hi; ++x) d[x + dx] += s[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Parameter<T>::Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(count, T(0));
  grad.assign(count, T(0));
}

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng,
                  double init_gain)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  if (kernel % 2 == 0) throw std::invalid_argument("Conv2d: kernel size must be odd");
  // He-uniform for leaky-ReLU(0.2) activations.
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
  const double bound = init_gain * std::sqrt(6.0 / ((1.0 + 0.04) * fan_in));
  for (T& v : weight_.value) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x) const {
  if (x.c() != in_) {
    throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) +
                                " input channels, got " + x.shape_string());
  }
  const int h = x.h(), w = x.w();
  const int hw = h * w;
  const int kk = in_ * kernel_ * kernel_;
  BasicTensor<T> y(x.n(), out_, h, w);
  std::vector<T> cols(static_cast<std::size_t>(kk) * hw);
  ConstMatMap<T> wmat(weight_.value.data(), out_, kk);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), out_);
  for (int i = 0; i < x.n(); ++i) {
    im2col(x.sample(i), in_, h, w, kernel_, cols.data());
    MatMap<T> ymat(y.sample(i), out_, hw);
    ymat.noalias() = wmat * ConstMatMap<T>(cols.data(), kk, hw);
    ymat.colwise() += bias;
  }
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>&,
                                   const BasicTensor<T>& grad_y) {
  const int h = x.h(), w = x.w();
  const int hw = h * w;
  const int kk = in_ * kernel_ * kernel_;
  BasicTensor<T> gx(x.n(), in_, h, w);
  std::vector<T> cols(static_cast<std::size_t>(kk) * hw);
  MatMap<T> gw(weight_.grad.data(), out_, kk);
  ConstMatMap<T> wmat(weight_.value.data(), out_, kk);
  for (int i = 0; i < x.n(); ++i) {
    ConstMatMap<T> gy(grad_y.sample(i), out_, hw);
    im2col(x.sample(i), in_, h, w, kernel_, cols.data());
    gw.noalias() += gy * ConstMatMap<T>(cols.data(), kk, hw).transpose();
    // Plain loop: Eigen's vectorized reductions depend on buffer alignment.
    for (int o = 0; o < out_; ++o) {
      const T* row = grad_y.sample(i) + static_cast<std::size_t>(o) * hw;
      T sum = 0;
      for (int k = 0; k < hw; ++k) sum += row[k];
      bias_.grad[o] += sum;
    }
    MatMap<T>(cols.data(), kk, hw).noalias() = wmat.transpose() * gy;
    col2im(cols.data(), in_, h, w, kernel_, gx.sample(i));
  }
  return gx;
}

template <typename T>
BasicTensor<T> LeakyRelu<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> y = x;
  for (T& v : y.values()) v = v > T(0) ? v : v * slope_;
  return y;
}

template <typename T>
BasicTensor<T> LeakyRelu<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>&,
                                      const BasicTensor<T>& grad_y) {
  BasicTensor<T> gx = grad_y;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (!(x[i] > T(0))) gx[i] *= slope_;
  }
  return gx;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> y = x;
  for (T& v : y.values()) v = T(1) / (T(1) + std::exp(-v));
  return y;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::backward(const BasicTensor<T>&, const BasicTensor<T>& y,
                                    const BasicTensor<T>& grad_y) {
  BasicTensor<T> gx = grad_y;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (T(1) - y[i]);
  return gx;
}

template <typename T>
BasicTensor<T> AvgPool2<T>::forward(const BasicTensor<T>& x) const {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw std::invalid_argument("AvgPool2: odd spatial size " + x.shape_string());
  }
  BasicTensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx)
          y.at(i, c, yy, xx) = T(0.25) * (x.at(i, c, 2 * yy, 2 * xx) + x.at(i, c, 2 * yy, 2 * xx + 1) +
                                          x.at(i, c, 2 * yy + 1, 2 * xx) +
                                          x.at(i, c, 2 * yy + 1, 2 * xx + 1));
  return y;
}

template <typename T>
BasicTensor<T> AvgPool2<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>&,
                                     const BasicTensor<T>& grad_y) {
  BasicTensor<T> gx(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < x.h(); ++yy)
        for (int xx = 0; xx < x.w(); ++xx) gx.at(i, c, yy, xx) = T(0.25) * grad_y.at(i, c, yy / 2, xx / 2);
  return gx;
}

template <typename T>
BasicTensor<T> Upsample2<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx) y.at(i, c, yy, xx) = x.at(i, c, yy / 2, xx / 2);
  return y;
}

template <typename T>
BasicTensor<T> Upsample2<T>::backward(const BasicTensor<T>& x, const BasicTensor<T>&,
                                      const BasicTensor<T>& grad_y) {
  BasicTensor<T> gx(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < grad_y.h(); ++yy)
        for (int xx = 0; xx < grad_y.w(); ++xx) gx.at(i, c, yy / 2, xx / 2) += grad_y.at(i, c, yy, xx);
  return gx;
}

template <typename T>
BasicTensor<T> Sequential<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> cur = x;
  for (const auto& layer : layers_) cur = layer->forward(cur);
  return cur;
}

template <typename T>
BasicTensor<T> Sequential<T>::forward(const BasicTensor<T>& x, Trace<T>& trace) const {
  trace.acts.clear();
  trace.acts.reserve(layers_.size() + 1);
  trace.acts.push_back(x);
  for (const auto& layer : layers_) trace.acts.push_back(layer->forward(trace.acts.back()));
  return trace.acts.back();
}

template <typename T>
BasicTensor<T> Sequential<T>::backward(const Trace<T>& trace, const BasicTensor<T>& grad_out) {
  if (trace.acts.size() != layers_.size() + 1) {
    throw std::logic_error("Sequential::backward: trace does not match layer count");
  }
  BasicTensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(trace.acts[i], trace.acts[i + 1], g);
  }
  return g;
}

template <typename T>
std::vector<Parameter<T>*> Sequential<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& layer : layers_) {
    for (auto* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

template struct Parameter<float>;
template struct Parameter<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class LeakyRelu<float>;
template class LeakyRelu<double>;
template class Sigmoid<float>;
template class Sigmoid<double>;
template class AvgPool2<float>;
template class AvgPool2<double>;
template class Upsample2<float>;
template class Upsample2<double>;
template class Sequential<float>;
template class Sequential<double>;

}  // namespace recovermark
