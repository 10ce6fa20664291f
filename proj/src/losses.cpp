#include "recovermark/losses.hpp"

#include <cmath>

namespace recovermark {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionError(std::string(what) + ": image shapes differ");
}

double masked_sse(const Image& a, const Image& b, const BinaryMask* exclude) {
  if (exclude && !exclude->matches(a)) throw DimensionError("loss: mask shape differs");
  const std::size_t plane = a.plane_size();
  auto x = a.data();
  auto y = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (exclude && exclude->test(i % plane)) continue;
    const double d = x[i] - y[i];
    sum += d * d;
  }
  return sum;
}

Image masked_sse_grad(const Image& a, const Image& b, const BinaryMask* exclude) {
  if (exclude && !exclude->matches(a)) throw DimensionError("loss: mask shape differs");
  Image g(a.height(), a.width());
  const std::size_t plane = a.plane_size();
  auto x = a.data();
  auto y = b.data();
  auto o = g.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (exclude && exclude->test(i % plane)) continue;
    o[i] = 2.0 * (x[i] - y[i]);
  }
  return g;
}

}  // namespace

double fidelity_loss(const Image& container, const Image& background, const BinaryMask* background_only) {
  require_same(container, background, "fidelity_loss");
  return masked_sse(container, background, background_only);
}

double watermark_loss(const Image& recovered, const Image& saliency) {
  require_same(recovered, saliency, "watermark_loss");
  return masked_sse(recovered, saliency, nullptr);
}

double clean_loss(const Image& decoded_from_clean) {
  const Image white(decoded_from_clean.height(), decoded_from_clean.width(), 1.0);
  return masked_sse(decoded_from_clean, white, nullptr);
}

double total_loss(const LossWeights& weights, double fidelity, double watermark, double clean) {
  if (!std::isfinite(fidelity) || !std::isfinite(watermark) || !std::isfinite(clean)) {
    throw NonFiniteLoss("non-finite loss component (fidelity=" + std::to_string(fidelity) +
                        ", watermark=" + std::to_string(watermark) + ", clean=" + std::to_string(clean) + ")");
  }
  return weights.fidelity * fidelity + weights.watermark * watermark + weights.clean * clean;
}

Image fidelity_loss_grad(const Image& container, const Image& background, const BinaryMask* background_only) {
  require_same(container, background, "fidelity_loss_grad");
  return masked_sse_grad(container, background, background_only);
}

Image watermark_loss_grad(const Image& recovered, const Image& saliency) {
  require_same(recovered, saliency, "watermark_loss_grad");
  return masked_sse_grad(recovered, saliency, nullptr);
}

Image clean_loss_grad(const Image& decoded_from_clean) {
  const Image white(decoded_from_clean.height(), decoded_from_clean.width(), 1.0);
  return masked_sse_grad(decoded_from_clean, white, nullptr);
}

template <typename T>
double batch_squared_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double weight,
                           BasicTensor<T>* grad, const BasicTensor<T>* keep) {
  a.check_same(b, "batch_squared_error");
  if (grad && !grad->same_shape(a)) *grad = BasicTensor<T>(a.n(), a.c(), a.h(), a.w());
  const double inv_n = 1.0 / a.n();
  const std::size_t plane = a.plane();
  double sum = 0.0;
  for (int i = 0; i < a.n(); ++i) {
    const T* x = a.sample(i);
    const T* y = b.sample(i);
    const T* k = keep ? keep->sample(i) : nullptr;
    T* g = grad ? grad->sample(i) : nullptr;
    for (std::size_t j = 0; j < a.sample_size(); ++j) {
      if (k && k[j % plane] == T(0)) continue;
      const double d = static_cast<double>(x[j]) - static_cast<double>(y[j]);
      sum += d * d;
      if (g) g[j] += static_cast<T>(2.0 * d * inv_n * weight);
    }
  }
  return sum * inv_n;
}

template <typename T>
double batch_squared_error_to(const BasicTensor<T>& a, T target, double weight, BasicTensor<T>* grad) {
  if (grad && !grad->same_shape(a)) *grad = BasicTensor<T>(a.n(), a.c(), a.h(), a.w());
  const double inv_n = 1.0 / a.n();
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = static_cast<double>(a[j]) - static_cast<double>(target);
    sum += d * d;
    if (grad) (*grad)[j] += static_cast<T>(2.0 * d * inv_n * weight);
  }
  return sum * inv_n;
}

template double batch_squared_error<float>(const Tensor&, const Tensor&, double, Tensor*, const Tensor*);
template double batch_squared_error<double>(const BasicTensor<double>&, const BasicTensor<double>&, double,
                                            BasicTensor<double>*, const BasicTensor<double>*);
template double batch_squared_error_to<float>(const Tensor&, float, double, Tensor*);
template double batch_squared_error_to<double>(const BasicTensor<double>&, double, double, BasicTensor<double>*);

}  // namespace recovermark
