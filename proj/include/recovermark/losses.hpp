#pragma once

#include <stdexcept>

#include "recovermark/image.hpp"
#include "recovermark/tensor.hpp"

namespace recovermark {

/// Raised when a loss component is NaN or infinite; training treats it as an
/// abort signal.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double fidelity = 1.0;
  double watermark = 1.0;
  double clean = 1.0;
};

struct LossComponents {
  double fidelity = 0.0;
  double watermark = 0.0;
  double clean = 0.0;
  double total = 0.0;
};

// Reduction convention throughout: sum of squared differences over every
// pixel and channel of a sample, mean over samples in a batch.
inline constexpr const char* kLossReduction = "sum_pixels_mean_batch";

/// Σ‖container − background‖². With `background_only`, pixels where the mask
/// is set are excluded.
double fidelity_loss(const Image& container, const Image& background,
                     const BinaryMask* background_only = nullptr);
double watermark_loss(const Image& recovered, const Image& saliency);
/// Σ‖decoded − white‖² with white the all-ones image.
double clean_loss(const Image& decoded_from_clean);
double total_loss(const LossWeights& weights, double fidelity, double watermark, double clean);

// Gradients of the single-image losses with respect to their first argument.
Image fidelity_loss_grad(const Image& container, const Image& background,
                         const BinaryMask* background_only = nullptr);
Image watermark_loss_grad(const Image& recovered, const Image& saliency);
Image clean_loss_grad(const Image& decoded_from_clean);

/// Batched squared-error loss on network tensors: (1/N) Σ (a − b)², with the
/// gradient w.r.t. `a`, scaled by `weight`, written to `grad` when non-null.
/// `keep` (N×1×H×W, values 0/1) optionally restricts the sum to selected pixels.
template <typename T>
double batch_squared_error(const BasicTensor<T>& a, const BasicTensor<T>& b, double weight,
                           BasicTensor<T>* grad, const BasicTensor<T>* keep = nullptr);

/// Same against a constant target (the white image for the clean loss).
template <typename T>
double batch_squared_error_to(const BasicTensor<T>& a, T target, double weight, BasicTensor<T>* grad);

}  // namespace recovermark
