#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recovermark/dataset.hpp"
#include "recovermark/distortions.hpp"
#include "recovermark/models.hpp"

namespace recovermark {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kDefaultLocalizationThreshold = 0.15;
inline constexpr double kDefaultNccThreshold = 0.95;

/// Raised when an inference operation gets a bundle that was never trained.
class UntrainedModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Protected image: the original saliency composited onto the container.
Image embed(const Image& image, const BinaryMask& mask, const ModelBundle& models);

/// Dec(ENet(x)). With masked extraction the saliency region of `suspicious` is
/// zeroed before extraction, so the mask is required.
Image recover(const Image& suspicious, const BinaryMask& mask, const ModelBundle& models);

// Batched versions of the two above (one network pass per call).
std::vector<Image> embed_batch(std::span<const Image> images, std::span<const BinaryMask> masks,
                               const ModelBundle& models);
std::vector<Image> recover_batch(std::span<const Image> suspicious, std::span<const BinaryMask> masks,
                                 const ModelBundle& models);

struct LocalizationOptions {
  double threshold = kDefaultLocalizationThreshold;
  /// Max over channels instead of the mean.
  bool max_over_channels = false;
  /// 3×3 majority filter on the binary mask.
  bool median_filter = false;
};

struct LocalizationResult {
  std::vector<double> diff_map;  // H×W, zero outside the saliency mask
  BinaryMask mask;
  double threshold = kDefaultLocalizationThreshold;
};

LocalizationResult localize(const Image& recovered, const Image& suspicious, const BinaryMask& saliency_mask,
                            const LocalizationOptions& options = {});

struct VerificationResult {
  double ncc = 0.0;
  bool owned = false;
  double threshold = kDefaultNccThreshold;
  std::string reason;  // set when ncc is undefined
};

/// Pearson correlation over the mask-support pixels, channels flattened.
/// Empty when the support is empty or either side has zero variance.
std::optional<double> ncc(const Image& a, const Image& b, const BinaryMask& support);

VerificationResult verify(const Image& recovered, const Image& original_saliency, const BinaryMask& support,
                          double threshold = kDefaultNccThreshold);

double psnr(const Image& a, const Image& b);
/// PSNR over the pixels where `region` is set (all channels).
double psnr(const Image& a, const Image& b, const BinaryMask& region);

/// Number of dyadic scales used for an image side: 5 when side ≥ 32.
int ms_ssim_scales(int side);
/// Multi-scale SSIM with an 11×11 σ=1.5 Gaussian window (shrunk on small
/// scales) and the standard five scale weights. Smaller images fall back to
/// fewer scales with renormalized weights and a warning on stderr.
double ms_ssim(const Image& a, const Image& b);

struct F1Auc {
  double f1 = 0.0;
  std::optional<double> auc;  // absent when gt is all-equal
};
F1Auc f1_auc(const std::vector<double>& diff_map, const BinaryMask& pred, const BinaryMask& gt);

enum class TamperKind { None, Splice, NoiseFill, ConstantFill };
std::string to_string(TamperKind kind);
TamperKind parse_tamper_kind(const std::string& text);

struct NamedAttack {
  std::string name;
  AttackChain chain;
};

struct EvaluationOptions {
  TamperKind tamper = TamperKind::Splice;
  /// Side of the tamper rectangle relative to the face bounding box.
  double tamper_extent = 0.6;
  LocalizationOptions localization;
  double ncc_threshold = kDefaultNccThreshold;
  std::uint64_t seed = 0;
};

struct AttackMetrics {
  double f1 = 0.0;
  std::optional<double> auc;
  double psnr = 0.0;
  double ms_ssim = 0.0;
  double success_rate = 0.0;
  double mean_ncc = 0.0;
};

struct MetricsReport {
  std::string config_digest;
  int latent_channels = 0;
  int hnet_depth = 0, enet_depth = 0, codec_blocks = 0;
  int images = 0;
  std::string tamper;
  std::vector<std::pair<std::string, AttackMetrics>> attacks;  // in configured order

  std::string to_json() const;
};

/// embed → attack → tamper → recover → localize/verify for every image and
/// attack. Recovery metrics compare the recovered face with the original
/// face over the mask region.
MetricsReport evaluate(const ModelBundle& models, const Dataset& data, const std::vector<NamedAttack>& attacks,
                       const AttackContext& context, const EvaluationOptions& options);

struct CapacityRecord {
  double fraction = 0.0;
  double saliency_psnr = 0.0;
  double saliency_ms_ssim = 0.0;
  double background_psnr = 0.0;
  double background_ms_ssim = 0.0;
};

/// Centered elliptical masks of each area fraction over every base image;
/// metrics are means over images.
std::vector<CapacityRecord> capacity_sweep(const ModelBundle& models, const std::vector<Image>& base_images,
                                           const std::vector<double>& fractions, const AttackChain& attack = {},
                                           const AttackContext& context = {}, std::uint64_t seed = 0);
std::string capacity_to_json(const std::vector<CapacityRecord>& curve);
std::vector<CapacityRecord> capacity_from_json(const std::string& text);

}  // namespace recovermark
