#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "recovermark/image.hpp"
#include "recovermark/networks.hpp"
#include "recovermark/rng.hpp"

namespace recovermark {

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DistortionKind { Regeneration, SaliencyNoise, GlobalNoise, Jpeg, LowPass, PatchRemove };

/// Short token used in chain strings and configs: regen, salnoise, noise, jpeg, lowpass, patch.
std::string to_token(DistortionKind kind);
DistortionKind parse_distortion_kind(const std::string& token);

/// One distortion with its parameter: noise level for regeneration, sigma for
/// the noise and blur kinds, quality for JPEG, area fraction for patch removal.
struct DistortionSpec {
  DistortionKind kind = DistortionKind::GlobalNoise;
  double param = 0.05;
  bool differentiable = true;

  void validate() const;
  std::string describe() const;  // e.g. "jpeg:75"
};

/// Learned-denoiser stand-in for a generative regeneration attack: add
/// Gaussian noise, then denoise with a network trained on clean images.
class RegenerationProxy {
 public:
  static constexpr double kDefaultNoiseLevel = 0.1;

  /// Identity-initialized denoiser.
  explicit RegenerationProxy(int width = 16, std::uint64_t seed = 0);

  Image apply(const Image& image, double noise_level, Rng& rng) const;
  Denoiser<float>& net() { return *net_; }
  const Denoiser<float>& net() const { return *net_; }
  int width() const { return width_; }

  void save(const std::filesystem::path& path) const;
  /// Throws CheckpointError when the file is missing or incompatible.
  static RegenerationProxy load(const std::filesystem::path& path, int width);

 private:
  int width_;
  std::unique_ptr<Denoiser<float>> net_;
};

/// An external attack program, invoked as `<executable> <input.png> <output.png>`.
struct AttackPlugin {
  std::string name;
  std::filesystem::path executable;

  Image apply(const Image& image) const;
};

struct PluginStep {
  std::string name;
};

using AttackStep = std::variant<DistortionSpec, PluginStep>;
using AttackChain = std::vector<AttackStep>;

/// Parses "regen;noise:0.05;jpeg:75;lowpass:1.0;patch:0.1;plugin:lattice".
/// Empty string yields an empty chain. Throws AttackError on unknown tokens.
AttackChain parse_attack_chain(const std::string& text);
std::string describe(const AttackChain& chain);

struct AttackContext {
  const RegenerationProxy* regeneration = nullptr;
  std::map<std::string, AttackPlugin> plugins;
};

// Individual distortions. Outputs keep the input size and are clipped to [0,1].
Image saliency_noise(const Image& image, const BinaryMask& mask, double sigma, Rng& rng);
Image global_noise(const Image& image, double sigma, Rng& rng);

/// Differentiable JPEG surrogate: YCbCr, 8×8 DCT, IJG tables scaled by
/// quality, cubic soft rounding, inverse transform. Sides must be multiples of 8.
Image diff_jpeg(const Image& image, int quality);
/// Vector-Jacobian product of diff_jpeg at `image`.
Image diff_jpeg_backward(const Image& image, int quality, const Image& grad_output);
/// Standard IJG quantization table (luminance or chrominance) for a quality.
std::vector<int> jpeg_quant_table(bool chroma, int quality);

/// Encode/decode through libjpeg (baseline, 4:4:4).
Image real_jpeg(const Image& image, int quality);

/// Normalized 1-D Gaussian kernel with radius ceil(3σ).
std::vector<double> gaussian_kernel(double sigma);
/// Separable Gaussian blur with reflect-101 borders.
Image low_pass(const Image& image, double sigma);
Image low_pass_backward(const Image& grad_output, double sigma);

struct PatchRemoval {
  Image image;
  BinaryMask removed;
};
/// Zeroes one axis-aligned rectangle of ≈fraction·H·W pixels placed by the seed.
PatchRemoval patch_remove(const Image& image, double fraction, std::uint64_t seed);

/// Applies one distortion (non-differentiable path; JPEG uses the real codec
/// unless the spec asks for the differentiable surrogate).
Image apply_distortion(const Image& image, const DistortionSpec& spec, const BinaryMask& mask, Rng& rng,
                       const AttackContext& context);

/// Applies the steps in order. Stochastic steps draw from one stream seeded by
/// `seed`, so equal seeds give bit-identical outputs.
Image apply_chain(const Image& image, const AttackChain& chain, const BinaryMask& mask, std::uint64_t seed,
                  const AttackContext& context);

/// Output of a differentiable distortion plus its vector-Jacobian product.
struct DistortionResult {
  Image output;
  std::function<Image(const Image&)> backward;
};

/// Training-time application: JPEG through the surrogate, regeneration
/// through the denoiser's backward pass, noise treated as a constant offset.
DistortionResult apply_differentiable(const Image& image, const DistortionSpec& spec, const BinaryMask& mask,
                                      Rng& rng, const RegenerationProxy* regeneration);

}  // namespace recovermark
