#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recovermark/layers.hpp"

namespace recovermark {

/// Architecture hyperparameters. Everything here feeds the config digest that
/// checkpoints are stamped with.
struct ArchConfig {
  int image_side = 64;
  int latent_channels = 3;
  // Watermark encoder / decoder: plain conv stacks.
  int codec_width = 8;
  int codec_blocks = 3;
  // Hiding network: U-shaped encoder-decoder with skips.
  int hnet_width = 8;
  int hnet_depth = 3;
  int hnet_max_width = 32;
  // Extraction network: encoder-decoder with skips.
  int enet_width = 8;
  int enet_depth = 3;
  int enet_max_width = 32;
  // ENet sees the image with the saliency region zeroed (1) or the full
  // composite (0).
  int masked_extraction = 1;
  /// Route latent values through background carrier pixels (needs masked_extraction).
  int relay = 1;
  // Regeneration-proxy denoiser.
  int denoiser_width = 16;

  /// Canonical key=value rendering (sorted keys) used for hashing.
  std::string canonical() const;
  void validate() const;
};

/// Plain stack of `blocks` 3×3 convolutions with leaky-ReLU between them.
template <typename T>
class ConvStack {
 public:
  ConvStack(std::string name, int in_channels, int out_channels, int width, int blocks,
            bool sigmoid_output, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) const { return net_.forward(x); }
  BasicTensor<T> forward(const BasicTensor<T>& x, Trace<T>& trace) const {
    return net_.forward(x, trace);
  }
  BasicTensor<T> backward(const Trace<T>& trace, const BasicTensor<T>& grad_out) {
    return net_.backward(trace, grad_out);
  }
  std::vector<Parameter<T>*> parameters() { return net_.parameters(); }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_;
  Sequential<T> net_;
};

template <typename T>
struct UNetTrace {
  std::vector<Trace<T>> down;  // encoder level traces; down[l].output() is the skip tensor
  std::vector<Trace<T>> up;    // decoder level traces, up[l] produces level-l features
  Trace<T> head;
};

/// U-shaped encoder-decoder: two convs per level, 2× average pooling down,
/// nearest upsampling and skip concatenation on the way back, linear head.
template <typename T>
class UNet {
 public:
  UNet(std::string name, int in_channels, int out_channels, int width, int depth, int max_width,
       Rng& rng, double head_gain = 1.0);

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  BasicTensor<T> forward(const BasicTensor<T>& x, UNetTrace<T>& trace) const;
  BasicTensor<T> backward(const UNetTrace<T>& trace, const BasicTensor<T>& grad_out);
  std::vector<Parameter<T>*> parameters();
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int depth() const { return depth_; }

 private:
  int in_, out_, depth_;
  std::vector<int> widths_;
  std::vector<Sequential<T>> down_;
  std::vector<Sequential<T>> up_;
  Sequential<T> head_;
};

template <typename T>
struct HidingTrace {
  UNetTrace<T> unet;
  BasicTensor<T> output;
};

/// HNet: maps Concat(latent, background) to a container image. The output is
/// sigmoid(unet(x) + logit(background)), so an all-zero residual reproduces the
/// background and the range [0,1] holds structurally.
template <typename T>
class HidingNetwork {
 public:
  static constexpr double kLogitEps = 0.01;

  HidingNetwork(int latent_channels, int width, int depth, int max_width, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& input) const;
  BasicTensor<T> forward(const BasicTensor<T>& input, HidingTrace<T>& trace) const;
  /// Gradient w.r.t. the concatenated (latent, background) input.
  BasicTensor<T> backward(const HidingTrace<T>& trace, const BasicTensor<T>& grad_out);
  std::vector<Parameter<T>*> parameters() { return unet_.parameters(); }
  int latent_channels() const { return latent_channels_; }

 private:
  int latent_channels_;
  UNet<T> unet_;
};

template <typename T>
struct DenoiserTrace {
  Trace<T> residual;
};

/// Residual bottleneck denoising autoencoder: x + f(x) where f pools to half
/// resolution and back. The last layer starts at zero so a fresh denoiser is
/// the identity map.
template <typename T>
class Denoiser {
 public:
  Denoiser(int width, Rng& rng);
  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  BasicTensor<T> forward(const BasicTensor<T>& x, DenoiserTrace<T>& trace) const;
  BasicTensor<T> backward(const DenoiserTrace<T>& trace, const BasicTensor<T>& grad_out);
  std::vector<Parameter<T>*> parameters() { return net_.parameters(); }

 private:
  Sequential<T> net_;
};

/// Copies values between same-named parameters (possibly of different scalar
/// type). Throws if names or shapes disagree.
template <typename Dst, typename Src>
void copy_parameters(const std::vector<Parameter<Dst>*>& dst, const std::vector<Parameter<Src>*>& src) {
  if (dst.size() != src.size()) throw std::invalid_argument("copy_parameters: parameter count differs");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != src[i]->name || dst[i]->shape != src[i]->shape) {
      throw std::invalid_argument("copy_parameters: mismatch at " + src[i]->name);
    }
    for (std::size_t k = 0; k < src[i]->value.size(); ++k) {
      dst[i]->value[k] = static_cast<Dst>(src[i]->value[k]);
    }
  }
}

/// The four networks at a given scalar type.
template <typename T>
struct NetworkSet {
  explicit NetworkSet(const ArchConfig& arch, std::uint64_t seed = 0);

  ConvStack<T> enc;
  ConvStack<T> dec;
  HidingNetwork<T> hnet;
  UNet<T> enet;

  std::vector<Parameter<T>*> parameters();

 private:
  NetworkSet(const ArchConfig& arch, Rng&& rng);
};

const ArchConfig& validated(const ArchConfig& arch);

}  // namespace recovermark
