#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "recovermark/image.hpp"
#include "recovermark/networks.hpp"

namespace recovermark {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainingStage : std::uint8_t { None = 0, Stage1 = 1, Stage2 = 2 };
std::string to_string(TrainingStage stage);

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;

// Adam moment hyperparameters. Fixed, and part of the config digest.
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// SHA-256 of the architecture plus the fixed training conventions (loss
/// reduction, optimizer moments, schema version), hex encoded.
std::string config_digest(const ArchConfig& arch);
std::string sha256_hex(std::string_view data);

/// Encoder output: a C-channel feature map at image resolution (1×C×H×W).
struct LatentWatermark {
  Tensor features;
  int channels() const { return features.c(); }
  int height() const { return features.h(); }
  int width() const { return features.w(); }
};

/// Enc, Dec, HNet and ENet plus checkpoint metadata.
class ModelBundle {
 public:
  explicit ModelBundle(const ArchConfig& arch, std::uint64_t seed = 0);

  ModelBundle(ModelBundle&&) noexcept = default;
  ModelBundle& operator=(ModelBundle&&) noexcept = default;

  /// Deep copy.
  ModelBundle clone() const;

  const ArchConfig& arch() const { return arch_; }
  NetworkSet<float>& nets() { return *nets_; }
  const NetworkSet<float>& nets() const { return *nets_; }
  std::string digest() const { return config_digest(arch_); }

  TrainingStage stage = TrainingStage::None;
  /// Set when Enc/Dec must not change (Stage-2 training).
  bool codec_frozen = false;

 private:
  ArchConfig arch_;
  std::unique_ptr<NetworkSet<float>> nets_;
};

// Image <-> tensor conversion.
Tensor to_tensor(const Image& image);
Tensor to_tensor(std::span<const Image> images);
Image to_image(const Tensor& tensor, int index = 0);
/// N×1×H×W tensor holding mask values (or their complement) as 0/1.
Tensor mask_tensor(std::span<const BinaryMask> masks, bool complement = false);

// Single-image forward passes.
LatentWatermark encode_watermark(const ModelBundle& models, const Image& saliency);
Image hide(const ModelBundle& models, const LatentWatermark& latent, const Image& background);
LatentWatermark extract_features(const ModelBundle& models, const Image& image);
Image decode_watermark(const ModelBundle& models, const LatentWatermark& latent);

/// Raw on-disk checkpoint content.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct CheckpointFile {
  std::uint32_t schema_version = kCheckpointSchemaVersion;
  TrainingStage stage = TrainingStage::None;
  std::string kind;  // "bundle" or "denoiser"
  std::string digest;
  std::vector<NamedArray> arrays;
};

/// Writes to a temporary sibling and renames into place.
void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

std::vector<NamedArray> export_parameters(const std::vector<Parameter<float>*>& params);
void import_parameters(const std::vector<Parameter<float>*>& params, const std::vector<NamedArray>& arrays);

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
/// Throws CheckpointError on version mismatch, digest mismatch against
/// `expected`, or a truncated/corrupt file.
ModelBundle load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected);

}  // namespace recovermark
