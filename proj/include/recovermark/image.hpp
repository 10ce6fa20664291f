#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace recovermark {

/// Raised when two images/masks that must agree in size do not.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by file I/O on unreadable or malformed inputs.
class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar RGB image with real-valued pixels. Storage is channel-major
/// (all of R, then G, then B), which is also the layout the networks consume.
/// Values are expected to lie in [0,1]; operations that can leave that range
/// clip explicitly.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  /// True when every element lies in [0,1].
  bool in_unit_range() const;
  void clip();

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Hard-binary H×W mask, 1 marks the region of interest.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  std::uint8_t& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  bool test(std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }

  std::span<const std::uint8_t> data() const { return data_; }

  std::size_t count() const;
  bool none() const { return count() == 0; }
  bool matches(const Image& image) const {
    return height_ == image.height() && width_ == image.width();
  }
  bool same_shape(const BinaryMask& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  BinaryMask complement() const;
  BinaryMask intersect(const BinaryMask& other) const;

  /// Binarize a soft map at 0.5 (values strictly above become 1).
  static BinaryMask from_soft(int height, int width, std::span<const double> values);

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

struct SplicePatch {
  Image donor;
};
struct NoiseFill {
  double sigma = 0.1;
  std::uint64_t seed = 0;
};
struct ConstantFill {
  double value = 0.5;
};

/// Synthetic stand-in for a face-manipulation operator: the masked region is
/// replaced by donor content, by noise around the original, or by a constant.
struct TamperSpec {
  std::variant<SplicePatch, NoiseFill, ConstantFill> kind;
  BinaryMask mask;
};

struct Decomposition {
  Image saliency;
  Image background;
};

/// saliency = image ⊙ mask, background = image ⊙ (1 − mask).
Decomposition segment(const Image& image, const BinaryMask& mask);

/// saliency ⊙ mask + background ⊙ (1 − mask).
Image composite(const Image& saliency, const Image& background, const BinaryMask& mask);

/// Zeroes every pixel where the mask is set.
Image blank_region(const Image& image, const BinaryMask& mask);

Image apply_tamper(const Image& image, const TamperSpec& spec);

// 8-bit PNG I/O. Images must be RGB; masks single channel with values {0,255}.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
/// Saves an H×W real map in [0,1] as an 8-bit grayscale PNG.
void save_gray(std::span<const double> values, int height, int width,
               const std::filesystem::path& path);

/// 8-bit quantization as performed by save_image (round to nearest of 255 levels).
Image quantize8(const Image& image);

}  // namespace recovermark
