#include "recovermark/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "recovermark/rng.hpp"

namespace recovermark {

namespace {

void require_shape(const Image& image, const BinaryMask& mask, const char* what) {
  if (!mask.matches(image)) {
    throw DimensionError(std::string(what) + ": mask " + std::to_string(mask.height()) + "x" +
                         std::to_string(mask.width()) + " does not match image " +
                         std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct PngImage {
  png_image header{};
  std::vector<std::uint8_t> pixels;
};

PngImage read_png(const std::filesystem::path& path) {
  PngImage img;
  img.header.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img.header, path.c_str())) {
    throw ImageIoError("cannot read '" + path.string() + "': " + img.header.message);
  }
  // Keep the file's own layout so channel-count checks see what is on disk.
  const png_uint_32 fmt = img.header.format & ~PNG_FORMAT_FLAG_COLORMAP;
  img.header.format = fmt;
  img.pixels.resize(PNG_IMAGE_SIZE(img.header));
  if (!png_image_finish_read(&img.header, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&img.header);
    throw ImageIoError("cannot decode '" + path.string() + "': " + img.header.message);
  }
  return img;
}

void write_png(const std::filesystem::path& path, int height, int width, png_uint_32 format,
               const std::vector<std::uint8_t>& pixels) {
  png_image header{};
  header.version = PNG_IMAGE_VERSION;
  header.width = static_cast<png_uint_32>(width);
  header.height = static_cast<png_uint_32>(height);
  header.format = format;
  if (!png_image_write_to_file(&header, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw ImageIoError("cannot write '" + path.string() + "': " + header.message);
  }
}

}  // namespace

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) throw DimensionError("image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
}

bool Image::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

void Image::clip() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) throw DimensionError("mask dimensions must be positive");
  data_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& v : out.data_) v = v ? 0 : 1;
  return out;
}

BinaryMask BinaryMask::intersect(const BinaryMask& other) const {
  if (!same_shape(other)) throw DimensionError("intersect: mask shapes differ");
  BinaryMask out = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] & other.data_[i];
  return out;
}

BinaryMask BinaryMask::from_soft(int height, int width, std::span<const double> values) {
  BinaryMask out(height, width);
  if (values.size() != out.size()) throw DimensionError("from_soft: value count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) out.data_[i] = values[i] > 0.5 ? 1 : 0;
  return out;
}

Decomposition segment(const Image& image, const BinaryMask& mask) {
  require_shape(image, mask, "segment");
  Decomposition parts{Image(image.height(), image.width()), Image(image.height(), image.width())};
  const std::size_t plane = image.plane_size();
  auto src = image.data();
  auto sal = parts.saliency.data();
  auto bg = parts.background.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (mask.test(i % plane)) {
      sal[i] = src[i];
    } else {
      bg[i] = src[i];
    }
  }
  return parts;
}

Image composite(const Image& saliency, const Image& background, const BinaryMask& mask) {
  if (!saliency.same_shape(background)) throw DimensionError("composite: image shapes differ");
  require_shape(saliency, mask, "composite");
  Image out(saliency.height(), saliency.width());
  const std::size_t plane = out.plane_size();
  auto s = saliency.data();
  auto b = background.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = mask.test(i % plane) ? s[i] : b[i];
  return out;
}

Image blank_region(const Image& image, const BinaryMask& mask) {
  require_shape(image, mask, "blank_region");
  Image out = image;
  const std::size_t plane = out.plane_size();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (mask.test(i % plane)) o[i] = 0.0;
  }
  return out;
}

Image apply_tamper(const Image& image, const TamperSpec& spec) {
  require_shape(image, spec.mask, "apply_tamper");
  Image out = image;
  const std::size_t plane = out.plane_size();
  auto o = out.data();
  std::visit(
      [&](const auto& kind) {
        using K = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<K, SplicePatch>) {
          if (kind.donor.empty()) throw std::invalid_argument("apply_tamper: splice needs a donor");
          if (!kind.donor.same_shape(image)) throw DimensionError("apply_tamper: donor shape differs");
          auto d = kind.donor.data();
          for (std::size_t i = 0; i < o.size(); ++i) {
            if (spec.mask.test(i % plane)) o[i] = std::clamp(d[i], 0.0, 1.0);
          }
        } else if constexpr (std::is_same_v<K, NoiseFill>) {
          Rng rng(kind.seed);
          for (std::size_t i = 0; i < o.size(); ++i) {
            if (spec.mask.test(i % plane)) o[i] = std::clamp(o[i] + rng.normal(0.0, kind.sigma), 0.0, 1.0);
          }
        } else {
          const double v = std::clamp(kind.value, 0.0, 1.0);
          for (std::size_t i = 0; i < o.size(); ++i) {
            if (spec.mask.test(i % plane)) o[i] = v;
          }
        }
      },
      spec.kind);
  return out;
}

Image load_image(const std::filesystem::path& path) {
  PngImage png = read_png(path);
  const png_uint_32 fmt = png.header.format;
  if ((fmt & PNG_FORMAT_FLAG_COLOR) == 0 || (fmt & PNG_FORMAT_FLAG_ALPHA) != 0 ||
      (fmt & PNG_FORMAT_FLAG_LINEAR) != 0) {
    throw ImageIoError("'" + path.string() + "' is not an 8-bit RGB image (" +
                       std::to_string(PNG_IMAGE_SAMPLE_CHANNELS(fmt)) + " channels)");
  }
  // Normalize BGR-ordered files to RGB.
  const bool bgr = (fmt & PNG_FORMAT_FLAG_BGR) != 0;
  const int h = static_cast<int>(png.header.height);
  const int w = static_cast<int>(png.header.width);
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* px = &png.pixels[(static_cast<std::size_t>(y) * w + x) * 3];
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[bgr ? 2 - c : c] / 255.0;
    }
  }
  return out;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));
      }
    }
  }
  write_png(path, h, w, PNG_FORMAT_RGB, pixels);
}

BinaryMask load_mask(const std::filesystem::path& path) {
  PngImage png = read_png(path);
  const png_uint_32 fmt = png.header.format;
  if (PNG_IMAGE_SAMPLE_CHANNELS(fmt) != 1 || (fmt & PNG_FORMAT_FLAG_LINEAR) != 0) {
    throw ImageIoError("mask '" + path.string() + "' must be 8-bit single channel");
  }
  const int h = static_cast<int>(png.header.height);
  const int w = static_cast<int>(png.header.width);
  BinaryMask out(h, w);
  for (std::size_t i = 0; i < png.pixels.size(); ++i) {
    const std::uint8_t v = png.pixels[i];
    if (v != 0 && v != 255) {
      throw ImageIoError("mask '" + path.string() + "' has non-binary value " + std::to_string(v));
    }
    out.set(i, v == 255);
  }
  return out;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> pixels(mask.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask.test(i) ? 255 : 0;
  write_png(path, mask.height(), mask.width(), PNG_FORMAT_GRAY, pixels);
}

void save_gray(std::span<const double> values, int height, int width,
               const std::filesystem::path& path) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw DimensionError("save_gray: value count mismatch");
  }
  std::vector<std::uint8_t> pixels(values.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(values[i]);
  write_png(path, height, width, PNG_FORMAT_GRAY, pixels);
}

Image quantize8(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace recovermark
