// Differentiable JPEG surrogate and the libjpeg round trip it is checked against.

#include <cstddef>
#include <cstdio>
#include <cstdlib>

#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <numbers>

#include "recovermark/distortions.hpp"

namespace recovermark {

namespace {

constexpr std::array<int, 64> kLumaBase = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40, 57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr std::array<int, 64> kChromaBase = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// JFIF RGB -> YCbCr (offsets 0, 128, 128 on the 0..255 scale).
constexpr double kToYcc[3][3] = {{0.299, 0.587, 0.114}, {-0.168736, -0.331264, 0.5}, {0.5, -0.418688, -0.081312}};
constexpr double kToRgb[3][3] = {{1.0, 0.0, 1.402}, {1.0, -0.344136, -0.714136}, {1.0, 1.772, 0.0}};
constexpr double kYccOffset[3] = {0.0, 128.0, 128.0};

struct DctBasis {
  double m[8][8];
  DctBasis() {
    for (int u = 0; u < 8; ++u) {
      const double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) m[u][x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
  }
};
const DctBasis& dct() {
  static const DctBasis basis;
  return basis;
}

// out = D · in · Dᵀ (forward) or Dᵀ · in · D (inverse).
void transform8(const double in[64], double out[64], bool inverse) {
  const auto& d = dct().m;
  double tmp[64];
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += (inverse ? d[k][r] : d[r][k]) * in[k * 8 + c];
      tmp[r * 8 + c] = s;
    }
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += tmp[r * 8 + k] * (inverse ? d[k][c] : d[c][k]);
      out[r * 8 + c] = s;
    }
}

double soft_round(double x) {
  const double r = std::round(x);
  const double d = x - r;
  return r + d * d * d;
}
double soft_round_grad(double x) {
  const double d = x - std::round(x);
  return 3.0 * d * d;
}

void require_jpeg_args(const Image& image, int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be in [1,100]");
  if (image.height() % 8 != 0 || image.width() % 8 != 0) {
    throw DimensionError("diff_jpeg: image sides must be multiples of 8");
  }
}

// Shared forward pass; records what the backward pass needs.
struct JpegForward {
  std::vector<double> ycc;        // 3 planes, level-shifted, 0..255 scale
  std::vector<double> quantized;  // coefficient / step, per plane in block order
  std::vector<double> rgb_raw;    // unclipped output on the 0..1 scale
};

JpegForward run_forward(const Image& image, int quality) {
  const int h = image.height(), w = image.width();
  const std::size_t plane = image.plane_size();
  const auto luma_q = jpeg_quant_table(false, quality);
  const auto chroma_q = jpeg_quant_table(true, quality);
  JpegForward f;
  f.ycc.assign(3 * plane, 0.0);
  f.quantized.assign(3 * plane, 0.0);
  auto src = image.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      double v = kYccOffset[c] - 128.0;
      for (int k = 0; k < 3; ++k) v += kToYcc[c][k] * 255.0 * src[k * plane + i];
      f.ycc[c * plane + i] = v;
    }
  }
  std::vector<double> rec(3 * plane, 0.0);
  double block[64], coef[64];
  for (int c = 0; c < 3; ++c) {
    const auto& q = c == 0 ? luma_q : chroma_q;
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) block[y * 8 + x] = f.ycc[c * plane + (by + y) * w + bx + x];
        transform8(block, coef, false);
        for (int k = 0; k < 64; ++k) {
          const double z = coef[k] / q[k];
          f.quantized[c * plane + (by + k / 8) * w + bx + k % 8] = z;
          coef[k] = soft_round(z) * q[k];
        }
        transform8(coef, block, true);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) rec[c * plane + (by + y) * w + bx + x] = block[y * 8 + x];
      }
  }
  f.rgb_raw.assign(3 * plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    double ycc[3];
    for (int c = 0; c < 3; ++c) ycc[c] = rec[c * plane + i] + 128.0 - kYccOffset[c];
    for (int k = 0; k < 3; ++k) {
      double v = 0.0;
      for (int c = 0; c < 3; ++c) v += kToRgb[k][c] * ycc[c];
      f.rgb_raw[k * plane + i] = v / 255.0;
    }
  }
  return f;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Plain C-style helpers: no objects with destructors live across setjmp.
bool compress_rgb(const unsigned char* rgb, int h, int w, int quality, unsigned char** out, unsigned long* out_size,
                  char* message) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, out, out_size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  for (int c = 0; c < cinfo.num_components; ++c) {
    cinfo.comp_info[c].h_samp_factor = 1;
    cinfo.comp_info[c].v_samp_factor = 1;
  }
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rgb + static_cast<std::size_t>(cinfo.next_scanline) * w * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

bool decompress_rgb(const unsigned char* data, unsigned long size, int h, int w, unsigned char* rgb, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, size);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_decompress(&cinfo);
  if (static_cast<int>(cinfo.output_width) != w || static_cast<int>(cinfo.output_height) != h ||
      cinfo.output_components != 3) {
    std::snprintf(message, JMSG_LENGTH_MAX, "decoded image has unexpected geometry");
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace

std::vector<int> jpeg_quant_table(bool chroma, int quality) {
  quality = std::clamp(quality, 1, 100);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto& base = chroma ? kChromaBase : kLumaBase;
  std::vector<int> table(64);
  for (int k = 0; k < 64; ++k) table[k] = std::clamp((base[k] * scale + 50) / 100, 1, 255);
  return table;
}

Image diff_jpeg(const Image& image, int quality) {
  require_jpeg_args(image, quality);
  const JpegForward f = run_forward(image, quality);
  Image out(image.height(), image.width());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(f.rgb_raw[i], 0.0, 1.0);
  return out;
}

Image diff_jpeg_backward(const Image& image, int quality, const Image& grad_output) {
  require_jpeg_args(image, quality);
  if (!grad_output.same_shape(image)) throw DimensionError("diff_jpeg_backward: gradient shape differs");
  const int h = image.height(), w = image.width();
  const std::size_t plane = image.plane_size();
  const JpegForward f = run_forward(image, quality);
  auto g_out = grad_output.data();

  // Through the clip and the YCbCr -> RGB map.
  std::vector<double> g_rec(3 * plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double raw = f.rgb_raw[k * plane + i];
      if (raw < 0.0 || raw > 1.0) continue;
      const double g = g_out[k * plane + i] / 255.0;
      for (int c = 0; c < 3; ++c) g_rec[c * plane + i] += kToRgb[k][c] * g;
    }
  }
  // Through inverse DCT, soft rounding and forward DCT (all blockwise).
  std::vector<double> g_ycc(3 * plane, 0.0);
  double block[64], coef[64];
  for (int c = 0; c < 3; ++c) {
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) block[y * 8 + x] = g_rec[c * plane + (by + y) * w + bx + x];
        transform8(block, coef, false);  // adjoint of the inverse transform
        for (int k = 0; k < 64; ++k) {
          const double z = f.quantized[c * plane + (by + k / 8) * w + bx + k % 8];
          coef[k] = coef[k] * soft_round_grad(z);  // · q (dequantize) · 1/q (quantize)
        }
        transform8(coef, block, true);  // adjoint of the forward transform
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) g_ycc[c * plane + (by + y) * w + bx + x] = block[y * 8 + x];
      }
  }
  Image grad(h, w);
  auto gi = grad.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int k = 0; k < 3; ++k) {
      double v = 0.0;
      for (int c = 0; c < 3; ++c) v += kToYcc[c][k] * g_ycc[c * plane + i];
      gi[k * plane + i] = 255.0 * v;
    }
  }
  return grad;
}

Image real_jpeg(const Image& image, int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be in [1,100]");
  const int h = image.height(), w = image.width();
  std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
      }
  unsigned char* encoded = nullptr;
  unsigned long encoded_size = 0;
  char message[JMSG_LENGTH_MAX] = {0};
  if (!compress_rgb(rgb.data(), h, w, quality, &encoded, &encoded_size, message)) {
    std::free(encoded);
    throw AttackError(std::string("jpeg encode failed: ") + message);
  }
  std::vector<unsigned char> decoded(rgb.size());
  const bool ok = decompress_rgb(encoded, encoded_size, h, w, decoded.data(), message);
  std::free(encoded);
  if (!ok) throw AttackError(std::string("jpeg decode failed: ") + message);
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = decoded[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return out;
}

}  // namespace recovermark
