#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "recovermark/forensics.hpp"

namespace recovermark {

namespace {

constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel(const Image& im, int c) {
  Plane p{im.height(), im.width(), {}};
  auto d = im.data();
  p.v.assign(d.begin() + c * im.plane_size(), d.begin() + (c + 1) * im.plane_size());
  return p;
}

Plane downsample(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
    }
  return out;
}

// Valid separable filtering.
Plane filter_valid(const Plane& p, const std::vector<double>& g) {
  const int f = static_cast<int>(g.size());
  Plane tmp{p.h, p.w - f + 1, {}};
  tmp.v.assign(static_cast<std::size_t>(tmp.h) * tmp.w, 0.0);
  for (int y = 0; y < tmp.h; ++y)
    for (int x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int k = 0; k < f; ++k) s += g[k] * p.at(y, x + k);
      tmp.v[static_cast<std::size_t>(y) * tmp.w + x] = s;
    }
  Plane out{p.h - f + 1, tmp.w, {}};
  out.v.assign(static_cast<std::size_t>(out.h) * out.w, 0.0);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int k = 0; k < f; ++k) s += g[k] * tmp.at(y + k, x);
      out.v[static_cast<std::size_t>(y) * out.w + x] = s;
    }
  return out;
}

std::vector<double> ssim_window(int side) {
  const int f = std::min(11, side);
  const double sigma = 1.5 * f / 11.0;
  std::vector<double> g(f);
  const double centre = (f - 1) / 2.0;
  for (int k = 0; k < f; ++k) g[k] = std::exp(-0.5 * (k - centre) * (k - centre) / (sigma * sigma));
  const double sum = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) v /= sum;
  return g;
}

// Mean SSIM and contrast-structure terms at one scale.
std::pair<double, double> ssim_cs(const Plane& a, const Plane& b) {
  const auto g = ssim_window(std::min(a.h, a.w));
  Plane aa = a, bb = b, ab = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Plane mu_a = filter_valid(a, g), mu_b = filter_valid(b, g);
  const Plane e_aa = filter_valid(aa, g), e_bb = filter_valid(bb, g), e_ab = filter_valid(ab, g);
  double ssim = 0.0, cs = 0.0;
  const std::size_t n = mu_a.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma;
    const double vb = e_bb.v[i] - mb * mb;
    const double cov = e_ab.v[i] - ma * mb;
    const double c = (2.0 * cov + kC2) / (va + vb + kC2);
    cs += c;
    ssim += c * (2.0 * ma * mb + kC1) / (ma * ma + mb * mb + kC1);
  }
  return {ssim / n, cs / n};
}

std::pair<double, std::size_t> masked_sse(const Image& a, const Image& b, const BinaryMask* region) {
  if (!a.same_shape(b)) throw DimensionError("psnr: image shapes differ");
  if (region && !region->matches(a)) throw DimensionError("psnr: mask shape differs");
  const std::size_t plane = a.plane_size();
  auto x = a.data();
  auto y = b.data();
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (region && !region->test(i % plane)) continue;
    const double d = x[i] - y[i];
    sse += d * d;
    ++n;
  }
  return {sse, n};
}

double psnr_from(double sse, std::size_t n) {
  if (n == 0) return kPsnrCap;
  const double mse = sse / static_cast<double>(n);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  const auto [sse, n] = masked_sse(a, b, nullptr);
  return psnr_from(sse, n);
}

double psnr(const Image& a, const Image& b, const BinaryMask& region) {
  const auto [sse, n] = masked_sse(a, b, &region);
  return psnr_from(sse, n);
}

int ms_ssim_scales(int side) {
  if (side < 1) throw DimensionError("ms_ssim: empty image");
  int scales = 1;
  while (scales < 5 && (side >> scales) >= 2) ++scales;
  return side >= 32 ? 5 : scales;
}

double ms_ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("ms_ssim: image shapes differ");
  const int side = std::min(a.height(), a.width());
  const int scales = ms_ssim_scales(side);
  if (scales < 5) {
    std::clog << "warning: ms_ssim on a " << side << "-pixel image uses " << scales << " scales\n";
  }
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsSsimWeights[s];
  double total = 0.0;
  for (int c = 0; c < Image::kChannels; ++c) {
    Plane pa = channel(a, c), pb = channel(b, c);
    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
      const auto [ssim, cs] = ssim_cs(pa, pb);
      const double w = kMsSsimWeights[s] / weight_sum;
      const double term = s + 1 == scales ? ssim : cs;
      value *= std::pow(std::max(term, 0.0), w);
      if (s + 1 < scales) {
        pa = downsample(pa);
        pb = downsample(pb);
      }
    }
    total += value;
  }
  return total / Image::kChannels;
}

std::optional<double> ncc(const Image& a, const Image& b, const BinaryMask& support) {
  if (!a.same_shape(b)) throw DimensionError("ncc: image shapes differ");
  if (!support.matches(a)) throw DimensionError("ncc: mask shape differs");
  const std::size_t plane = a.plane_size();
  auto x = a.data();
  auto y = b.data();
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!support.test(i % plane)) continue;
    sx += x[i];
    sy += y[i];
    ++n;
  }
  if (n == 0) return std::nullopt;
  const double mx = sx / n, my = sy / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!support.test(i % plane)) continue;
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // Rounding leaves a tiny residue on constant inputs; treat that as zero.
  const double floor = 1e-20 * static_cast<double>(n);
  if (sxx <= floor || syy <= floor) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

VerificationResult verify(const Image& recovered, const Image& original_saliency, const BinaryMask& support,
                          double threshold) {
  VerificationResult r;
  r.threshold = threshold;
  const auto value = ncc(recovered, original_saliency, support);
  if (!value) {
    r.reason = support.none() ? "empty saliency support" : "zero variance on the saliency support";
    return r;
  }
  r.ncc = *value;
  r.owned = r.ncc > threshold;
  return r;
}

F1Auc f1_auc(const std::vector<double>& diff_map, const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt) || diff_map.size() != gt.size()) throw DimensionError("f1_auc: sizes differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred.test(i), g = gt.test(i);
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  F1Auc out;
  out.f1 = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);

  const std::size_t positives = gt.count();
  const std::size_t negatives = gt.size() - positives;
  if (positives == 0 || negatives == 0) return out;
  // Mann-Whitney U with average ranks for ties.
  std::vector<std::size_t> order(diff_map.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return diff_map[a] < diff_map[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && diff_map[order[j]] == diff_map[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (gt.test(order[k])) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(positives), q = static_cast<double>(negatives);
  out.auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
  return out;
}

}  // namespace recovermark
