#include "recovermark/forensics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "recovermark/relay.hpp"

namespace recovermark {

namespace {

constexpr std::size_t kInferenceChunk = 16;

void require_trained(const ModelBundle& models, const char* what) {
  if (models.stage == TrainingStage::None) {
    throw UntrainedModelError(std::string(what) + ": model bundle has not been trained");
  }
}

void require_inputs(const ModelBundle& models, std::span<const Image> images, std::span<const BinaryMask> masks,
                    const char* what) {
  if (images.size() != masks.size()) throw std::invalid_argument(std::string(what) + ": image/mask count differs");
  const int side = models.arch().image_side;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != side || images[i].width() != side) {
      throw DimensionError(std::string(what) + ": expected " + std::to_string(side) + "x" + std::to_string(side) +
                           " input");
    }
    if (!masks[i].matches(images[i])) throw DimensionError(std::string(what) + ": mask size differs");
  }
}

void keep_region(Tensor& x, const Tensor& keep) {
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (std::size_t j = 0; j < x.plane(); ++j) x.sample(i)[c * x.plane() + j] *= keep.sample(i)[j];
}

BinaryMask tamper_region(const BinaryMask& face, double extent, Rng& rng) {
  int y0 = face.height(), y1 = -1, x0 = face.width(), x1 = -1;
  for (int y = 0; y < face.height(); ++y)
    for (int x = 0; x < face.width(); ++x)
      if (face.at(y, x)) {
        y0 = std::min(y0, y), y1 = std::max(y1, y);
        x0 = std::min(x0, x), x1 = std::max(x1, x);
      }
  if (y1 < 0) return face;
  const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
  const int h = std::max(1, static_cast<int>(std::lround(extent * bh)));
  const int w = std::max(1, static_cast<int>(std::lround(extent * bw)));
  const int ty = y0 + rng.uniform_int(0, bh - h);
  const int tx = x0 + rng.uniform_int(0, bw - w);
  BinaryMask rect(face.height(), face.width());
  for (int y = ty; y < ty + h; ++y)
    for (int x = tx; x < tx + w; ++x) rect.at(y, x) = 1;
  BinaryMask region = rect.intersect(face);
  return region.none() ? face : region;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<Image> embed_batch(std::span<const Image> images, std::span<const BinaryMask> masks,
                               const ModelBundle& models) {
  require_trained(models, "embed");
  require_inputs(models, images, masks, "embed");
  std::vector<Image> out;
  const auto& nets = models.nets();
  for (std::size_t b = 0; b < images.size(); b += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, images.size() - b);
    const auto imgs = images.subspan(b, n);
    const auto msks = masks.subspan(b, n);
    Tensor sal = to_tensor(imgs);
    Tensor bg = sal;
    keep_region(sal, mask_tensor(msks, false));
    keep_region(bg, mask_tensor(msks, true));
    Tensor latent = nets.enc.forward(sal);
    if (models.arch().relay) latent = relay_scatter(latent, carrier_maps(msks));
    const Tensor container = nets.hnet.forward(concat_channels(latent, bg));
    for (std::size_t i = 0; i < n; ++i) {
      const Image c = to_image(container, static_cast<int>(i));
      out.push_back(composite(imgs[i], c, msks[i]));
    }
  }
  return out;
}

std::vector<Image> recover_batch(std::span<const Image> suspicious, std::span<const BinaryMask> masks,
                                 const ModelBundle& models) {
  require_trained(models, "recover");
  require_inputs(models, suspicious, masks, "recover");
  std::vector<Image> out;
  const auto& nets = models.nets();
  for (std::size_t b = 0; b < suspicious.size(); b += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, suspicious.size() - b);
    const auto msks = masks.subspan(b, n);
    Tensor x = to_tensor(suspicious.subspan(b, n));
    if (models.arch().masked_extraction) keep_region(x, mask_tensor(msks, true));
    Tensor features = nets.enet.forward(x);
    if (models.arch().relay) features = relay_gather(features, carrier_maps(msks));
    const Tensor rec = nets.dec.forward(features);
    for (std::size_t i = 0; i < n; ++i) out.push_back(to_image(rec, static_cast<int>(i)));
  }
  return out;
}

Image embed(const Image& image, const BinaryMask& mask, const ModelBundle& models) {
  return embed_batch(std::span<const Image>(&image, 1), std::span<const BinaryMask>(&mask, 1), models).front();
}

Image recover(const Image& suspicious, const BinaryMask& mask, const ModelBundle& models) {
  return recover_batch(std::span<const Image>(&suspicious, 1), std::span<const BinaryMask>(&mask, 1), models)
      .front();
}

LocalizationResult localize(const Image& recovered, const Image& suspicious, const BinaryMask& saliency_mask,
                            const LocalizationOptions& options) {
  if (!recovered.same_shape(suspicious)) throw DimensionError("localize: image shapes differ");
  if (!saliency_mask.matches(recovered)) throw DimensionError("localize: mask shape differs");
  if (!(options.threshold > 0.0 && options.threshold < 1.0)) {
    throw std::invalid_argument("localize: threshold must be in (0,1)");
  }
  const int h = recovered.height(), w = recovered.width();
  LocalizationResult r;
  r.threshold = options.threshold;
  r.diff_map.assign(static_cast<std::size_t>(h) * w, 0.0);
  r.mask = BinaryMask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!saliency_mask.at(y, x)) continue;
      double agg = 0.0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double d = std::abs(recovered.at(c, y, x) - suspicious.at(c, y, x));
        agg = options.max_over_channels ? std::max(agg, d) : agg + d / Image::kChannels;
      }
      r.diff_map[static_cast<std::size_t>(y) * w + x] = agg;
      r.mask.at(y, x) = agg > options.threshold;
    }
  if (options.median_filter) {
    BinaryMask filtered(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int on = 0, total = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            ++total;
            on += r.mask.at(yy, xx);
          }
        filtered.at(y, x) = 2 * on > total && saliency_mask.at(y, x);
      }
    r.mask = filtered;
  }
  return r;
}

std::string to_string(TamperKind kind) {
  switch (kind) {
    case TamperKind::None: return "none";
    case TamperKind::Splice: return "splice";
    case TamperKind::NoiseFill: return "noise_fill";
    case TamperKind::ConstantFill: return "constant_fill";
  }
  return "none";
}

TamperKind parse_tamper_kind(const std::string& text) {
  for (auto k : {TamperKind::None, TamperKind::Splice, TamperKind::NoiseFill, TamperKind::ConstantFill})
    if (to_string(k) == text) return k;
  throw std::invalid_argument("unknown tamper kind '" + text + "'");
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["metadata"] = {{"config_digest", config_digest}, {"latent_channels", latent_channels},
                   {"hnet_depth", hnet_depth},       {"enet_depth", enet_depth},
                   {"codec_blocks", codec_blocks},   {"images", images},
                   {"tamper", tamper}};
  nlohmann::ordered_json rows = nlohmann::ordered_json::object();
  for (const auto& [name, m] : attacks) {
    nlohmann::ordered_json row;
    row["localization"]["f1"] = m.f1;
    row["localization"]["auc"] = m.auc ? nlohmann::ordered_json(*m.auc) : nlohmann::ordered_json(nullptr);
    row["recovery"]["psnr"] = m.psnr;
    row["recovery"]["ms_ssim"] = m.ms_ssim;
    row["verification"]["success_rate"] = m.success_rate;
    row["verification"]["mean_ncc"] = m.mean_ncc;
    rows[name] = row;
  }
  j["attacks"] = rows;
  return j.dump(2) + "\n";
}

MetricsReport evaluate(const ModelBundle& models, const Dataset& data, const std::vector<NamedAttack>& attacks,
                       const AttackContext& context, const EvaluationOptions& options) {
  if (data.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  require_trained(models, "evaluate");
  MetricsReport report;
  report.config_digest = models.digest();
  report.latent_channels = models.arch().latent_channels;
  report.hnet_depth = models.arch().hnet_depth;
  report.enet_depth = models.arch().enet_depth;
  report.codec_blocks = models.arch().codec_blocks;
  report.images = static_cast<int>(data.size());
  report.tamper = to_string(options.tamper);

  std::vector<Image> images;
  std::vector<BinaryMask> masks;
  for (const auto& s : data) {
    images.push_back(s.image);
    masks.push_back(s.mask);
  }
  const std::vector<Image> protected_images = embed_batch(images, masks, models);

  for (std::size_t a = 0; a < attacks.size(); ++a) {
    std::vector<Image> suspicious;
    std::vector<BinaryMask> truth;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::uint64_t seed = mix_seed(options.seed ^ mix_seed((a << 32) + i));
      Image attacked = apply_chain(protected_images[i], attacks[a].chain, masks[i], seed, context);
      Rng tamper_rng(mix_seed(seed + 1));
      BinaryMask gt(attacked.height(), attacked.width());
      if (options.tamper != TamperKind::None) {
        gt = tamper_region(masks[i], options.tamper_extent, tamper_rng);
        TamperSpec spec{ConstantFill{0.5}, gt};
        if (options.tamper == TamperKind::Splice) {
          Image donor = data.size() > 1 ? data[(i + 1) % data.size()].image : images[i];
          if (data.size() == 1)
            for (auto& v : donor.data()) v = 1.0 - v;
          spec.kind = SplicePatch{std::move(donor)};
        } else if (options.tamper == TamperKind::NoiseFill) {
          spec.kind = NoiseFill{0.3, tamper_rng.next()};
        }
        attacked = apply_tamper(attacked, spec);
      }
      suspicious.push_back(std::move(attacked));
      truth.push_back(std::move(gt));
    }
    const std::vector<Image> recovered = recover_batch(suspicious, masks, models);

    std::vector<double> f1s, aucs, psnrs, ssims, nccs;
    int owned = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto loc = localize(recovered[i], suspicious[i], masks[i], options.localization);
      const auto fa = f1_auc(loc.diff_map, loc.mask, truth[i]);
      f1s.push_back(fa.f1);
      if (fa.auc) aucs.push_back(*fa.auc);
      const Image saliency = segment(images[i], masks[i]).saliency;
      psnrs.push_back(psnr(recovered[i], images[i], masks[i]));
      ssims.push_back(ms_ssim(blank_region(recovered[i], masks[i].complement()), saliency));
      const auto v = verify(recovered[i], saliency, masks[i], options.ncc_threshold);
      owned += v.owned;
      nccs.push_back(v.ncc);
    }
    AttackMetrics m;
    m.f1 = mean(f1s);
    if (!aucs.empty()) m.auc = mean(aucs);
    m.psnr = mean(psnrs);
    m.ms_ssim = mean(ssims);
    m.success_rate = static_cast<double>(owned) / static_cast<double>(data.size());
    m.mean_ncc = mean(nccs);
    report.attacks.emplace_back(attacks[a].name, m);
  }
  return report;
}

std::vector<CapacityRecord> capacity_sweep(const ModelBundle& models, const std::vector<Image>& base_images,
                                           const std::vector<double>& fractions, const AttackChain& attack,
                                           const AttackContext& context, std::uint64_t seed) {
  if (base_images.empty()) throw std::invalid_argument("capacity_sweep: no base images");
  std::vector<CapacityRecord> curve;
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    const double fraction = fractions[f];
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("capacity_sweep: fraction must be in (0,1)");
    const int side = base_images.front().height();
    const double centre = 0.5 * side;
    const BinaryMask mask = ellipse_mask(side, fraction, centre, centre);
    const std::vector<BinaryMask> masks(base_images.size(), mask);
    std::vector<Image> protected_images = embed_batch(base_images, masks, models);
    for (std::size_t i = 0; i < protected_images.size(); ++i) {
      protected_images[i] =
          apply_chain(protected_images[i], attack, mask, mix_seed(seed ^ mix_seed((f << 32) + i)), context);
    }
    const std::vector<Image> recovered = recover_batch(protected_images, masks, models);
    const BinaryMask background = mask.complement();
    std::vector<double> sp, ss, bp, bs;
    for (std::size_t i = 0; i < base_images.size(); ++i) {
      const auto parts = segment(base_images[i], mask);
      sp.push_back(psnr(recovered[i], base_images[i], mask));
      ss.push_back(ms_ssim(blank_region(recovered[i], background), parts.saliency));
      bp.push_back(psnr(protected_images[i], base_images[i], background));
      bs.push_back(ms_ssim(blank_region(protected_images[i], mask), parts.background));
    }
    curve.push_back({fraction, mean(sp), mean(ss), mean(bp), mean(bs)});
  }
  return curve;
}

std::string capacity_to_json(const std::vector<CapacityRecord>& curve) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : curve) {
    j.push_back({{"fraction", r.fraction},
                 {"saliency", {{"psnr", r.saliency_psnr}, {"ms_ssim", r.saliency_ms_ssim}}},
                 {"background", {{"psnr", r.background_psnr}, {"ms_ssim", r.background_ms_ssim}}}});
  }
  return j.dump(2) + "\n";
}

std::vector<CapacityRecord> capacity_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  std::vector<CapacityRecord> out;
  for (const auto& r : j) {
    out.push_back({r.at("fraction").get<double>(), r.at("saliency").at("psnr").get<double>(),
                   r.at("saliency").at("ms_ssim").get<double>(), r.at("background").at("psnr").get<double>(),
                   r.at("background").at("ms_ssim").get<double>()});
  }
  return out;
}

}  // namespace recovermark
