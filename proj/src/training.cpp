#include "recovermark/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "recovermark/relay.hpp"

namespace recovermark {

namespace {

using Kind = DistortionKind;

// x ⊙ keep with keep N×1×H×W broadcast across channels.
void multiply_mask(Tensor& x, const Tensor& keep) {
  for (int i = 0; i < x.n(); ++i) {
    const float* k = keep.sample(i);
    float* p = x.sample(i);
    for (int c = 0; c < x.c(); ++c)
      for (std::size_t j = 0; j < x.plane(); ++j) p[c * x.plane() + j] *= k[j];
  }
}

Tensor masked(Tensor x, const Tensor& keep) {
  multiply_mask(x, keep);
  return x;
}

std::vector<std::vector<float>> snapshot(const std::vector<Parameter<float>*>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter<float>*>& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::vector<Parameter<float>*> codec_parameters(ModelBundle& bundle) {
  auto out = bundle.nets().enc.parameters();
  for (auto* p : bundle.nets().dec.parameters()) out.push_back(p);
  return out;
}

class StepLog {
 public:
  explicit StepLog(const TrainHooks& hooks) : hooks_(hooks) {
    if (!hooks.log_path.empty()) {
      out_.open(hooks.log_path, std::ios::trunc);
      if (!out_) throw std::runtime_error("cannot open training log '" + hooks.log_path.string() + "'");
    }
  }
  void write(const StepRecord& r) {
    if (out_.is_open()) {
      out_ << to_json_line(r) << '\n';
      out_.flush();
    }
    if (hooks_.on_step) hooks_.on_step(r);
  }

 private:
  const TrainHooks& hooks_;
  std::ofstream out_;
};

struct Batch {
  std::vector<Image> images;
  std::vector<BinaryMask> masks;
};

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < count; b += batch_size) {
    out.emplace_back(order.begin() + b, order.begin() + std::min(count, b + batch_size));
  }
  return out;
}

Batch gather(const Dataset& data, const std::vector<std::size_t>& idx) {
  Batch b;
  for (auto i : idx) {
    b.images.push_back(data[i].image);
    b.masks.push_back(data[i].mask);
  }
  return b;
}

void require_data(const Dataset& data, const ArchConfig& arch) {
  if (data.empty()) throw std::invalid_argument("training dataset is empty");
  for (const auto& s : data) {
    if (s.image.height() != arch.image_side || s.image.width() != arch.image_side) {
      throw DimensionError("sample '" + s.name + "' is not " + std::to_string(arch.image_side) + " pixels square");
    }
    if (!s.mask.matches(s.image)) throw DimensionError("sample '" + s.name + "' mask size differs");
  }
}

// One Stage-1/Stage-2 step: forward, losses, backward. Gradients accumulate in
// the networks; the caller owns zeroing and the optimizer step.
LossComponents run_step(ModelBundle& bundle, const TrainConfig& config, const Batch& batch,
                        const std::optional<DistortionSpec>& distortion, const RegenerationProxy* regen, Rng& rng) {
  auto& nets = bundle.nets();
  const bool stage2 = config.stage == 2;
  const bool blank = bundle.arch().masked_extraction != 0;
  const bool relay = bundle.arch().relay != 0;
  const auto maps = relay ? carrier_maps(batch.masks) : std::vector<CarrierMap>{};
  const Tensor images = to_tensor(batch.images);
  const Tensor keep_sal = mask_tensor(batch.masks, false);
  const Tensor keep_bg = mask_tensor(batch.masks, true);
  const Tensor sal = masked(images, keep_sal);
  const Tensor bg = masked(images, keep_bg);

  Trace<float> enc_trace;
  Tensor latent = nets.enc.forward(sal, enc_trace);
  if (relay) latent = relay_scatter(latent, maps);
  HidingTrace<float> hide_trace;
  const Tensor container = nets.hnet.forward(concat_channels(latent, bg), hide_trace);

  // Composite = saliency on the watermarked background.
  Tensor comp = masked(container, keep_bg);
  comp += sal;
  std::vector<std::function<Image(const Image&)>> distortion_backward;
  if (distortion) {
    std::vector<Image> distorted;
    for (int i = 0; i < comp.n(); ++i) {
      auto r = apply_differentiable(to_image(comp, i), *distortion, batch.masks[i], rng, regen);
      distorted.push_back(std::move(r.output));
      distortion_backward.push_back(std::move(r.backward));
    }
    comp = to_tensor(distorted);
  }
  const Tensor ext_in = blank ? masked(comp, keep_bg) : comp;

  UNetTrace<float> enet_trace;
  Tensor features = nets.enet.forward(ext_in, enet_trace);
  if (relay) features = relay_gather(features, maps);
  Trace<float> dec_trace;
  const Tensor recovered = nets.dec.forward(features, dec_trace);

  // Clean branch: the raw (undistorted) background, or the raw image when the
  // extractor sees full composites.
  UNetTrace<float> clean_enet_trace;
  Tensor clean_features = nets.enet.forward(blank ? bg : images, clean_enet_trace);
  if (relay) clean_features = relay_gather(clean_features, maps);
  Trace<float> clean_dec_trace;
  const Tensor clean_decoded = nets.dec.forward(clean_features, clean_dec_trace);

  const auto& w = config.weights;
  Tensor g_container, g_recovered, g_clean;
  LossComponents loss;
  loss.fidelity = batch_squared_error(container, bg, w.fidelity, &g_container,
                                      config.fidelity_background_only ? &keep_bg : nullptr);
  loss.watermark = batch_squared_error(recovered, sal, w.watermark, &g_recovered);
  loss.clean = batch_squared_error_to(clean_decoded, 1.0f, w.clean, &g_clean);
  loss.total = total_loss(w, loss.fidelity, loss.watermark, loss.clean);

  // Clean branch backward: parameters only.
  Tensor g_clean_features = nets.dec.backward(clean_dec_trace, g_clean);
  if (relay) g_clean_features = relay_gather_backward(g_clean_features, maps);
  nets.enet.backward(clean_enet_trace, g_clean_features);

  Tensor g_features = nets.dec.backward(dec_trace, g_recovered);
  if (relay) g_features = relay_gather_backward(g_features, maps);
  Tensor g_ext = nets.enet.backward(enet_trace, g_features);
  if (blank) multiply_mask(g_ext, keep_bg);
  if (distortion) {
    std::vector<Image> grads;
    for (int i = 0; i < g_ext.n(); ++i) grads.push_back(distortion_backward[i](to_image(g_ext, i)));
    g_ext = to_tensor(grads);
  }
  multiply_mask(g_ext, keep_bg);
  g_container += g_ext;

  const Tensor g_hide_in = nets.hnet.backward(hide_trace, g_container);
  if (!stage2) {
    Tensor g_latent = slice_channels(g_hide_in, 0, latent.c());
    if (relay) g_latent = relay_scatter_backward(g_latent, maps);
    nets.enc.backward(enc_trace, g_latent);
  }
  return loss;
}

TrainResult run_training(ModelBundle& bundle, const TrainConfig& config, const Dataset& data,
                         const RegenerationProxy* regen, const TrainHooks& hooks) {
  config.validate();
  if (bundle.digest() != config_digest(config.arch)) {
    throw CheckpointError("model bundle architecture does not match the training config");
  }
  require_data(data, bundle.arch());
  const bool stage2 = config.stage == 2;

  auto& nets = bundle.nets();
  std::vector<Parameter<float>*> trainable;
  if (stage2) {
    trainable = nets.hnet.parameters();
    for (auto* p : nets.enet.parameters()) trainable.push_back(p);
  } else {
    trainable = nets.parameters();
  }
  const auto all_params = nets.parameters();
  const auto frozen = stage2 ? codec_parameters(bundle) : std::vector<Parameter<float>*>{};
  Adam adam(trainable, config.learning_rate);
  std::optional<DistortionSchedule> schedule;
  if (stage2) schedule = build_schedule(config.epochs, config.distortion_order, config.cumulative);

  Rng root(config.seed);
  Rng shuffle_rng = root.fork(1);
  Rng distortion_rng = root.fork(2);
  StepLog log(hooks);
  TrainResult result;
  auto last_good = snapshot(all_params);
  long step = 0;
  const long batches_per_epoch = static_cast<long>((data.size() + config.batch_size - 1) / config.batch_size);
  const long total_steps = batches_per_epoch * config.epochs;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_sum = 0.0;
    int batches = 0;
    for (const auto& idx : epoch_batches(data.size(), config.batch_size, shuffle_rng)) {
      if (config.final_learning_rate > 0.0 && total_steps > 1) {
        const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
        adam.set_learning_rate(config.final_learning_rate + 0.5 * (config.learning_rate - config.final_learning_rate) *
                                                                (1.0 + std::cos(std::numbers::pi * progress)));
      }
      const Batch batch = gather(data, idx);
      std::optional<DistortionSpec> distortion;
      if (stage2 && distortion_rng.uniform() >= config.identity_probability) {
        distortion = sample_active_distortion(*schedule, epoch, distortion_rng, config.ranges);
      }
      for (auto* p : all_params) p->zero_grad();
      LossComponents loss;
      try {
        loss = run_step(bundle, config, batch, distortion, regen, distortion_rng);
      } catch (const NonFiniteLoss& e) {
        restore(all_params, last_good);
        if (!hooks.abort_checkpoint.empty()) save_checkpoint(bundle, hooks.abort_checkpoint);
        throw TrainingAborted(std::string("epoch ") + std::to_string(epoch) + ", step " + std::to_string(step) +
                              ": " + e.what());
      }
      const auto before = stage2 ? snapshot(frozen) : std::vector<std::vector<float>>{};
      adam.step();
      if (stage2) {
        for (std::size_t i = 0; i < frozen.size(); ++i) {
          if (frozen[i]->value != before[i]) {
            throw FrozenParameterViolation("frozen parameter '" + frozen[i]->name + "' changed in stage 2");
          }
        }
      }
      StepRecord rec{epoch, step++, loss, distortion ? distortion->describe() : "none"};
      log.write(rec);
      result.last = rec;
      epoch_sum += loss.total;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_sum / batches);
    last_good = snapshot(all_params);
  }
  bundle.stage = stage2 ? TrainingStage::Stage2 : TrainingStage::Stage1;
  bundle.codec_frozen = stage2;
  return result;
}

}  // namespace

void DistortionRanges::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("distortion ranges: ") + what);
  };
  require(regen_noise >= 0.0, "regen_noise must be >= 0");
  require(noise_min > 0.0 && noise_min <= noise_max, "need 0 < noise_min <= noise_max");
  require(jpeg_min >= 1 && jpeg_min <= jpeg_max && jpeg_max <= 100, "need 1 <= jpeg_min <= jpeg_max <= 100");
  require(blur_min > 0.0 && blur_min <= blur_max, "need 0 < blur_min <= blur_max");
  require(patch_min > 0.0 && patch_min <= patch_max && patch_max <= 0.5, "need 0 < patch_min <= patch_max <= 0.5");
}

void TrainConfig::validate() const {
  arch.validate();
  ranges.validate();
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("train config: " + what);
  };
  require(stage == 1 || stage == 2, "stage must be 1 or 2");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  require(final_learning_rate >= 0.0 && final_learning_rate <= learning_rate,
          "final_learning_rate must be in [0, learning_rate]");
  require(weights.fidelity >= 0 && weights.watermark >= 0 && weights.clean >= 0, "loss weights must be >= 0");
  require(identity_probability >= 0.0 && identity_probability <= 1.0, "identity_probability must be in [0,1]");
  require(!distortion_order.empty(), "distortion_order must not be empty");
  require(denoiser_epochs >= 1, "denoiser_epochs must be >= 1");
  require(denoiser_learning_rate > 0.0, "denoiser_learning_rate must be > 0");
}

Adam::Adam(std::vector<Parameter<float>*> params, double learning_rate) : params_(std::move(params)), lr_(learning_rate) {
  for (const auto* p : params_) {
    m_.emplace_back(p->size(), 0.0f);
    v_.emplace_back(p->size(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      m[k] = static_cast<float>(kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g);
      v[k] = static_cast<float>(kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g * g);
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      p.value[k] = static_cast<float>(p.value[k] - lr_ * mh / (std::sqrt(vh) + kAdamEpsilon));
    }
  }
}

std::vector<DistortionKind> DistortionSchedule::active(int epoch) const {
  if (epoch < 0 || epoch >= total_epochs) throw std::out_of_range("epoch outside the schedule");
  std::vector<DistortionKind> out;
  for (const auto& w : windows) {
    const bool on = cumulative ? w.start <= epoch : (w.start <= epoch && epoch < w.end);
    if (on) out.push_back(w.kind);
  }
  return out;
}

DistortionSchedule build_schedule(int total_epochs, const std::vector<DistortionKind>& ordered_kinds,
                                  bool cumulative) {
  if (ordered_kinds.empty()) throw std::invalid_argument("build_schedule: no distortion kinds");
  const int kinds = static_cast<int>(ordered_kinds.size());
  if (total_epochs < kinds) {
    throw std::invalid_argument("build_schedule: " + std::to_string(total_epochs) + " epochs for " +
                                std::to_string(kinds) + " kinds");
  }
  DistortionSchedule s;
  s.total_epochs = total_epochs;
  s.cumulative = cumulative;
  const int half = (total_epochs + 1) / 2;
  s.windows.push_back({ordered_kinds[0], 0, kinds == 1 ? total_epochs : half});
  const int rest = total_epochs - half;
  const int k = kinds - 1;
  for (int i = 0; i < k; ++i) {
    // floor(i·R/k + 1/2) in integer arithmetic.
    const int start = half + (2 * i * rest + k) / (2 * k);
    const int end = i + 1 < k ? half + (2 * (i + 1) * rest + k) / (2 * k) : total_epochs;
    s.windows.push_back({ordered_kinds[i + 1], start, end});
  }
  return s;
}

DistortionSpec sample_active_distortion(const DistortionSchedule& schedule, int epoch, Rng& rng,
                                        const DistortionRanges& ranges) {
  const auto active = schedule.active(epoch);
  if (active.empty()) throw std::logic_error("no distortion active at epoch " + std::to_string(epoch));
  DistortionSpec spec;
  spec.kind = active[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(active.size()) - 1))];
  spec.differentiable = true;
  switch (spec.kind) {
    case Kind::Regeneration:
      spec.param = ranges.regen_noise;
      break;
    case Kind::SaliencyNoise:
    case Kind::GlobalNoise:
      spec.param = rng.uniform(ranges.noise_min, ranges.noise_max);
      break;
    case Kind::Jpeg:
      spec.param = rng.uniform_int(ranges.jpeg_min, ranges.jpeg_max);
      break;
    case Kind::LowPass:
      spec.param = rng.uniform(ranges.blur_min, ranges.blur_max);
      break;
    case Kind::PatchRemove:
      spec.param = rng.uniform(ranges.patch_min, ranges.patch_max);
      break;
  }
  return spec;
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["l_fid"] = r.loss.fidelity;
  j["l_wm"] = r.loss.watermark;
  j["l_clean"] = r.loss.clean;
  j["total"] = r.loss.total;
  j["active_distortion"] = r.active_distortion;
  return j.dump();
}

TrainResult train_stage1(ModelBundle& bundle, const TrainConfig& config, const Dataset& data,
                         const TrainHooks& hooks) {
  if (config.stage != 1) throw std::invalid_argument("train_stage1 needs stage = 1");
  if (bundle.codec_frozen) throw std::invalid_argument("train_stage1: bundle has a frozen codec");
  return run_training(bundle, config, data, nullptr, hooks);
}

TrainResult train_stage2(ModelBundle& bundle, const TrainConfig& config, const Dataset& data,
                         const RegenerationProxy& regeneration, const TrainHooks& hooks) {
  if (config.stage != 2) throw std::invalid_argument("train_stage2 needs stage = 2");
  if (bundle.stage == TrainingStage::None) throw std::invalid_argument("stage 2 needs a stage-1 checkpoint");
  bundle.codec_frozen = true;
  return run_training(bundle, config, data, &regeneration, hooks);
}

TrainResult train_denoiser(RegenerationProxy& proxy, const TrainConfig& config, const Dataset& data,
                           const TrainHooks& hooks) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("denoiser dataset is empty");
  auto& net = proxy.net();
  const auto params = net.parameters();
  Adam adam(params, config.denoiser_learning_rate);
  Rng root(config.seed ^ 0xD3A015EULL);
  Rng shuffle_rng = root.fork(1);
  Rng noise_rng = root.fork(2);
  StepLog log(hooks);
  TrainResult result;
  long step = 0;
  const double sigma = config.ranges.regen_noise > 0.0 ? config.ranges.regen_noise : RegenerationProxy::kDefaultNoiseLevel;
  for (int epoch = 0; epoch < config.denoiser_epochs; ++epoch) {
    double sum = 0.0;
    int batches = 0;
    for (const auto& idx : epoch_batches(data.size(), config.batch_size, shuffle_rng)) {
      const Batch batch = gather(data, idx);
      const Tensor clean = to_tensor(batch.images);
      std::vector<Image> noisy;
      for (const auto& im : batch.images) noisy.push_back(global_noise(im, sigma, noise_rng));
      adam.zero_grad();
      DenoiserTrace<float> trace;
      const Tensor out = net.forward(to_tensor(noisy), trace);
      Tensor g;
      StepRecord rec{epoch, step++, {}, "regen:denoise"};
      rec.loss.watermark = batch_squared_error(out, clean, 1.0, &g);
      rec.loss.total = rec.loss.watermark;
      if (!std::isfinite(rec.loss.total)) throw TrainingAborted("denoiser loss is not finite");
      net.backward(trace, g);
      adam.step();
      log.write(rec);
      result.last = rec;
      sum += rec.loss.total;
      ++batches;
    }
    result.epoch_loss.push_back(sum / batches);
  }
  adam.zero_grad();
  return result;
}

}  // namespace recovermark
