#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "recovermark/dataset.hpp"
#include "recovermark/distortions.hpp"
#include "recovermark/losses.hpp"
#include "recovermark/models.hpp"

namespace recovermark {

/// Raised in Stage 2 when Enc or Dec changed during an optimization step.
class FrozenParameterViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when training stops on a non-finite loss. The bundle passed in has
/// been restored to the last completed epoch.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-batch parameter ranges for Stage-2 distortions.
struct DistortionRanges {
  double regen_noise = RegenerationProxy::kDefaultNoiseLevel;
  double noise_min = 0.02, noise_max = 0.1;
  int jpeg_min = 50, jpeg_max = 95;
  double blur_min = 0.5, blur_max = 2.0;
  double patch_min = 0.05, patch_max = 0.25;

  void validate() const;
};

struct TrainConfig {
  ArchConfig arch;
  int stage = 1;
  int epochs = 200;
  int batch_size = 8;
  double learning_rate = 2e-4;
  /// When > 0, the step size follows a cosine from learning_rate down to this
  /// value over the run; 0 keeps it constant.
  double final_learning_rate = 0.0;
  std::uint64_t seed = 0;
  LossWeights weights;
  /// Restrict the fidelity loss to pixels outside the saliency mask.
  bool fidelity_background_only = false;
  std::vector<DistortionKind> distortion_order = {DistortionKind::Regeneration, DistortionKind::SaliencyNoise,
                                                  DistortionKind::GlobalNoise, DistortionKind::Jpeg,
                                                  DistortionKind::LowPass};
  bool cumulative = true;
  double identity_probability = 0.1;
  DistortionRanges ranges;
  // Regeneration-proxy denoiser training.
  int denoiser_epochs = 40;
  double denoiser_learning_rate = 1e-3;

  void validate() const;
};

/// Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter<float>*> params, double learning_rate);
  void step();
  void zero_grad();
  long steps() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  std::vector<Parameter<float>*> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_;
  long t_ = 0;
};

struct DistortionWindow {
  DistortionKind kind;
  int start;
  int end;  // exclusive
};

struct DistortionSchedule {
  int total_epochs = 0;
  bool cumulative = true;
  std::vector<DistortionWindow> windows;

  /// Kinds active at `epoch`: every window started at or before it when
  /// cumulative, otherwise the window containing it.
  std::vector<DistortionKind> active(int epoch) const;
};

/// First kind occupies [0, ⌈E/2⌉); the remaining k kinds start at
/// ⌈E/2⌉ + round(i·R/k) with R = E − ⌈E/2⌉, ties rounding up.
DistortionSchedule build_schedule(int total_epochs, const std::vector<DistortionKind>& ordered_kinds,
                                  bool cumulative = true);

/// Uniform draw of one active kind with parameters from `ranges`.
DistortionSpec sample_active_distortion(const DistortionSchedule& schedule, int epoch, Rng& rng,
                                        const DistortionRanges& ranges = {});

struct StepRecord {
  int epoch = 0;
  long step = 0;
  LossComponents loss;
  std::string active_distortion = "none";
};

std::string to_json_line(const StepRecord& record);

struct TrainHooks {
  /// One JSON line per step when set.
  std::filesystem::path log_path;
  std::function<void(const StepRecord&)> on_step;
  /// Written with the last good parameters when training aborts.
  std::filesystem::path abort_checkpoint;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean total loss per epoch
  StepRecord last;
};

/// Joint optimization of Enc, Dec, HNet and ENet. `bundle` must match
/// config.arch; it is updated in place and tagged stage1.
TrainResult train_stage1(ModelBundle& bundle, const TrainConfig& config, const Dataset& data,
                         const TrainHooks& hooks = {});

/// HNet/ENet robustness training through the progressive distortion layer.
/// Enc/Dec stay bit-identical (checked every step).
TrainResult train_stage2(ModelBundle& bundle, const TrainConfig& config, const Dataset& data,
                         const RegenerationProxy& regeneration, const TrainHooks& hooks = {});

/// Trains the regeneration-proxy denoiser on clean images.
TrainResult train_denoiser(RegenerationProxy& proxy, const TrainConfig& config, const Dataset& data,
                           const TrainHooks& hooks = {});

}  // namespace recovermark
