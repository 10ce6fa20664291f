// recovermark command-line tool.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#include "recovermark/config.hpp"
#include "recovermark/dataset.hpp"
#include "recovermark/forensics.hpp"
#include "recovermark/training.hpp"

#ifndef RECOVERMARK_CODE_HASH
#define RECOVERMARK_CODE_HASH "unknown"
#endif

namespace fs = std::filesystem;
using namespace recovermark;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

RunConfig read_config(const std::string& path) {
  RunConfig cfg = path.empty() ? parse_config("") : load_config(path);
  if (const char* env = std::getenv("RECOVERMARK_SEED")) {
    try {
      std::size_t used = 0;
      cfg.train.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw UsageError(std::string("RECOVERMARK_SEED is not an unsigned integer: ") + env);
    }
    cfg.eval.seed = cfg.train.seed;
  }
  return cfg;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " not found: " + path);
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw UsageError("'" + path.string() + "' exists; pass --force to overwrite");
}

/// Builds a run directory next to its destination and renames it into place.
class RunDir {
 public:
  RunDir(fs::path dest, bool force) : dest_(std::move(dest)) {
    if (fs::exists(dest_) && !fs::is_empty(dest_) && !force) {
      throw UsageError("output directory '" + dest_.string() + "' is not empty; pass --force to replace it");
    }
    const fs::path parent = dest_.has_parent_path() ? dest_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    tmp_ = parent / (dest_.filename().string() + ".tmp-" + std::to_string(::getpid()));
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~RunDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }
  fs::path operator/(const std::string& name) const { return tmp_ / name; }
  const fs::path& final_path() const { return dest_; }
  void commit() {
    fs::remove_all(dest_);
    fs::rename(tmp_, dest_);
    committed_ = true;
  }

 private:
  fs::path dest_, tmp_;
  bool committed_ = false;
};

struct Manifest {
  nlohmann::ordered_json j;
  Manifest(const std::string& command, const std::string& config_path, const RunConfig& cfg) {
    j["command"] = command;
    j["config_path"] = config_path;
    j["config_digest"] = cfg.digest();
    j["model_digest"] = config_digest(cfg.train.arch);
    j["seed"] = cfg.train.seed;
    j["code_version"] = RECOVERMARK_CODE_HASH;
    j["started"] = utc_now();
    j["inputs"] = nlohmann::ordered_json::object();
    j["outputs"] = nlohmann::ordered_json::array();
  }
  void write(const fs::path& path) {
    j["finished"] = utc_now();
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write '" + path.string() + "'");
}

ModelBundle load_models(const std::string& path, const RunConfig& cfg) {
  require_file(path, "checkpoint");
  return load_checkpoint(path, cfg.train.arch);
}

std::optional<RegenerationProxy> load_denoiser(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) return std::nullopt;
  require_file(path, "denoiser checkpoint");
  return RegenerationProxy::load(path, cfg.train.arch.denoiser_width);
}

Dataset read_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir);
  Dataset data = load_dataset(dir);
  if (data.empty()) throw DataError("dataset '" + dir + "' is empty");
  return data;
}

int run(int argc, char** argv) {
  CLI::App app{"Robust face-region watermarking: embed, attack, recover, localize, verify."};
  app.require_subcommand(1);
  std::string config_path;
  bool force = false;
  app.add_option("--config", config_path, "Run config (key = value)");
  app.add_flag("--force", force, "Overwrite existing outputs");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic face dataset");
  std::string gen_out;
  SyntheticOptions synth;
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--count", synth.count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--side", synth.side, "Image side in pixels")->check(CLI::PositiveNumber);
  gen->add_option("--min-face", synth.min_face_fraction, "Smallest face area fraction");
  gen->add_option("--max-face", synth.max_face_fraction, "Largest face area fraction");
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--seed", gen_seed, "Generator seed (default: config seed)");

  // train
  auto* train = app.add_subcommand("train", "Stage-1 or Stage-2 training");
  int stage = 1;
  std::string data_dir, out_dir, from_ckpt, denoiser_path;
  train->add_option("--stage", stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--from-checkpoint", from_ckpt, "Stage-1 checkpoint (stage 2)");
  train->add_option("--denoiser", denoiser_path, "Trained denoiser (stage 2; trained here when absent)");

  // embed / recover / localize / verify
  std::string ckpt, image_path, mask_path, out_path, original_path;
  auto add_io = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
    sub->add_option("--image", image_path, "Input image (PNG)")->required();
    sub->add_option("--mask", mask_path, "Saliency mask (PNG, 0/255)")->required();
    sub->add_option("--out", out_path, "Output path")->required();
  };
  auto* embed_cmd = app.add_subcommand("embed", "Write the protected image");
  add_io(embed_cmd);
  auto* recover_cmd = app.add_subcommand("recover", "Write the recovered face image");
  add_io(recover_cmd);
  auto* localize_cmd = app.add_subcommand("localize", "Write diff map and tamper mask into a directory");
  add_io(localize_cmd);
  auto* verify_cmd = app.add_subcommand("verify", "Write an ownership verification JSON");
  add_io(verify_cmd);
  verify_cmd->add_option("--original", original_path, "Original image holding the reference face")->required();

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "Apply an attack chain");
  std::string spec;
  attack_cmd->add_option("--input", image_path, "Input image")->required();
  attack_cmd->add_option("--spec", spec, "Chain, e.g. \"noise:0.05;jpeg:75\"")->required();
  attack_cmd->add_option("--out", out_path, "Output image")->required();
  attack_cmd->add_option("--mask", mask_path, "Saliency mask (needed by salnoise)");
  attack_cmd->add_option("--denoiser", denoiser_path, "Denoiser checkpoint (needed by regen)");

  // evaluate / capacity
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics report over a dataset");
  eval_cmd->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--out", out_dir, "Report directory")->required();
  eval_cmd->add_option("--denoiser", denoiser_path, "Denoiser checkpoint (regen attack)");
  bool save_images = false;
  eval_cmd->add_flag("--save-images", save_images, "Write per-image results");
  auto* cap_cmd = app.add_subcommand("capacity", "Fidelity versus saliency area fraction");
  cap_cmd->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  cap_cmd->add_option("--data", data_dir, "Directory of base images (dataset layout)")->required();
  cap_cmd->add_option("--out", out_path, "Curve JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  const RunConfig cfg = read_config(config_path);

  if (gen->parsed()) {
    synth.seed = gen_seed.value_or(cfg.train.seed);
    RunDir dir(gen_out, force);
    save_dataset(make_synthetic_dataset(synth), dir / "");
    Manifest m("gen-data", config_path, cfg);
    m.j["seed"] = synth.seed;
    m.j["outputs"] = {"images", "masks"};
    m.write(dir / "manifest.json");
    dir.commit();
    std::cout << "wrote " << synth.count << " samples to " << gen_out << '\n';
    return kOk;
  }

  if (train->parsed()) {
    if (stage == 2 && from_ckpt.empty()) throw UsageError("stage 2 needs --from-checkpoint");
    if (stage == 1 && !from_ckpt.empty()) throw UsageError("--from-checkpoint only applies to stage 2");
    const Dataset data = read_dataset(data_dir);
    RunDir dir(out_dir, force);
    Manifest m("train --stage " + std::to_string(stage), config_path, cfg);
    m.j["inputs"]["data"] = data_dir;
    TrainConfig tc = cfg.train;
    tc.stage = stage;
    TrainHooks hooks;
    hooks.log_path = dir / "train_log.jsonl";
    hooks.abort_checkpoint = dir / "last_good.ckpt";
    ModelBundle bundle(tc.arch, tc.seed);
    TrainResult result;
    if (stage == 1) {
      result = train_stage1(bundle, tc, data, hooks);
    } else {
      m.j["inputs"]["checkpoint"] = from_ckpt;
      bundle = load_models(from_ckpt, cfg);
      std::optional<RegenerationProxy> proxy = load_denoiser(denoiser_path, cfg);
      if (proxy) {
        m.j["inputs"]["denoiser"] = denoiser_path;
      } else {
        proxy.emplace(tc.arch.denoiser_width, tc.seed);
        TrainHooks dh;
        dh.log_path = dir / "denoiser_log.jsonl";
        train_denoiser(*proxy, tc, data, dh);
        proxy->save(dir / "denoiser.ckpt");
        m.j["outputs"].push_back("denoiser.ckpt");
        m.j["outputs"].push_back("denoiser_log.jsonl");
      }
      result = train_stage2(bundle, tc, data, *proxy, hooks);
    }
    save_checkpoint(bundle, dir / "model.ckpt");
    write_text(dir / "config.txt", cfg.canonical());
    m.j["outputs"].push_back("model.ckpt");
    m.j["outputs"].push_back("train_log.jsonl");
    m.j["outputs"].push_back("config.txt");
    m.j["final_loss"] = result.last.loss.total;
    m.write(dir / "manifest.json");
    dir.commit();
    std::cout << to_json_line(result.last) << '\n';
    return kOk;
  }

  if (embed_cmd->parsed() || recover_cmd->parsed() || verify_cmd->parsed()) {
    const ModelBundle models = load_models(ckpt, cfg);
    require_file(image_path, "image");
    require_file(mask_path, "mask");
    const Image image = load_image(image_path);
    const BinaryMask mask = load_mask(mask_path);
    refuse_overwrite(out_path, force);
    if (embed_cmd->parsed()) {
      save_image(embed(image, mask, models), out_path);
    } else if (recover_cmd->parsed()) {
      save_image(recover(image, mask, models), out_path);
    } else {
      require_file(original_path, "original image");
      const Image original = load_image(original_path);
      if (!mask.matches(original)) throw DimensionError("mask and original image sizes differ");
      const auto v = verify(recover(image, mask, models), segment(original, mask).saliency, mask,
                            cfg.eval.ncc_threshold);
      nlohmann::ordered_json j{{"ncc", v.ncc}, {"owned", v.owned}, {"threshold", v.threshold}};
      if (!v.reason.empty()) j["reason"] = v.reason;
      write_text(out_path, j.dump(2) + "\n");
      std::cout << j.dump() << '\n';
    }
    return kOk;
  }

  if (localize_cmd->parsed()) {
    const ModelBundle models = load_models(ckpt, cfg);
    require_file(image_path, "image");
    require_file(mask_path, "mask");
    const Image image = load_image(image_path);
    const BinaryMask mask = load_mask(mask_path);
    RunDir dir(out_path, force);
    const Image recovered = recover(image, mask, models);
    const auto loc = localize(recovered, image, mask, cfg.eval.localization);
    save_gray(loc.diff_map, image.height(), image.width(), dir / "diff.png");
    save_mask(loc.mask, dir / "mask.png");
    save_image(recovered, dir / "recovered.png");
    dir.commit();
    return kOk;
  }

  if (attack_cmd->parsed()) {
    require_file(image_path, "input image");
    const Image image = load_image(image_path);
    BinaryMask mask(image.height(), image.width());
    if (!mask_path.empty()) {
      require_file(mask_path, "mask");
      mask = load_mask(mask_path);
    }
    const AttackChain chain = parse_attack_chain(spec);
    const auto proxy = load_denoiser(denoiser_path, cfg);
    refuse_overwrite(out_path, force);
    save_image(apply_chain(image, chain, mask, cfg.train.seed, cfg.attack_context(proxy ? &*proxy : nullptr)),
               out_path);
    return kOk;
  }

  if (eval_cmd->parsed()) {
    const ModelBundle models = load_models(ckpt, cfg);
    const Dataset data = read_dataset(data_dir);
    const auto proxy = load_denoiser(denoiser_path, cfg);
    const auto attacks = cfg.attack_list();
    for (const auto& a : attacks)
      for (const auto& step : a.chain)
        if (const auto* d = std::get_if<DistortionSpec>(&step); d && d->kind == DistortionKind::Regeneration && !proxy) {
          throw UsageError("attack '" + a.name + "' needs --denoiser");
        }
    RunDir dir(out_dir, force);
    const AttackContext ctx = cfg.attack_context(proxy ? &*proxy : nullptr);
    const MetricsReport report = evaluate(models, data, attacks, ctx, cfg.eval);
    write_text(dir / "report.json", report.to_json());
    Manifest m("evaluate", config_path, cfg);
    m.j["inputs"] = {{"checkpoint", ckpt}, {"data", data_dir}};
    m.j["outputs"] = {"report.json"};
    if (save_images) {
      fs::create_directories(dir / "images");
      std::vector<Image> images;
      std::vector<BinaryMask> masks;
      for (const auto& s : data) {
        images.push_back(s.image);
        masks.push_back(s.mask);
      }
      const auto protected_images = embed_batch(images, masks, models);
      const auto recovered = recover_batch(protected_images, masks, models);
      for (std::size_t i = 0; i < data.size(); ++i) {
        save_image(protected_images[i], dir / ("images/" + data[i].name + "_protected.png"));
        save_image(recovered[i], dir / ("images/" + data[i].name + "_recovered.png"));
      }
      m.j["outputs"].push_back("images/");
    }
    m.write(dir / "manifest.json");
    dir.commit();
    std::cout << report.to_json();
    return kOk;
  }

  if (cap_cmd->parsed()) {
    const ModelBundle models = load_models(ckpt, cfg);
    const Dataset data = read_dataset(data_dir);
    refuse_overwrite(out_path, force);
    std::vector<Image> images;
    for (const auto& s : data) images.push_back(s.image);
    const auto curve = capacity_sweep(models, images, cfg.capacity_fractions, {}, {}, cfg.eval.seed);
    write_text(out_path, capacity_to_json(curve));
    std::cout << capacity_to_json(curve);
    return kOk;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const AttackError& e) {
    std::cerr << "attack error: " << e.what() << '\n';
    return std::string(e.what()).find("unsupported") != std::string::npos ||
                   std::string(e.what()).find("unknown") != std::string::npos
               ? kUsage
               : kData;
  } catch (const TrainingAborted& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ImageIoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const UntrainedModelError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
