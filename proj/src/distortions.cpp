#include "recovermark/distortions.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "recovermark/models.hpp"

extern char** environ;

namespace recovermark {

namespace {

struct KindToken {
  DistortionKind kind;
  const char* token;
  double default_param;
};

constexpr KindToken kKinds[] = {
    {DistortionKind::Regeneration, "regen", RegenerationProxy::kDefaultNoiseLevel},
    {DistortionKind::SaliencyNoise, "salnoise", 0.05},
    {DistortionKind::GlobalNoise, "noise", 0.05},
    {DistortionKind::Jpeg, "jpeg", 75},
    {DistortionKind::LowPass, "lowpass", 1.0},
    {DistortionKind::PatchRemove, "patch", 0.1},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& text, const std::string& step) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw AttackError("bad parameter in attack step '" + step + "'");
  return v;
}

std::string format_param(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

int jpeg_quality(double param) { return static_cast<int>(std::lround(param)); }

Image add_noise(const Image& image, const BinaryMask* mask, double sigma, Rng& rng) {
  if (mask && !mask->matches(image)) throw DimensionError("saliency_noise: mask shape differs");
  Image out = image;
  auto o = out.data();
  const std::size_t plane = image.plane_size();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (mask && !mask->test(i % plane)) continue;
    o[i] = std::clamp(o[i] + rng.normal(0.0, sigma), 0.0, 1.0);
  }
  return out;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// One separable pass. `adjoint` scatters instead of gathers, which is the
// transpose of the gather with reflected indices.
void blur_axis(const Image& in, Image& out, const std::vector<double>& k, bool vertical, bool adjoint) {
  const int h = in.height(), w = in.width();
  const int r = static_cast<int>(k.size() / 2);
  out = Image(h, w);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        for (int t = -r; t <= r; ++t) {
          const int yy = vertical ? reflect101(y + t, h) : y;
          const int xx = vertical ? x : reflect101(x + t, w);
          if (adjoint) {
            out.at(c, yy, xx) += k[t + r] * in.at(c, y, x);
          } else {
            out.at(c, y, x) += k[t + r] * in.at(c, yy, xx);
          }
        }
      }
}

void require_sigma(double sigma, const char* what) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument(std::string(what) + ": sigma must be > 0");
}

// Zeroes gradient entries whose forward value was clipped.
Image mask_clipped(const Image& grad, const Image& pre_clip) {
  Image g = grad;
  auto gv = g.data();
  auto pv = pre_clip.data();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (pv[i] < 0.0 || pv[i] > 1.0) gv[i] = 0.0;
  }
  return g;
}

std::string denoiser_digest(int width) {
  return sha256_hex("denoiser;width=" + std::to_string(width) + ";schema=" + std::to_string(kCheckpointSchemaVersion));
}

}  // namespace

std::string to_token(DistortionKind kind) {
  for (const auto& k : kKinds)
    if (k.kind == kind) return k.token;
  throw std::invalid_argument("unknown distortion kind");
}

DistortionKind parse_distortion_kind(const std::string& token) {
  for (const auto& k : kKinds)
    if (token == k.token) return k.kind;
  throw AttackError("unknown distortion '" + token + "'");
}

void DistortionSpec::validate() const {
  const std::string name = to_token(kind);
  if (!std::isfinite(param)) throw std::invalid_argument(name + ": parameter must be finite");
  switch (kind) {
    case DistortionKind::Regeneration:
      if (param < 0.0) throw std::invalid_argument("regen: noise level must be >= 0");
      break;
    case DistortionKind::SaliencyNoise:
    case DistortionKind::GlobalNoise:
    case DistortionKind::LowPass:
      if (param <= 0.0) throw std::invalid_argument(name + ": sigma must be > 0");
      break;
    case DistortionKind::Jpeg:
      if (param != std::floor(param) || param < 1 || param > 100) {
        throw std::invalid_argument("jpeg: quality must be an integer in [1,100]");
      }
      break;
    case DistortionKind::PatchRemove:
      if (param <= 0.0 || param > 0.5) throw std::invalid_argument("patch: fraction must be in (0, 0.5]");
      break;
  }
}

std::string DistortionSpec::describe() const { return to_token(kind) + ":" + format_param(param); }

RegenerationProxy::RegenerationProxy(int width, std::uint64_t seed) : width_(width) {
  if (width < 1) throw std::invalid_argument("denoiser width must be positive");
  Rng rng(seed);
  net_ = std::make_unique<Denoiser<float>>(width, rng);
}

Image RegenerationProxy::apply(const Image& image, double noise_level, Rng& rng) const {
  if (noise_level < 0.0) throw std::invalid_argument("regen: noise level must be >= 0");
  const Image noisy = noise_level > 0.0 ? global_noise(image, noise_level, rng) : image;
  Image out = to_image(net_->forward(to_tensor(noisy)));
  out.clip();
  return out;
}

void RegenerationProxy::save(const std::filesystem::path& path) const {
  CheckpointFile file;
  file.kind = "denoiser";
  file.digest = denoiser_digest(width_);
  file.arrays = export_parameters(net_->parameters());
  write_checkpoint_file(file, path);
}

RegenerationProxy RegenerationProxy::load(const std::filesystem::path& path, int width) {
  if (!std::filesystem::exists(path)) {
    throw CheckpointError("denoiser checkpoint '" + path.string() + "' not found");
  }
  const CheckpointFile file = read_checkpoint_file(path);
  if (file.kind != "denoiser") throw CheckpointError("'" + path.string() + "' is not a denoiser checkpoint");
  if (file.digest != denoiser_digest(width)) throw CheckpointError("denoiser checkpoint width does not match config");
  RegenerationProxy proxy(width);
  import_parameters(proxy.net_->parameters(), file.arrays);
  return proxy;
}

Image AttackPlugin::apply(const Image& image) const {
  namespace fs = std::filesystem;
  if (!fs::exists(executable)) throw AttackError("plugin '" + name + "': executable not found: " + executable.string());
  char dir_template[] = "/tmp/recovermark-plugin-XXXXXX";
  if (!mkdtemp(dir_template)) throw AttackError("plugin '" + name + "': cannot create temp dir");
  const fs::path dir(dir_template);
  const fs::path in = dir / "in.png";
  const fs::path out = dir / "out.png";
  auto cleanup = [&] {
    std::error_code ec;
    fs::remove_all(dir, ec);
  };
  try {
    save_image(image, in);
    std::string exe = executable.string(), a1 = in.string(), a2 = out.string();
    char* argv[] = {exe.data(), a1.data(), a2.data(), nullptr};
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv, environ);
    if (rc != 0) throw AttackError("plugin '" + name + "': spawn failed: " + std::strerror(rc));
    int status = 0;
    while (waitpid(pid, &status, 0) < 0) {
      if (errno != EINTR) throw AttackError("plugin '" + name + "': waitpid failed");
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      throw AttackError("plugin '" + name + "' failed with status " + std::to_string(status));
    }
    Image result = load_image(out);
    if (!result.same_shape(image)) throw AttackError("plugin '" + name + "' changed the image size");
    cleanup();
    return result;
  } catch (const ImageIoError& e) {
    cleanup();
    throw AttackError("plugin '" + name + "': " + e.what());
  } catch (...) {
    cleanup();
    throw;
  }
}

AttackChain parse_attack_chain(const std::string& text) {
  AttackChain chain;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) {
    const std::string step = trim(part);
    if (step.empty()) continue;
    const auto colon = step.find(':');
    const std::string head = trim(step.substr(0, colon));
    const std::string arg = colon == std::string::npos ? std::string() : trim(step.substr(colon + 1));
    if (head == "plugin") {
      if (arg.empty()) throw AttackError("plugin step needs a name");
      chain.emplace_back(PluginStep{arg});
      continue;
    }
    DistortionSpec spec;
    spec.kind = parse_distortion_kind(head);
    spec.differentiable = false;
    spec.param = 0.0;
    for (const auto& k : kKinds)
      if (k.kind == spec.kind) spec.param = k.default_param;
    if (!arg.empty()) spec.param = parse_number(arg, step);
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw AttackError(e.what());
    }
    chain.emplace_back(spec);
  }
  return chain;
}

std::string describe(const AttackChain& chain) {
  if (chain.empty()) return "none";
  std::string out;
  for (const auto& step : chain) {
    if (!out.empty()) out += ";";
    if (const auto* p = std::get_if<PluginStep>(&step)) {
      out += "plugin:" + p->name;
    } else {
      out += std::get<DistortionSpec>(step).describe();
    }
  }
  return out;
}

Image saliency_noise(const Image& image, const BinaryMask& mask, double sigma, Rng& rng) {
  require_sigma(sigma, "saliency_noise");
  return add_noise(image, &mask, sigma, rng);
}

Image global_noise(const Image& image, double sigma, Rng& rng) {
  require_sigma(sigma, "global_noise");
  return add_noise(image, nullptr, sigma, rng);
}

std::vector<double> gaussian_kernel(double sigma) {
  require_sigma(sigma, "gaussian_kernel");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int t = -r; t <= r; ++t) {
    k[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
    sum += k[t + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Image low_pass(const Image& image, double sigma) {
  const auto k = gaussian_kernel(sigma);
  Image tmp, out;
  blur_axis(image, tmp, k, false, false);
  blur_axis(tmp, out, k, true, false);
  out.clip();
  return out;
}

Image low_pass_backward(const Image& grad_output, double sigma) {
  const auto k = gaussian_kernel(sigma);
  Image tmp, out;
  blur_axis(grad_output, tmp, k, true, true);
  blur_axis(tmp, out, k, false, true);
  return out;
}

PatchRemoval patch_remove(const Image& image, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 0.5)) throw std::invalid_argument("patch_remove: fraction must be in (0, 0.5]");
  const int h_img = image.height(), w_img = image.width();
  const double area = fraction * h_img * w_img;
  const int h = std::clamp(static_cast<int>(std::lround(std::sqrt(area))), 1, h_img);
  const int w = std::clamp(static_cast<int>(std::lround(area / h)), 1, w_img);
  Rng rng(seed);
  const int y0 = rng.uniform_int(0, h_img - h);
  const int x0 = rng.uniform_int(0, w_img - w);
  PatchRemoval out{image, BinaryMask(h_img, w_img)};
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      out.removed.at(y, x) = 1;
      for (int c = 0; c < Image::kChannels; ++c) out.image.at(c, y, x) = 0.0;
    }
  return out;
}

Image apply_distortion(const Image& image, const DistortionSpec& spec, const BinaryMask& mask, Rng& rng,
                       const AttackContext& context) {
  spec.validate();
  switch (spec.kind) {
    case DistortionKind::Regeneration:
      if (!context.regeneration) throw AttackError("regeneration attack needs a trained denoiser checkpoint");
      return context.regeneration->apply(image, spec.param, rng);
    case DistortionKind::SaliencyNoise:
      return saliency_noise(image, mask, spec.param, rng);
    case DistortionKind::GlobalNoise:
      return global_noise(image, spec.param, rng);
    case DistortionKind::Jpeg:
      return spec.differentiable ? diff_jpeg(image, jpeg_quality(spec.param))
                                 : real_jpeg(image, jpeg_quality(spec.param));
    case DistortionKind::LowPass:
      return low_pass(image, spec.param);
    case DistortionKind::PatchRemove:
      return patch_remove(image, spec.param, rng.next()).image;
  }
  throw std::logic_error("unhandled distortion kind");
}

Image apply_chain(const Image& image, const AttackChain& chain, const BinaryMask& mask, std::uint64_t seed,
                  const AttackContext& context) {
  Rng rng(seed);
  Image current = image;
  for (const auto& step : chain) {
    if (const auto* p = std::get_if<PluginStep>(&step)) {
      const auto it = context.plugins.find(p->name);
      if (it == context.plugins.end()) throw AttackError("unsupported attack: no plugin named '" + p->name + "'");
      current = it->second.apply(current);
    } else {
      current = apply_distortion(current, std::get<DistortionSpec>(step), mask, rng, context);
    }
  }
  return current;
}

DistortionResult apply_differentiable(const Image& image, const DistortionSpec& spec, const BinaryMask& mask,
                                      Rng& rng, const RegenerationProxy* regeneration) {
  spec.validate();
  switch (spec.kind) {
    case DistortionKind::Regeneration: {
      if (!regeneration) throw AttackError("regeneration distortion needs a trained denoiser");
      Image noisy_raw = image;
      if (spec.param > 0.0) {
        for (auto& v : noisy_raw.data()) v += rng.normal(0.0, spec.param);
      }
      Image noisy = noisy_raw;
      noisy.clip();
      auto trace = std::make_shared<DenoiserTrace<float>>();
      const Tensor denoised = regeneration->net().forward(to_tensor(noisy), *trace);
      Image raw = to_image(denoised);
      Image out = raw;
      out.clip();
      // The proxy's grad buffers are scratch space here; only train_denoiser reads them.
      auto* net = const_cast<Denoiser<float>*>(&regeneration->net());
      return {out, [trace, raw = std::move(raw), noisy_raw = std::move(noisy_raw), net](const Image& g) {
                const Tensor gin = net->backward(*trace, to_tensor(mask_clipped(g, raw)));
                return mask_clipped(to_image(gin), noisy_raw);
              }};
    }
    case DistortionKind::SaliencyNoise:
    case DistortionKind::GlobalNoise: {
      const bool local = spec.kind == DistortionKind::SaliencyNoise;
      if (local && !mask.matches(image)) throw DimensionError("saliency_noise: mask shape differs");
      Image raw = image;
      auto r = raw.data();
      const std::size_t plane = image.plane_size();
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (local && !mask.test(i % plane)) continue;
        r[i] += rng.normal(0.0, spec.param);
      }
      Image out = raw;
      out.clip();
      return {out, [raw = std::move(raw)](const Image& g) { return mask_clipped(g, raw); }};
    }
    case DistortionKind::Jpeg: {
      const int q = jpeg_quality(spec.param);
      return {diff_jpeg(image, q), [image, q](const Image& g) { return diff_jpeg_backward(image, q, g); }};
    }
    case DistortionKind::LowPass: {
      const double sigma = spec.param;
      // Blurring a [0,1] image stays in [0,1]; the final clip is inactive.
      return {low_pass(image, sigma), [sigma](const Image& g) { return low_pass_backward(g, sigma); }};
    }
    case DistortionKind::PatchRemove: {
      PatchRemoval pr = patch_remove(image, spec.param, rng.next());
      return {std::move(pr.image), [removed = std::move(pr.removed)](const Image& g) {
                Image out = g;
                const std::size_t plane = g.plane_size();
                auto o = out.data();
                for (std::size_t i = 0; i < o.size(); ++i)
                  if (removed.test(i % plane)) o[i] = 0.0;
                return out;
              }};
    }
  }
  throw std::logic_error("unhandled distortion kind");
}

}  // namespace recovermark
