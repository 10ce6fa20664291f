#include "recovermark/networks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace recovermark {

std::string ArchConfig::canonical() const {
  std::map<std::string, int> kv{
      {"image_side", image_side},         {"latent_channels", latent_channels},
      {"codec_width", codec_width},       {"codec_blocks", codec_blocks},
      {"hnet_width", hnet_width},         {"hnet_depth", hnet_depth},
      {"hnet_max_width", hnet_max_width}, {"enet_width", enet_width},
      {"enet_depth", enet_depth},         {"enet_max_width", enet_max_width},
      {"denoiser_width", denoiser_width}, {"masked_extraction", masked_extraction}, {"relay", relay},
  };
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  return os.str();
}

void ArchConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("architecture: " + what);
  };
  require(image_side > 0 && image_side % 8 == 0, "image_side must be a positive multiple of 8");
  require(latent_channels >= 1, "latent_channels must be >= 1");
  require(codec_width >= 1 && codec_blocks >= 2, "codec needs width >= 1 and >= 2 blocks");
  require(hnet_width >= 1 && hnet_depth >= 1, "hnet width/depth must be >= 1");
  require(enet_width >= 1 && enet_depth >= 1, "enet width/depth must be >= 1");
  require(image_side % (1 << std::max(hnet_depth, enet_depth)) == 0,
          "image_side must be divisible by 2^depth");
  require(denoiser_width >= 1, "denoiser_width must be >= 1");
  require(masked_extraction == 0 || masked_extraction == 1, "masked_extraction must be 0 or 1");
  require(relay == 0 || relay == masked_extraction, "relay must be 0 or 1 and needs masked_extraction");
}

template <typename T>
ConvStack<T>::ConvStack(std::string name, int in_channels, int out_channels, int width, int blocks,
                        bool sigmoid_output, Rng& rng)
    : in_(in_channels), out_(out_channels) {
  int c = in_channels;
  for (int b = 0; b < blocks - 1; ++b) {
    net_.template add<Conv2d<T>>(name + ".conv" + std::to_string(b), c, width, 3, rng);
    net_.template add<LeakyRelu<T>>();
    c = width;
  }
  net_.template add<Conv2d<T>>(name + ".conv" + std::to_string(blocks - 1), c, out_channels, 3, rng);
  if (sigmoid_output) net_.template add<Sigmoid<T>>();
}

template <typename T>
UNet<T>::UNet(std::string name, int in_channels, int out_channels, int width, int depth,
              int max_width, Rng& rng, double head_gain)
    : in_(in_channels), out_(out_channels), depth_(depth) {
  for (int l = 0; l <= depth; ++l) widths_.push_back(std::min(width << l, std::max(max_width, width)));
  for (int l = 0; l <= depth; ++l) {
    Sequential<T> block;
    if (l > 0) block.template add<AvgPool2<T>>();
    const int cin = l == 0 ? in_channels : widths_[l - 1];
    const std::string prefix = name + ".down" + std::to_string(l);
    block.template add<Conv2d<T>>(prefix + ".conv0", cin, widths_[l], 3, rng);
    block.template add<LeakyRelu<T>>();
    block.template add<Conv2d<T>>(prefix + ".conv1", widths_[l], widths_[l], 3, rng);
    block.template add<LeakyRelu<T>>();
    down_.push_back(std::move(block));
  }
  for (int l = 0; l < depth; ++l) {
    Sequential<T> block;
    const std::string prefix = name + ".up" + std::to_string(l);
    block.template add<Conv2d<T>>(prefix + ".conv0", widths_[l + 1] + widths_[l], widths_[l], 3, rng);
    block.template add<LeakyRelu<T>>();
    up_.push_back(std::move(block));
  }
  head_.template add<Conv2d<T>>(name + ".head", widths_[0], out_channels, 3, rng, head_gain);
}

template <typename T>
BasicTensor<T> UNet<T>::forward(const BasicTensor<T>& x) const {
  UNetTrace<T> trace;
  return forward(x, trace);
}

template <typename T>
BasicTensor<T> UNet<T>::forward(const BasicTensor<T>& x, UNetTrace<T>& trace) const {
  trace.down.assign(depth_ + 1, {});
  trace.up.assign(depth_, {});
  down_[0].forward(x, trace.down[0]);
  for (int l = 1; l <= depth_; ++l) down_[l].forward(trace.down[l - 1].output(), trace.down[l]);
  const Upsample2<T> upsample;
  BasicTensor<T> u = trace.down[depth_].output();
  for (int l = depth_ - 1; l >= 0; --l) {
    u = up_[l].forward(concat_channels(upsample.forward(u), trace.down[l].output()), trace.up[l]);
  }
  return head_.forward(u, trace.head);
}

template <typename T>
BasicTensor<T> UNet<T>::backward(const UNetTrace<T>& trace, const BasicTensor<T>& grad_out) {
  Upsample2<T> upsample;
  BasicTensor<T> g_u = head_.backward(trace.head, grad_out);
  std::vector<BasicTensor<T>> g_skip(depth_ + 1);
  for (int l = 0; l < depth_; ++l) {
    const BasicTensor<T> g_cat = up_[l].backward(trace.up[l], g_u);
    const int up_c = widths_[l + 1];
    g_skip[l] = slice_channels(g_cat, up_c, widths_[l]);
    const BasicTensor<T>& coarse = l + 1 == depth_ ? trace.down[depth_].output() : trace.up[l + 1].output();
    g_u = upsample.backward(coarse, trace.up[l].acts[0], slice_channels(g_cat, 0, up_c));
  }
  BasicTensor<T> g = std::move(g_u);  // gradient w.r.t. the deepest encoder output
  for (int l = depth_; l >= 1; --l) {
    BasicTensor<T> g_in = down_[l].backward(trace.down[l], g);
    g_in += g_skip[l - 1];
    g = std::move(g_in);
  }
  return down_[0].backward(trace.down[0], g);
}

template <typename T>
std::vector<Parameter<T>*> UNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& b : down_)
    for (auto* p : b.parameters()) out.push_back(p);
  for (auto& b : up_)
    for (auto* p : b.parameters()) out.push_back(p);
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
HidingNetwork<T>::HidingNetwork(int latent_channels, int width, int depth, int max_width, Rng& rng)
    : latent_channels_(latent_channels),
      unet_("hnet", latent_channels + 3, 3, width, depth, max_width, rng, 0.1) {}

template <typename T>
BasicTensor<T> HidingNetwork<T>::forward(const BasicTensor<T>& input) const {
  HidingTrace<T> trace;
  return forward(input, trace);
}

template <typename T>
BasicTensor<T> HidingNetwork<T>::forward(const BasicTensor<T>& input, HidingTrace<T>& trace) const {
  if (input.c() != latent_channels_ + 3) {
    throw std::invalid_argument("hnet: expected " + std::to_string(latent_channels_ + 3) +
                                " input channels, got " + input.shape_string());
  }
  BasicTensor<T> pre = unet_.forward(input, trace.unet);
  const T lo = T(kLogitEps), hi = T(1.0 - kLogitEps);
  for (int i = 0; i < pre.n(); ++i) {
    const T* bg = input.sample(i) + latent_channels_ * input.plane();
    T* p = pre.sample(i);
    for (std::size_t k = 0; k < pre.sample_size(); ++k) {
      const T b = std::clamp(bg[k], lo, hi);
      const T z = p[k] + std::log(b / (T(1) - b));
      p[k] = T(1) / (T(1) + std::exp(-z));
    }
  }
  trace.output = pre;
  return pre;
}

template <typename T>
BasicTensor<T> HidingNetwork<T>::backward(const HidingTrace<T>& trace, const BasicTensor<T>& grad_out) {
  const BasicTensor<T>& y = trace.output;
  BasicTensor<T> g_pre = grad_out;
  for (std::size_t k = 0; k < g_pre.size(); ++k) g_pre[k] *= y[k] * (T(1) - y[k]);
  BasicTensor<T> g_in = unet_.backward(trace.unet, g_pre);
  const BasicTensor<T>& input = trace.unet.down[0].acts[0];
  const T lo = T(kLogitEps), hi = T(1.0 - kLogitEps);
  for (int i = 0; i < g_in.n(); ++i) {
    const T* bg = input.sample(i) + latent_channels_ * input.plane();
    const T* gp = g_pre.sample(i);
    T* gb = g_in.sample(i) + latent_channels_ * input.plane();
    for (std::size_t k = 0; k < g_pre.sample_size(); ++k) {
      if (bg[k] > lo && bg[k] < hi) gb[k] += gp[k] / (bg[k] * (T(1) - bg[k]));
    }
  }
  return g_in;
}

template <typename T>
Denoiser<T>::Denoiser(int width, Rng& rng) {
  net_.template add<Conv2d<T>>("denoiser.conv0", 3, width, 3, rng);
  net_.template add<LeakyRelu<T>>();
  net_.template add<AvgPool2<T>>();
  net_.template add<Conv2d<T>>("denoiser.conv1", width, 2 * width, 3, rng);
  net_.template add<LeakyRelu<T>>();
  net_.template add<Conv2d<T>>("denoiser.conv2", 2 * width, 2 * width, 3, rng);
  net_.template add<LeakyRelu<T>>();
  net_.template add<Upsample2<T>>();
  net_.template add<Conv2d<T>>("denoiser.conv3", 2 * width, width, 3, rng);
  net_.template add<LeakyRelu<T>>();
  net_.template add<Conv2d<T>>("denoiser.conv4", width, 3, 3, rng, 0.0);
}

template <typename T>
BasicTensor<T> Denoiser<T>::forward(const BasicTensor<T>& x) const {
  BasicTensor<T> y = net_.forward(x);
  y += x;
  return y;
}

template <typename T>
BasicTensor<T> Denoiser<T>::forward(const BasicTensor<T>& x, DenoiserTrace<T>& trace) const {
  BasicTensor<T> y = net_.forward(x, trace.residual);
  y += x;
  return y;
}

template <typename T>
BasicTensor<T> Denoiser<T>::backward(const DenoiserTrace<T>& trace, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g = net_.backward(trace.residual, grad_out);
  g += grad_out;
  return g;
}

const ArchConfig& validated(const ArchConfig& arch) {
  arch.validate();
  return arch;
}

template <typename T>
NetworkSet<T>::NetworkSet(const ArchConfig& arch, std::uint64_t seed) : NetworkSet(validated(arch), Rng(seed)) {}

template <typename T>
NetworkSet<T>::NetworkSet(const ArchConfig& arch, Rng&& rng)
    : enc("enc", 3, arch.latent_channels, arch.codec_width, arch.codec_blocks, false, rng),
      dec("dec", arch.latent_channels, 3, arch.codec_width, arch.codec_blocks, true, rng),
      hnet(arch.latent_channels, arch.hnet_width, arch.hnet_depth, arch.hnet_max_width, rng),
      enet("enet", 3, arch.latent_channels, arch.enet_width, arch.enet_depth, arch.enet_max_width, rng) {}

template <typename T>
std::vector<Parameter<T>*> NetworkSet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto* p : enc.parameters()) out.push_back(p);
  for (auto* p : dec.parameters()) out.push_back(p);
  for (auto* p : hnet.parameters()) out.push_back(p);
  for (auto* p : enet.parameters()) out.push_back(p);
  return out;
}

template class ConvStack<float>;
template class ConvStack<double>;
template class UNet<float>;
template class UNet<double>;
template class HidingNetwork<float>;
template class HidingNetwork<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template struct NetworkSet<float>;
template struct NetworkSet<double>;

}  // namespace recovermark
