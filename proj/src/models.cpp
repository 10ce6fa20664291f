#include "recovermark/models.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "recovermark/losses.hpp"

namespace recovermark {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'M', 'K', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint '" + origin_ + "' is truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint '" + origin_ + "' is truncated");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<Parameter<float>*> mutable_params(const ModelBundle& bundle) {
  return const_cast<NetworkSet<float>&>(bundle.nets()).parameters();
}

void require_side(const ModelBundle& models, int h, int w, const char* what) {
  const int side = models.arch().image_side;
  if (h != side || w != side) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(side) + "x" + std::to_string(side) +
                         " input, got " + std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

std::string to_string(TrainingStage stage) {
  switch (stage) {
    case TrainingStage::None: return "none";
    case TrainingStage::Stage1: return "stage1";
    case TrainingStage::Stage2: return "stage2";
  }
  return "unknown";
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string config_digest(const ArchConfig& arch) {
  std::ostringstream os;
  os << "schema_version=" << kCheckpointSchemaVersion << '\n'
     << arch.canonical() << "loss_reduction=" << kLossReduction << '\n'
     << "adam_beta1=" << kAdamBeta1 << "\nadam_beta2=" << kAdamBeta2 << "\nadam_epsilon=" << kAdamEpsilon << '\n';
  return sha256_hex(os.str());
}

ModelBundle::ModelBundle(const ArchConfig& arch, std::uint64_t seed)
    : arch_(arch), nets_(std::make_unique<NetworkSet<float>>(arch, seed)) {}

ModelBundle ModelBundle::clone() const {
  ModelBundle copy(arch_);
  copy_parameters(copy.nets().parameters(), mutable_params(*this));
  copy.stage = stage;
  copy.codec_frozen = codec_frozen;
  return copy;
}

Tensor to_tensor(const Image& image) { return to_tensor(std::span<const Image>(&image, 1)); }

Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const int h = images[0].height(), w = images[0].width();
  Tensor t(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != h || images[i].width() != w) throw DimensionError("to_tensor: image sizes differ");
    auto src = images[i].data();
    float* dst = t.sample(static_cast<int>(i));
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<float>(src[k]);
  }
  return t;
}

Image to_image(const Tensor& tensor, int index) {
  if (tensor.c() != 3) throw DimensionError("to_image: tensor has " + std::to_string(tensor.c()) + " channels");
  Image out(tensor.h(), tensor.w());
  auto dst = out.data();
  const float* src = tensor.sample(index);
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<double>(src[k]);
  return out;
}

Tensor mask_tensor(std::span<const BinaryMask> masks, bool complement) {
  if (masks.empty()) throw std::invalid_argument("mask_tensor: no masks");
  Tensor t(static_cast<int>(masks.size()), 1, masks[0].height(), masks[0].width());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (!masks[i].same_shape(masks[0])) throw DimensionError("mask_tensor: mask sizes differ");
    float* dst = t.sample(static_cast<int>(i));
    for (std::size_t k = 0; k < masks[i].size(); ++k) dst[k] = (masks[i].test(k) != complement) ? 1.0f : 0.0f;
  }
  return t;
}

LatentWatermark encode_watermark(const ModelBundle& models, const Image& saliency) {
  require_side(models, saliency.height(), saliency.width(), "encode_watermark");
  return {models.nets().enc.forward(to_tensor(saliency))};
}

Image hide(const ModelBundle& models, const LatentWatermark& latent, const Image& background) {
  require_side(models, background.height(), background.width(), "hide");
  if (latent.height() != background.height() || latent.width() != background.width()) {
    throw DimensionError("hide: latent and background spatial sizes differ");
  }
  if (latent.channels() != models.arch().latent_channels) {
    throw DimensionError("hide: latent has " + std::to_string(latent.channels()) + " channels");
  }
  return to_image(models.nets().hnet.forward(concat_channels(latent.features, to_tensor(background))));
}

LatentWatermark extract_features(const ModelBundle& models, const Image& image) {
  require_side(models, image.height(), image.width(), "extract_features");
  return {models.nets().enet.forward(to_tensor(image))};
}

Image decode_watermark(const ModelBundle& models, const LatentWatermark& latent) {
  require_side(models, latent.height(), latent.width(), "decode_watermark");
  if (latent.channels() != models.arch().latent_channels) {
    throw DimensionError("decode_watermark: latent has " + std::to_string(latent.channels()) + " channels");
  }
  return to_image(models.nets().dec.forward(latent.features));
}

void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(file.schema_version);
  w.u8(static_cast<std::uint8_t>(file.stage));
  w.str(file.kind);
  w.str(file.digest);
  w.u32(static_cast<std::uint32_t>(file.arrays.size()));
  for (const auto& a : file.arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    std::size_t count = 1;
    for (int d : a.shape) {
      w.u32(static_cast<std::uint32_t>(d));
      count *= static_cast<std::size_t>(d);
    }
    if (count != a.values.size()) throw CheckpointError("array '" + a.name + "' shape does not match its data");
    w.bytes(a.values.data(), a.values.size() * sizeof(float));
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp.string() + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  }
  CheckpointFile file;
  file.schema_version = r.u32();
  if (file.schema_version != kCheckpointSchemaVersion) {
    throw CheckpointError("checkpoint schema version " + std::to_string(file.schema_version) + ", expected " +
                          std::to_string(kCheckpointSchemaVersion));
  }
  const std::uint8_t stage = r.u8();
  if (stage > 2) throw CheckpointError("checkpoint has invalid stage tag " + std::to_string(stage));
  file.stage = static_cast<TrainingStage>(stage);
  file.kind = r.str();
  file.digest = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw CheckpointError("array '" + a.name + "' has implausible rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.shape.push_back(static_cast<int>(r.u32()));
      n *= static_cast<std::size_t>(a.shape.back());
    }
    if (n > (std::size_t{1} << 31)) throw CheckpointError("array '" + a.name + "' is implausibly large");
    a.values.resize(n);
    r.bytes(a.values.data(), n * sizeof(float));
    file.arrays.push_back(std::move(a));
  }
  if (!r.at_end()) throw CheckpointError("checkpoint '" + path.string() + "' has trailing data");
  return file;
}

std::vector<NamedArray> export_parameters(const std::vector<Parameter<float>*>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back({p->name, p->shape, p->value});
  return out;
}

void import_parameters(const std::vector<Parameter<float>*>& params, const std::vector<NamedArray>& arrays) {
  if (params.size() != arrays.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(arrays.size()) + " arrays, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != arrays[i].name || params[i]->shape != arrays[i].shape) {
      throw CheckpointError("checkpoint array '" + arrays[i].name + "' does not match parameter '" +
                            params[i]->name + "'");
    }
    params[i]->value = arrays[i].values;
  }
}

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  CheckpointFile file;
  file.stage = bundle.stage;
  file.kind = "bundle";
  file.digest = bundle.digest();
  file.arrays = export_parameters(mutable_params(bundle));
  write_checkpoint_file(file, path);
}

ModelBundle load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected) {
  CheckpointFile file = read_checkpoint_file(path);
  if (file.kind != "bundle") throw CheckpointError("'" + path.string() + "' holds a " + file.kind + ", not a model bundle");
  const std::string want = config_digest(expected);
  if (file.digest != want) {
    throw CheckpointError("config digest mismatch: checkpoint " + file.digest.substr(0, 12) + ", runtime " +
                          want.substr(0, 12));
  }
  ModelBundle bundle(expected);
  import_parameters(bundle.nets().parameters(), file.arrays);
  bundle.stage = file.stage;
  return bundle;
}

}  // namespace recovermark
