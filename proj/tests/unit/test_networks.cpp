#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "../common/oracles.hpp"
#include "recovermark/models.hpp"
#include "recovermark/relay.hpp"

using namespace recovermark;
namespace fs = std::filesystem;
using D = BasicTensor<double>;

namespace {

D random_tensor(int n, int c, int h, int w, Rng& rng) {
  D t(n, c, h, w);
  for (auto& v : t.values()) v = rng.uniform(0.05, 0.95);
  return t;
}

// Checks input and parameter gradients of <r, f(x)> for a random r.
template <class Fwd, class Bwd>
void gradient_check(const D& x, Fwd fwd, Bwd bwd, const std::vector<Parameter<double>*>& params) {
  Rng rng(5);
  const D y = fwd(x);
  D r(y.n(), y.c(), y.h(), y.w());
  for (auto& v : r.values()) v = rng.normal();
  auto dot = [&](const D& t) {
    double s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * r[i];
    return s;
  };
  for (auto* p : params) p->zero_grad();
  const D gx = bwd(x, r);

  std::vector<std::size_t> coords;
  for (int k = 0; k < 24; ++k) coords.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(x.size()) - 1)));
  auto f_input = [&](const std::vector<double>& v) {
    D xx = x;
    std::copy(v.begin(), v.end(), xx.values().begin());
    return dot(fwd(xx));
  };
  CHECK(oracle::fd_rel_error(f_input, {x.values().begin(), x.values().end()}, {gx.values().begin(), gx.values().end()},
                             coords) < 1e-3);

  for (auto* p : params) {
    std::vector<std::size_t> pc;
    for (int k = 0; k < 3; ++k) pc.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(p->size()) - 1)));
    auto f_param = [&](const std::vector<double>& v) {
      const auto saved = p->value;
      p->value = v;
      const double out = dot(fwd(x));
      p->value = saved;
      return out;
    };
    INFO(p->name);
    CHECK(oracle::fd_rel_error(f_param, p->value, p->grad, pc) < 1e-3);
  }
}

ArchConfig small_arch() {
  ArchConfig a;
  a.image_side = 16;
  a.hnet_depth = a.enet_depth = 2;
  a.hnet_width = a.enet_width = a.codec_width = 4;
  return a;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rm_net_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("network gradients match finite differences") {
  NetworkSet<double> n(small_arch(), 3);
  // Move HNet away from its near-identity start so every path is exercised.
  for (auto* p : n.hnet.parameters())
    for (auto& v : p->value) v *= 3;
  Rng rng(1);
  const D x = random_tensor(2, 3, 16, 16, rng);
  const D x6 = random_tensor(2, 6, 16, 16, rng);
  SUBCASE("enc") {
    Trace<double> t;
    gradient_check(x, [&](const D& v) { return n.enc.forward(v); },
                   [&](const D& v, const D& r) { n.enc.forward(v, t); return n.enc.backward(t, r); }, n.enc.parameters());
  }
  SUBCASE("dec") {
    Trace<double> t;
    gradient_check(x, [&](const D& v) { return n.dec.forward(v); },
                   [&](const D& v, const D& r) { n.dec.forward(v, t); return n.dec.backward(t, r); }, n.dec.parameters());
  }
  SUBCASE("enet") {
    UNetTrace<double> t;
    gradient_check(x, [&](const D& v) { return n.enet.forward(v); },
                   [&](const D& v, const D& r) { n.enet.forward(v, t); return n.enet.backward(t, r); },
                   n.enet.parameters());
  }
  SUBCASE("hnet") {
    HidingTrace<double> t;
    gradient_check(x6, [&](const D& v) { return n.hnet.forward(v); },
                   [&](const D& v, const D& r) { n.hnet.forward(v, t); return n.hnet.backward(t, r); },
                   n.hnet.parameters());
  }
  SUBCASE("denoiser") {
    Rng r2(2);
    Denoiser<double> d(4, r2);
    for (auto* p : d.parameters())
      for (auto& v : p->value) v += 0.1;
    DenoiserTrace<double> t;
    gradient_check(x, [&](const D& v) { return d.forward(v); },
                   [&](const D& v, const D& r) { d.forward(v, t); return d.backward(t, r); }, d.parameters());
  }
}

TEST_CASE("fresh hiding network and denoiser start near the identity") {
  const ArchConfig a = small_arch();
  NetworkSet<float> n(a, 0);
  Rng rng(4);
  Tensor in(1, 6, 16, 16);
  for (auto& v : in.values()) v = static_cast<float>(rng.uniform(0.1, 0.9));
  const Tensor out = n.hnet.forward(in);
  double worst = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) worst = std::max(worst, std::abs(double(out.at(0, c, y, x)) - in.at(0, c + 3, y, x)));
  CHECK(worst < 0.1);
  Rng r2(1);
  Denoiser<float> d(8, r2);
  Tensor img(1, 3, 16, 16);
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
  CHECK(d.forward(img) == img);
}

TEST_CASE("relay scatter and gather are adjoint-consistent") {
  Rng rng(9);
  for (double p : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const BinaryMask m = oracle::random_mask(8, 8, rng, p);
    const std::vector<CarrierMap> maps{CarrierMap(m)};
    const D x = random_tensor(1, 3, 8, 8, rng);
    const D s = relay_scatter(x, maps);
    const D g = relay_gather(x, maps);
    D r(1, 3, 8, 8);
    for (auto& v : r.values()) v = rng.normal();
    // <S x, r> == <x, S^T r> and likewise for the gather.
    auto dot = [](const D& a, const D& b) {
      double t = 0;
      for (std::size_t i = 0; i < a.size(); ++i) t += a[i] * b[i];
      return t;
    };
    CHECK(dot(s, r) == doctest::Approx(dot(x, relay_scatter_backward(r, maps))).epsilon(1e-12));
    CHECK(dot(g, r) == doctest::Approx(dot(x, relay_gather_backward(r, maps))).epsilon(1e-12));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx)
          if (m.at(y, xx)) CHECK(s.at(0, c, y, xx) == 0.0);
  }
}

TEST_CASE("relay round trip recovers the saliency payload") {
  Rng rng(10);
  for (double p : {0.1, 0.3}) {
    const BinaryMask m = oracle::random_mask(16, 16, rng, p);
    const std::vector<CarrierMap> maps{CarrierMap(m)};
    const D x = random_tensor(1, 3, 16, 16, rng);
    const D back = relay_gather(relay_scatter(x, maps), maps);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int xx = 0; xx < 16; ++xx)
          if (m.at(y, xx)) CHECK(back.at(0, c, y, xx) == doctest::Approx((c == 2 ? -1 : 1) * x.at(0, c, y, xx)));
  }
  // Without a saliency region the gather is the identity.
  const std::vector<CarrierMap> empty{CarrierMap(BinaryMask(4, 4))};
  const D x = random_tensor(1, 3, 4, 4, rng);
  CHECK(relay_gather(x, empty) == x);
  CHECK_THROWS(relay_gather(x, std::vector<CarrierMap>{}));
}

TEST_CASE("single-image model operations") {
  const ArchConfig a = small_arch();
  const ModelBundle b(a, 1);
  Rng rng(3);
  const Image im = oracle::random_image(16, 16, rng);
  const auto latent = encode_watermark(b, im);
  CHECK(latent.channels() == a.latent_channels);
  CHECK(latent.height() == 16);
  CHECK(encode_watermark(b, im).features == latent.features);
  const Image cont = hide(b, latent, im);
  CHECK(cont.in_unit_range());
  const auto feats = extract_features(b, cont);
  const Image dec = decode_watermark(b, feats);
  CHECK(dec.in_unit_range());
  CHECK(dec.height() == 16);
  CHECK_THROWS_AS(encode_watermark(b, Image(8, 8)), DimensionError);
  CHECK_THROWS_AS(hide(b, latent, Image(8, 8)), DimensionError);
}

TEST_CASE("checkpoint round trip and rejection") {
  const ArchConfig a = small_arch();
  ModelBundle b(a, 7);
  b.stage = TrainingStage::Stage1;
  const auto path = scratch("b.ckpt");
  save_checkpoint(b, path);
  const ModelBundle back = load_checkpoint(path, a);
  CHECK(back.stage == TrainingStage::Stage1);
  const auto p0 = const_cast<ModelBundle&>(b).nets().parameters();
  const auto p1 = const_cast<ModelBundle&>(back).nets().parameters();
  REQUIRE(p0.size() == p1.size());
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p0[i]->value == p1[i]->value);

  ArchConfig other = a;
  other.latent_channels = 4;
  CHECK_THROWS_AS(load_checkpoint(path, other), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(scratch("none.ckpt"), a), CheckpointError);

  const auto size = fs::file_size(path);
  fs::copy_file(path, scratch("cut.ckpt"), fs::copy_options::overwrite_existing);
  fs::resize_file(scratch("cut.ckpt"), size / 2);
  CHECK_THROWS_AS(load_checkpoint(scratch("cut.ckpt"), a), CheckpointError);

  auto file = read_checkpoint_file(path);
  file.schema_version = 99;
  write_checkpoint_file(file, scratch("v99.ckpt"));
  CHECK_THROWS_AS(load_checkpoint(scratch("v99.ckpt"), a), CheckpointError);
}

TEST_CASE("architecture digest covers every key") {
  const ArchConfig a;
  ArchConfig b = a;
  CHECK(config_digest(a) == config_digest(b));
  b.relay = 0;
  CHECK(config_digest(a) != config_digest(b));
  b = a;
  b.hnet_depth += 1;
  CHECK(config_digest(a) != config_digest(b));
  b = a;
  b.relay = 1;
  b.masked_extraction = 0;
  CHECK_THROWS(validated(b));
}
