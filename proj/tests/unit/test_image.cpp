#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "../common/oracles.hpp"
#include "recovermark/dataset.hpp"
#include "recovermark/image.hpp"

using namespace recovermark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rm_unit_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("segment and composite are exact inverses") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    const Image im = oracle::random_image(h, w, rng);
    const BinaryMask m = oracle::random_mask(h, w, rng, rng.uniform());
    const auto parts = segment(im, m);
    CHECK(composite(parts.saliency, parts.background, m) == im);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool in = m.at(y, x);
          REQUIRE(parts.saliency.at(c, y, x) == (in ? im.at(c, y, x) : 0.0));
          REQUIRE(parts.background.at(c, y, x) == (in ? 0.0 : im.at(c, y, x)));
          REQUIRE(parts.saliency.at(c, y, x) + parts.background.at(c, y, x) == im.at(c, y, x));
        }
  }
}

TEST_CASE("segment edge masks") {
  Rng rng(2);
  const Image im = oracle::random_image(5, 7, rng);
  const auto all = segment(im, BinaryMask(5, 7, 1));
  CHECK(all.saliency == im);
  CHECK(all.background == Image(5, 7));
  const auto none = segment(im, BinaryMask(5, 7, 0));
  CHECK(none.background == im);
  CHECK_THROWS_AS(segment(im, BinaryMask(5, 6)), DimensionError);
}

TEST_CASE("mask algebra") {
  Rng rng(3);
  const BinaryMask a = oracle::random_mask(9, 9, rng), b = oracle::random_mask(9, 9, rng);
  CHECK(a.complement().complement() == a);
  CHECK(a.count() + a.complement().count() == a.size());
  const BinaryMask ab = a.intersect(b);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(ab.test(i) == (a.test(i) && b.test(i)));
}

TEST_CASE("tamper operators touch only the mask") {
  Rng rng(4);
  const Image im = oracle::random_image(8, 8, rng);
  const Image donor = oracle::random_image(8, 8, rng);
  const BinaryMask m = oracle::random_mask(8, 8, rng);
  for (const TamperSpec& spec : {TamperSpec{SplicePatch{donor}, m}, TamperSpec{NoiseFill{0.2, 9}, m},
                                 TamperSpec{ConstantFill{0.25}, m}}) {
    const Image out = apply_tamper(im, spec);
    CHECK(out.in_unit_range());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          if (!m.at(y, x)) CHECK(out.at(c, y, x) == im.at(c, y, x));
  }
  const Image spliced = apply_tamper(im, {SplicePatch{donor}, m});
  CHECK(spliced == composite(donor, im, m));
  CHECK_THROWS(apply_tamper(im, {SplicePatch{}, m}));
}

TEST_CASE("png round trip is 8-bit quantization") {
  Rng rng(5);
  const Image im = oracle::random_image(6, 9, rng);
  const auto path = scratch("rt.png");
  save_image(im, path);
  const Image back = load_image(path);
  CHECK(back == quantize8(im));
  for (std::size_t i = 0; i < im.size(); ++i) CHECK(std::abs(back.data()[i] - im.data()[i]) <= 0.5 / 255 + 1e-12);

  const BinaryMask m = oracle::random_mask(6, 9, rng);
  save_mask(m, scratch("m.png"));
  CHECK(load_mask(scratch("m.png")) == m);
}

TEST_CASE("image loading rejects bad inputs") {
  CHECK_THROWS_AS(load_image(scratch("missing.png")), ImageIoError);
  std::ofstream(scratch("junk.png")) << "not a png";
  CHECK_THROWS_AS(load_image(scratch("junk.png")), ImageIoError);
  // A mask file is single channel, not RGB.
  save_mask(BinaryMask(4, 4, 1), scratch("gray.png"));
  CHECK_THROWS_AS(load_image(scratch("gray.png")), ImageIoError);
  // Non-binary gray levels are not a mask.
  save_gray(std::vector<double>(16, 0.5), 4, 4, scratch("half.png"));
  CHECK_THROWS_AS(load_mask(scratch("half.png")), ImageIoError);
}

TEST_CASE("synthetic dataset") {
  SyntheticOptions opt;
  opt.count = 6;
  opt.side = 32;
  opt.seed = 3;
  const Dataset a = make_synthetic_dataset(opt), b = make_synthetic_dataset(opt);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].image.in_unit_range());
    const double frac = static_cast<double>(a[i].mask.count()) / a[i].mask.size();
    CHECK(frac >= opt.min_face_fraction - 0.02);
    CHECK(frac <= opt.max_face_fraction + 0.02);
  }
  const auto dir = scratch("ds");
  fs::remove_all(dir);
  save_dataset(a, dir);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(back[i].name == a[i].name);
    CHECK(back[i].image == quantize8(a[i].image));
    CHECK(back[i].mask == a[i].mask);
  }
  fs::remove(dir / "masks" / (a[0].name + ".png"));
  CHECK_THROWS_AS(load_dataset(dir), ImageIoError);
}

TEST_CASE("ellipse mask area") {
  for (double f : {0.1, 0.3, 0.5, 0.7}) {
    const BinaryMask m = ellipse_mask(64, f, 31.5, 31.5);
    CHECK(std::abs(static_cast<double>(m.count()) / m.size() - f) < 0.01);
  }
}
