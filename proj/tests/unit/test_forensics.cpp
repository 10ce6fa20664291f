#include <doctest.h>

#include <json.hpp>

#include "../common/oracles.hpp"
#include "recovermark/forensics.hpp"

using namespace recovermark;

TEST_CASE("psnr matches the oracle") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const int h = rng.uniform_int(1, 10), w = rng.uniform_int(1, 10);
    const Image a = oracle::random_image(h, w, rng), b = oracle::random_image(h, w, rng);
    const BinaryMask m = oracle::random_mask(h, w, rng);
    CHECK(oracle::rel_close(psnr(a, b), oracle::psnr(a, b), 1e-9));
    CHECK(oracle::rel_close(psnr(a, b, m), oracle::psnr(a, b, &m), 1e-9));
  }
  Rng r2(2);
  const Image a = oracle::random_image(4, 4, r2);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(Image(4, 4, 0.0), Image(4, 4, 1.0)) == 0.0);
  CHECK(psnr(a, Image(4, 4), BinaryMask(4, 4)) == kPsnrCap);
  CHECK_THROWS_AS(psnr(a, Image(4, 5)), DimensionError);
}

TEST_CASE("ms_ssim matches the non-separable oracle") {
  Rng rng(2);
  for (int t = 0; t < 12; ++t) {
    const int side = t % 3 == 0 ? 32 : rng.uniform_int(6, 24);
    const Image a = oracle::random_image(side, side, rng);
    Image b = a;
    for (auto& v : b.data()) v = std::clamp(v + rng.normal(0, 0.1), 0.0, 1.0);
    CHECK(oracle::rel_close(ms_ssim(a, b), oracle::ms_ssim(a, b), 1e-6));
  }
  const Image a = oracle::random_image(32, 32, rng);
  CHECK(ms_ssim(a, a) == doctest::Approx(1.0));
  CHECK(ms_ssim_scales(64) == 5);
  CHECK(ms_ssim_scales(32) == 5);
  CHECK(ms_ssim_scales(16) == 4);
  CHECK(ms_ssim_scales(8) == 3);
}

TEST_CASE("ncc matches the oracle and handles undefined cases") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    const Image a = oracle::random_image(h, w, rng), b = oracle::random_image(h, w, rng);
    const BinaryMask m = oracle::random_mask(h, w, rng);
    const auto got = ncc(a, b, m), want = oracle::ncc(a, b, m);
    REQUIRE(got.has_value() == want.has_value());
    if (got) CHECK(oracle::rel_close(*got, *want, 1e-9));
  }
  const Image a = oracle::random_image(4, 4, rng);
  CHECK(*ncc(a, a, BinaryMask(4, 4, 1)) == doctest::Approx(1.0));
  CHECK_FALSE(ncc(a, a, BinaryMask(4, 4)).has_value());
  CHECK_FALSE(ncc(a, Image(4, 4, 0.3), BinaryMask(4, 4, 1)).has_value());
  const auto v = verify(a, Image(4, 4, 0.3), BinaryMask(4, 4, 1));
  CHECK_FALSE(v.owned);
  CHECK_FALSE(v.reason.empty());
  const auto ok = verify(a, a, BinaryMask(4, 4, 1));
  CHECK(ok.owned);
  CHECK(ok.owned == (ok.ncc > ok.threshold));
}

TEST_CASE("f1 and auc match the oracles") {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    const BinaryMask pred = oracle::random_mask(h, w, rng), gt = oracle::random_mask(h, w, rng, rng.uniform());
    std::vector<double> score(gt.size());
    // Coarse scores so ties occur.
    for (auto& s : score) s = rng.uniform_int(0, 4) / 4.0;
    const auto got = f1_auc(score, pred, gt);
    CHECK(oracle::rel_close(got.f1, oracle::f1(pred, gt), 1e-12));
    const auto want = oracle::auc(score, gt);
    REQUIRE(got.auc.has_value() == want.has_value());
    if (want) CHECK(std::abs(*got.auc - *want) <= 1e-12);
  }
  const BinaryMask empty(3, 3);
  CHECK(f1_auc(std::vector<double>(9, 0.0), empty, empty).f1 == 1.0);
}

TEST_CASE("localization with perfect recovery is exact") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Image original = oracle::random_image(16, 16, rng);
    const BinaryMask saliency = oracle::random_mask(16, 16, rng, 0.6);
    const BinaryMask tamper = oracle::random_mask(16, 16, rng, 0.3).intersect(saliency);
    Image suspicious = original;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if (tamper.at(y, x)) suspicious.at(c, y, x) = std::fmod(original.at(c, y, x) + 0.5, 1.0);
    const auto r = localize(original, suspicious, saliency);
    CHECK(r.mask == tamper);
    CHECK(f1_auc(r.diff_map, r.mask, tamper).f1 == 1.0);
    CHECK(localize(original, original, saliency).mask.none());
    for (std::size_t i = 0; i < r.diff_map.size(); ++i) {
      if (!saliency.test(i)) CHECK(r.diff_map[i] == 0.0);
      CHECK(r.mask.test(i) == (saliency.test(i) && r.diff_map[i] > r.threshold));
    }
  }
}

TEST_CASE("localization options") {
  Image a(5, 5, 0.5), b(5, 5, 0.5);
  b.at(0, 2, 2) = 0.9;  // one channel moves by 0.4
  const BinaryMask all(5, 5, 1);
  CHECK(localize(a, b, all).mask.none());  // mean 0.133
  LocalizationOptions mx;
  mx.max_over_channels = true;
  CHECK(localize(a, b, all, mx).mask.count() == 1);
  mx.median_filter = true;
  CHECK(localize(a, b, all, mx).mask.none());
  LocalizationOptions bad;
  bad.threshold = 1.5;
  CHECK_THROWS(localize(a, b, all, bad));
}

TEST_CASE("inference needs a trained model") {
  ArchConfig arch;
  arch.image_side = 16;
  const ModelBundle b(arch, 0);
  const Image im(16, 16, 0.5);
  CHECK_THROWS_AS(embed(im, BinaryMask(16, 16), b), UntrainedModelError);
  CHECK_THROWS_AS(recover(im, BinaryMask(16, 16), b), UntrainedModelError);
}

TEST_CASE("inference on a bundle") {
  ArchConfig arch;
  arch.image_side = 16;
  arch.hnet_depth = arch.enet_depth = 2;
  ModelBundle b(arch, 0);
  b.stage = TrainingStage::Stage1;
  SyntheticOptions o;
  o.side = 16;
  o.count = 3;
  const Dataset data = make_synthetic_dataset(o);
  const Image p = embed(data[0].image, data[0].mask, b);
  // The saliency region is untouched and the container stays in range.
  CHECK(segment(p, data[0].mask).saliency == segment(data[0].image, data[0].mask).saliency);
  CHECK(p.in_unit_range());
  const Image r = recover(p, data[0].mask, b);
  CHECK(r.in_unit_range());
  std::vector<Image> imgs{data[0].image, data[1].image};
  std::vector<BinaryMask> masks{data[0].mask, data[1].mask};
  CHECK(embed_batch(imgs, masks, b)[0] == p);
  CHECK_THROWS_AS(embed(data[0].image, BinaryMask(8, 8), b), DimensionError);

  NamedAttack none{"none", {}};
  NamedAttack noise{"noise", parse_attack_chain("noise:0.05")};
  EvaluationOptions eo;
  const MetricsReport rep = evaluate(b, data, {none, noise}, {}, eo);
  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j["metadata"]["images"] == 3);
  CHECK(j["metadata"]["tamper"] == "splice");
  CHECK(j["attacks"].contains("none"));
  for (const auto& [name, row] : j["attacks"].items()) {
    CHECK(row["localization"]["f1"].get<double>() >= 0.0);
    CHECK(row["localization"]["f1"].get<double>() <= 1.0);
    CHECK(row["verification"]["success_rate"].get<double>() <= 1.0);
  }
  CHECK(evaluate(b, data, {none, noise}, {}, eo).to_json() == rep.to_json());

  const auto curve = capacity_sweep(b, {data[0].image}, {0.1, 0.3});
  REQUIRE(curve.size() == 2);
  const auto back = capacity_from_json(capacity_to_json(curve));
  REQUIRE(back.size() == 2);
  CHECK(back[1].fraction == 0.3);
  CHECK(back[0].background_psnr == doctest::Approx(curve[0].background_psnr));
}

TEST_CASE("tamper kind names") {
  for (auto k : {TamperKind::None, TamperKind::Splice, TamperKind::NoiseFill, TamperKind::ConstantFill})
    CHECK(parse_tamper_kind(to_string(k)) == k);
  CHECK_THROWS(parse_tamper_kind("warp"));
}
