#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "recovermark/image.hpp"
#include "recovermark/rng.hpp"

namespace recovermark {

struct Sample {
  std::string name;
  Image image;
  BinaryMask mask;
};

using Dataset = std::vector<Sample>;

struct SyntheticOptions {
  int side = 64;
  int count = 64;
  double min_face_fraction = 0.08;
  double max_face_fraction = 0.30;
  std::uint64_t seed = 0;
};

/// Random smooth background with a few hard-edged shapes.
Image synthetic_background(int side, Rng& rng);

/// Elliptical mask whose area is `fraction` of the image (±1 pixel rounding),
/// centred at (cy, cx) and clipped to the image.
BinaryMask ellipse_mask(int side, double fraction, double cy, double cx, double aspect = 0.85);

/// Paints a stylized face (skin, shading, hair, eyes, mouth) filling `mask`.
void paint_face(Image& image, const BinaryMask& mask, Rng& rng);

/// One background + face sample, mask marking the face.
Sample synthetic_sample(int side, double face_fraction, Rng& rng);

Dataset make_synthetic_dataset(const SyntheticOptions& options);

/// Directory layout: <root>/images/<name>.png and <root>/masks/<name>.png.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
/// Loads every image with a same-named mask; throws ImageIoError on a missing
/// mask or a size mismatch. Samples are sorted by name.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace recovermark
