#include "recovermark/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace recovermark {

namespace {

struct Ellipse {
  double cy, cx, ry, rx;
  bool contains(double y, double x) const {
    const double v = (y - cy) / ry;
    const double u = (x - cx) / rx;
    return u * u + v * v <= 1.0;
  }
};

BinaryMask rasterize(int side, const Ellipse& e) {
  BinaryMask m(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) m.at(y, x) = e.contains(y + 0.5, x + 0.5) ? 1 : 0;
  return m;
}

}  // namespace

Image synthetic_background(int side, Rng& rng) {
  Image img(side, side);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.25, 0.75);
    struct Wave {
      double fy, fx, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 4; ++k) {
      waves.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.0, two_pi),
                       rng.uniform(0.03, 0.12)});
    }
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double v = base;
        for (const auto& w : waves) {
          v += w.amp * std::sin(two_pi * (w.fy * y + w.fx * x) / side + w.phase);
        }
        img.at(c, y, x) = v;
      }
    }
  }
  // A few flat rectangles give the scene hard edges.
  const int shapes = rng.uniform_int(2, 4);
  for (int s = 0; s < shapes; ++s) {
    const int y0 = rng.uniform_int(0, side - 4), x0 = rng.uniform_int(0, side - 4);
    const int y1 = std::min(side, y0 + rng.uniform_int(4, side / 2));
    const int x1 = std::min(side, x0 + rng.uniform_int(4, side / 2));
    const double alpha = rng.uniform(0.4, 0.8);
    const double color[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img.at(c, y, x) = (1 - alpha) * img.at(c, y, x) + alpha * color[c];
  }
  // Fine texture.
  for (double& v : img.data()) v = std::clamp(v + rng.normal(0.0, 0.015), 0.05, 0.95);
  return img;
}

BinaryMask ellipse_mask(int side, double fraction, double cy, double cx, double aspect) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("ellipse_mask: fraction must be in (0,1)");
  const double target = fraction * side * side;
  // Bisection on the vertical radius so the rasterized (and clipped) area hits the target.
  double lo = 0.5, hi = 4.0 * side;
  BinaryMask best = rasterize(side, {cy, cx, lo, lo * aspect});
  double best_err = std::abs(static_cast<double>(best.count()) - target);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    BinaryMask m = rasterize(side, {cy, cx, mid, mid * aspect});
    const double count = static_cast<double>(m.count());
    const double err = std::abs(count - target);
    if (err < best_err) {
      best_err = err;
      best = m;
    }
    if (count < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return best;
}

void paint_face(Image& image, const BinaryMask& mask, Rng& rng) {
  if (!mask.matches(image)) throw DimensionError("paint_face: mask does not match image");
  int y_min = mask.height(), y_max = -1, x_min = mask.width(), x_max = -1;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(y, x)) {
        y_min = std::min(y_min, y), y_max = std::max(y_max, y);
        x_min = std::min(x_min, x), x_max = std::max(x_max, x);
      }
  if (y_max < 0) return;
  const double cy = 0.5 * (y_min + y_max + 1), cx = 0.5 * (x_min + x_max + 1);
  const double ry = std::max(1.0, 0.5 * (y_max - y_min + 1)), rx = std::max(1.0, 0.5 * (x_max - x_min + 1));

  const double skin[3] = {rng.uniform(0.55, 0.95), rng.uniform(0.35, 0.75), rng.uniform(0.25, 0.6)};
  const double hair_level = rng.uniform(0.05, 0.45);
  const double hair[3] = {hair_level * rng.uniform(0.8, 1.4), hair_level * rng.uniform(0.6, 1.0),
                          hair_level * rng.uniform(0.4, 0.9)};
  const double iris[3] = {rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.5)};
  const double lips[3] = {rng.uniform(0.6, 0.85), rng.uniform(0.2, 0.35), rng.uniform(0.25, 0.4)};
  const double shade_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double shade_strength = rng.uniform(0.05, 0.2);
  const double hairline = rng.uniform(-0.6, -0.35);

  const Ellipse eyes[2] = {{-0.1, -0.38, 0.1, 0.15}, {-0.1, 0.38, 0.1, 0.15}};
  const Ellipse pupils[2] = {{-0.1, -0.38, 0.06, 0.06}, {-0.1, 0.38, 0.06, 0.06}};
  const Ellipse mouth{0.45, 0.0, 0.08, 0.3};

  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (!mask.at(y, x)) continue;
      const double v = (y + 0.5 - cy) / ry, u = (x + 0.5 - cx) / rx;
      const double* color = skin;
      double shade = 1.0 + shade_strength * (u * std::cos(shade_angle) + v * std::sin(shade_angle));
      if (v < hairline + 0.08 * std::sin(6.0 * u)) {
        color = hair;
      } else if (pupils[0].contains(v, u) || pupils[1].contains(v, u)) {
        color = iris;
        shade = 1.0;
      } else if (eyes[0].contains(v, u) || eyes[1].contains(v, u)) {
        static constexpr double sclera[3] = {0.92, 0.92, 0.9};
        color = sclera;
        shade = 1.0;
      } else if (mouth.contains(v, u)) {
        color = lips;
      }
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = std::clamp(color[c] * shade, 0.0, 1.0);
    }
  }
}

Sample synthetic_sample(int side, double face_fraction, Rng& rng) {
  Sample s;
  s.image = synthetic_background(side, rng);
  const double aspect = rng.uniform(0.75, 0.9);
  // Keep the face centre far enough inside that little of it is clipped.
  const double margin = 0.3 * side * std::sqrt(face_fraction);
  const double cy = rng.uniform(margin, side - margin);
  const double cx = rng.uniform(margin, side - margin);
  s.mask = ellipse_mask(side, face_fraction, cy, cx, aspect);
  paint_face(s.image, s.mask, rng);
  return s;
}

Dataset make_synthetic_dataset(const SyntheticOptions& options) {
  if (options.count <= 0) throw std::invalid_argument("synthetic dataset: count must be positive");
  Dataset out;
  out.reserve(options.count);
  for (int i = 0; i < options.count; ++i) {
    Rng rng = Rng(options.seed).fork(static_cast<std::uint64_t>(i));
    const double fraction = rng.uniform(options.min_face_fraction, options.max_face_fraction);
    Sample s = synthetic_sample(options.side, fraction, rng);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%05d", i);
    s.name = name;
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (const auto& s : dataset) {
    save_image(s.image, root / "images" / (s.name + ".png"));
    save_mask(s.mask, root / "masks" / (s.name + ".png"));
  }
}

Dataset load_dataset(const std::filesystem::path& root) {
  const auto images_dir = root / "images";
  const auto masks_dir = root / "masks";
  if (!std::filesystem::is_directory(images_dir)) {
    throw ImageIoError("dataset '" + root.string() + "' has no images/ directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Dataset out;
  for (const auto& f : files) {
    Sample s;
    s.name = f.stem().string();
    s.image = load_image(f);
    const auto mask_path = masks_dir / f.filename();
    if (!std::filesystem::exists(mask_path)) throw ImageIoError("missing mask for '" + s.name + "'");
    s.mask = load_mask(mask_path);
    if (!s.mask.matches(s.image)) throw ImageIoError("mask/image size mismatch for '" + s.name + "'");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace recovermark
