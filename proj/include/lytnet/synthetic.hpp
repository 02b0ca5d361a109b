#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lytnet/dataset.hpp"

namespace lytnet {

// Zebra pixels are exact grays; background noise never is.
inline constexpr float kZebraBright = 0.95f;
inline constexpr float kZebraDark = 0.30f;

struct SceneLayout {
  Endpoints midline;
  bool has_crossing = true;
  double light_x = 0.5, light_y = 0.2;  // normalized housing center
};

/// Zebra band of half-width `half_width` (fraction of image width) around
/// the midline, with bars alternating along it.
inline void draw_zebra(Image& img, const Endpoints& e,
                       double half_width = 0.10, int bars = 7) {
  const std::size_t h = image_height(img), w = image_width(img);
  const double ax = e.x1 * w, ay = e.y1 * h, bx = e.x2 * w, by = e.y2 * h;
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  if (len2 <= 0) return;
  const double len = std::sqrt(len2);
  const double hw = half_width * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = x + 0.5 - ax, py = y + 0.5 - ay;
      const double t = (px * dx + py * dy) / len2;
      if (t < 0.0 || t > 1.0) continue;
      const double perp = std::abs(px * dy - py * dx) / len;
      if (perp > hw) continue;
      const int bar = static_cast<int>(t * bars);
      const float v = bar % 2 == 0 ? kZebraBright : kZebraDark;
      for (std::size_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] = v;
    }
  }
}

namespace detail {
inline void fill_rect(Image& img, double cx, double cy, double rx, double ry,
                      float r, float g, float b) {
  const std::size_t h = image_height(img), w = image_width(img);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (std::abs(x + 0.5 - cx) > rx || std::abs(y + 0.5 - cy) > ry) continue;
      img[(0 * h + y) * w + x] = r;
      img[(1 * h + y) * w + x] = g;
      img[(2 * h + y) * w + x] = b;
    }
}
inline void fill_disk(Image& img, double cx, double cy, double radius, float r,
                      float g, float b) {
  const std::size_t h = image_height(img), w = image_width(img);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
      if (ddx * ddx + ddy * ddy > radius * radius) continue;
      img[(0 * h + y) * w + x] = r;
      img[(1 * h + y) * w + x] = g;
      img[(2 * h + y) * w + x] = b;
    }
}
}  // namespace detail

/// Dark housing with a colored disk and/or a white countdown digit block.
/// The "none" class draws nothing.
inline void draw_light(Image& img, LightClass label, double cx_norm,
                       double cy_norm) {
  if (label == LightClass::none) return;
  const double h = static_cast<double>(image_height(img));
  const double w = static_cast<double>(image_width(img));
  const double s = 0.07 * std::min(h, w);
  const double cx = cx_norm * w, cy = cy_norm * h;
  detail::fill_rect(img, cx, cy, 2.2 * s, 1.2 * s, 0.08f, 0.08f, 0.10f);
  const double disk_x = cx - 1.0 * s, digit_x = cx + 1.0 * s;
  switch (label) {
    case LightClass::red:
      detail::fill_disk(img, disk_x, cy, 0.9 * s, 0.95f, 0.10f, 0.10f);
      break;
    case LightClass::green:
      detail::fill_disk(img, disk_x, cy, 0.9 * s, 0.10f, 0.90f, 0.25f);
      break;
    case LightClass::countdown_green:
      detail::fill_disk(img, disk_x, cy, 0.9 * s, 0.10f, 0.90f, 0.25f);
      detail::fill_rect(img, digit_x, cy, 0.7 * s, 0.9 * s, 0.97f, 0.97f,
                        0.90f);
      break;
    case LightClass::countdown_blank:
      detail::fill_rect(img, digit_x, cy, 0.7 * s, 0.9 * s, 0.97f, 0.97f,
                        0.90f);
      break;
    case LightClass::none:
      break;
  }
}

inline SceneLayout random_layout(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneLayout s;
  s.midline.x1 = 0.35 + 0.30 * u(rng);
  s.midline.y1 = 0.80 + 0.15 * u(rng);
  s.midline.x2 = std::clamp(s.midline.x1 - 0.15 + 0.30 * u(rng), 0.05, 0.95);
  s.midline.y2 = 0.42 + 0.15 * u(rng);
  s.light_x = 0.25 + 0.50 * u(rng);
  s.light_y = 0.14 + 0.10 * u(rng);
  return s;
}

/// Renders a labeled scene: colored noise background, zebra band, light.
inline LabeledFrame render_scene(LightClass label, const SceneLayout& layout,
                                 std::size_t height, std::size_t width,
                                 std::mt19937_64& rng) {
  Image img({3, height, width});
  std::uniform_real_distribution<float> noise(0.15f, 0.65f);
  for (auto& v : img.data()) v = noise(rng);
  if (layout.has_crossing) draw_zebra(img, layout.midline);
  draw_light(img, label, layout.light_x, layout.light_y);
  return {std::move(img), label, layout.midline, layout.has_crossing};
}

/// `count` frames cycling through the five classes, fully determined by
/// `seed`.
inline std::vector<LabeledFrame> make_synthetic_dataset(std::size_t count,
                                                        std::uint64_t seed,
                                                        std::size_t height,
                                                        std::size_t width) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledFrame> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<LightClass>(i % kNumClasses);
    frames.push_back(render_scene(label, random_layout(rng), height, width, rng));
  }
  return frames;
}

}  // namespace lytnet
