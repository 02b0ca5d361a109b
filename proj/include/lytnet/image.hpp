#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lytnet/tensor.hpp"

namespace lytnet {

/// Images are (3, H, W) float tensors with channel values in [0, 1].
using Image = Tensor<float>;

inline std::size_t image_height(const Image& img) { return img.extent(1); }
inline std::size_t image_width(const Image& img) { return img.extent(2); }

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void skip_ppm_space(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      is.get();
    } else {
      return;
    }
  }
}
inline std::size_t read_ppm_int(std::istream& is, const std::string& path) {
  skip_ppm_space(is);
  std::size_t v = 0;
  if (!(is >> v)) throw ImageError("malformed PPM header in " + path);
  return v;
}
}  // namespace detail

/// Reads a binary PPM (P6, maxval <= 255).
inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open image " + path);
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '6') {
    throw ImageError("not a binary PPM (P6) image: " + path);
  }
  const std::size_t w = detail::read_ppm_int(is, path);
  const std::size_t h = detail::read_ppm_int(is, path);
  const std::size_t maxval = detail::read_ppm_int(is, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw ImageError("unsupported PPM geometry in " + path);
  }
  is.get();
  std::vector<unsigned char> bytes(w * h * 3);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw ImageError("truncated PPM data in " + path);
  }
  Image img({3, h, w});
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img[(c * h + y) * w + x] = bytes[(y * w + x) * 3 + c] * scale;
  return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
  require_rank(img, 3, "write_ppm");
  const std::size_t h = image_height(img), w = image_width(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageError("cannot write image " + path);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img[(c * h + y) * w + x], 0.0f, 1.0f);
        bytes[(y * w + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

/// Bilinear resampling with pixel-center alignment.
inline Image resize_bilinear(const Image& img, std::size_t out_h,
                             std::size_t out_w) {
  require_rank(img, 3, "resize_bilinear");
  const std::size_t channels = img.extent(0);
  const std::size_t h = image_height(img), w = image_width(img);
  if (h == out_h && w == out_w) return img;
  Image out({channels, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const float* p = img.raw() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - tx) + p[y0 * w + x1] * tx;
        const double bot = p[y1 * w + x0] * (1 - tx) + p[y1 * w + x1] * tx;
        out[(c * out_h + y) * out_w + x] =
            static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

/// Copies the window with top-left corner (left, top), optionally mirrored
/// left-right.
inline Image crop_image(const Image& img, std::size_t top, std::size_t left,
                        std::size_t out_h, std::size_t out_w, bool mirror) {
  const std::size_t channels = img.extent(0);
  const std::size_t h = image_height(img), w = image_width(img);
  if (top + out_h > h || left + out_w > w) {
    throw std::invalid_argument("crop window exceeds image " +
                                shape_string(img.shape()));
  }
  Image out({channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < out_h; ++y) {
      const float* src = img.raw() + (c * h + top + y) * w + left;
      float* dst = out.raw() + (c * out_h + y) * out_w;
      if (mirror) {
        for (std::size_t x = 0; x < out_w; ++x) dst[x] = src[out_w - 1 - x];
      } else {
        std::copy(src, src + out_w, dst);
      }
    }
  return out;
}

}  // namespace lytnet
