#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lytnet/image.hpp"
#include "lytnet/network.hpp"

namespace lytnet {

/// Zebra-crossing midline in normalized image coordinates. The start point
/// (x1, y1) is the endpoint nearer the bottom of the image.
struct Endpoints {
  double x1 = 0.5, y1 = 1.0, x2 = 0.5, y2 = 0.0;

  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
  static Endpoints from(std::span<const double, 4> v) {
    return {v[0], v[1], v[2], v[3]};
  }
  friend bool operator==(const Endpoints&, const Endpoints&) = default;
};

inline bool endpoints_valid(const Endpoints& e) {
  for (double v : e.as_array())
    if (!(v >= 0.0 && v <= 1.0)) return false;
  return e.y1 >= e.y2;
}

struct LabeledFrame {
  Image image;  // (3, H, W)
  LightClass label = LightClass::none;
  Endpoints endpoints;
  bool has_crossing = true;  // false masks the regression term
};

struct ManifestRecord {
  std::string path;
  LightClass label = LightClass::none;
  Endpoints endpoints;
  bool has_crossing = true;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::size_t record, const std::string& what)
      : std::runtime_error("manifest record " + std::to_string(record) + ": " +
                           what),
        record_(record) {}
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

inline nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json j{{"path", r.path},
                   {"class", class_name(r.label)},
                   {"x1", r.endpoints.x1},
                   {"y1", r.endpoints.y1},
                   {"x2", r.endpoints.x2},
                   {"y2", r.endpoints.y2}};
  if (!r.has_crossing) j["crossing"] = false;
  return j;
}

/// Parses one manifest line. `index` is the 1-based record number used in
/// diagnostics.
inline ManifestRecord parse_manifest_record(const std::string& line,
                                            std::size_t index) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(index, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ManifestError(index, "record is not an object");
  ManifestRecord r;
  if (!j.contains("path") || !j["path"].is_string()) {
    throw ManifestError(index, "missing string field 'path'");
  }
  r.path = j["path"].get<std::string>();
  if (!j.contains("class") || !j["class"].is_string()) {
    throw ManifestError(index, "missing string field 'class'");
  }
  const auto label = parse_class(j["class"].get<std::string>());
  if (!label) {
    throw ManifestError(index, "unknown class '" +
                                   j["class"].get<std::string>() + "'");
  }
  r.label = *label;
  std::array<double, 4> coords{};
  const char* keys[4] = {"x1", "y1", "x2", "y2"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j.contains(keys[i]) || !j[keys[i]].is_number()) {
      throw ManifestError(index, std::string("missing numeric field '") +
                                     keys[i] + "'");
    }
    coords[i] = j[keys[i]].get<double>();
  }
  r.endpoints = Endpoints::from(coords);
  if (j.contains("crossing")) {
    if (!j["crossing"].is_boolean()) {
      throw ManifestError(index, "field 'crossing' must be boolean");
    }
    r.has_crossing = j["crossing"].get<bool>();
  }
  if (!endpoints_valid(r.endpoints)) {
    throw ManifestError(index,
                        "endpoints must lie in [0,1] with y1 >= y2 (start "
                        "point is the lower one)");
  }
  return r;
}

inline std::vector<ManifestRecord> read_manifest(std::istream& is) {
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(is, line)) {
    ++index;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_manifest_record(line, index));
  }
  return out;
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  return read_manifest(is);
}

inline void write_manifest(std::ostream& os,
                           const std::vector<ManifestRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

/// Loads each record's image (relative paths resolve against the manifest
/// directory) and resizes it to height x width.
inline std::vector<LabeledFrame> load_frames(
    const std::vector<ManifestRecord>& records,
    const std::filesystem::path& base_dir, std::size_t height,
    std::size_t width) {
  std::vector<LabeledFrame> frames;
  frames.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    std::filesystem::path p(r.path);
    if (p.is_relative()) p = base_dir / p;
    Image img;
    try {
      img = read_ppm(p.string());
    } catch (const ImageError& e) {
      throw ManifestError(i + 1, e.what());
    }
    frames.push_back({resize_bilinear(img, height, width), r.label,
                      r.endpoints, r.has_crossing});
  }
  return frames;
}

// ---- augmentation ----------------------------------------------------------

/// Crops at (left, top) and optionally mirrors, carrying the labels along.
/// Endpoints leaving the window are clamped to [0, 1].
inline LabeledFrame crop_frame(const LabeledFrame& frame, std::size_t top,
                               std::size_t left, std::size_t crop_h,
                               std::size_t crop_w, bool flip) {
  const auto h = static_cast<double>(image_height(frame.image));
  const auto w = static_cast<double>(image_width(frame.image));
  LabeledFrame out;
  out.image = crop_image(frame.image, top, left, crop_h, crop_w, flip);
  out.label = frame.label;
  out.has_crossing = frame.has_crossing;
  auto map_x = [&](double x) {
    double v = std::clamp((x * w - static_cast<double>(left)) / double(crop_w),
                          0.0, 1.0);
    return flip ? 1.0 - v : v;
  };
  auto map_y = [&](double y) {
    return std::clamp((y * h - static_cast<double>(top)) / double(crop_h), 0.0,
                      1.0);
  };
  out.endpoints = {map_x(frame.endpoints.x1), map_y(frame.endpoints.y1),
                   map_x(frame.endpoints.x2), map_y(frame.endpoints.y2)};
  return out;
}

/// Uniform random crop window plus a horizontal flip with probability 0.5.
inline LabeledFrame augment(const LabeledFrame& frame, std::mt19937_64& rng,
                            std::size_t crop_h, std::size_t crop_w,
                            bool allow_flip = true) {
  const std::size_t h = image_height(frame.image), w = image_width(frame.image);
  if (crop_h > h || crop_w > w) {
    throw std::invalid_argument(
        "crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
        " larger than image " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::uniform_int_distribution<std::size_t> dy(0, h - crop_h);
  std::uniform_int_distribution<std::size_t> dx(0, w - crop_w);
  const std::size_t top = dy(rng);
  const std::size_t left = dx(rng);
  const bool flip = allow_flip && std::bernoulli_distribution(0.5)(rng);
  return crop_frame(frame, top, left, crop_h, crop_w, flip);
}

// ---- cross validation -------------------------------------------------------

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Shuffled k-fold partition of [0, n). Fold sizes differ by at most one;
/// the first n % k folds get the extra item.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t k,
                                     std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2");
  if (n < k) {
    throw std::invalid_argument("kfold_split: dataset of " + std::to_string(n) +
                                " items cannot form " + std::to_string(k) +
                                " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Fold> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].validation.assign(order.begin() + pos, order.begin() + pos + size);
    pos += size;
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      folds[f].train.insert(folds[f].train.end(), folds[g].validation.begin(),
                            folds[g].validation.end());
    }
  }
  return folds;
}

}  // namespace lytnet
