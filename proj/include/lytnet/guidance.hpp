#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lytnet/dataset.hpp"
#include "lytnet/geometry.hpp"
#include "lytnet/network.hpp"

namespace lytnet {

enum class LightMode { red, green, countdown, none, uncertain };
enum class Orientation { rotate_left, rotate_right, aligned };
enum class Position { move_left, move_right, centered };

inline const char* to_string(LightMode m) {
  switch (m) {
    case LightMode::red: return "Red";
    case LightMode::green: return "Green";
    case LightMode::countdown: return "Countdown";
    case LightMode::none: return "None";
    case LightMode::uncertain: return "Uncertain";
  }
  return "?";
}
inline const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::rotate_left: return "RotateLeft";
    case Orientation::rotate_right: return "RotateRight";
    case Orientation::aligned: return "Aligned";
  }
  return "?";
}
inline const char* to_string(Position p) {
  switch (p) {
    case Position::move_left: return "MoveLeft";
    case Position::move_right: return "MoveRight";
    case Position::centered: return "Centered";
  }
  return "?";
}

/// Strict thresholds: exactly +/-threshold is still aligned.
inline Orientation decide_orientation(double angle_deg,
                                      double threshold_deg = 10.0) {
  if (angle_deg < -threshold_deg) return Orientation::rotate_left;
  if (angle_deg > threshold_deg) return Orientation::rotate_right;
  return Orientation::aligned;
}

/// Band of +/- band_fraction * width around the midline (width - 1) / 2.
inline Position decide_position(double x_int, double width,
                                double band_fraction = 0.085) {
  if (!(width > 0)) throw std::invalid_argument("image width must be positive");
  const double mid = (width - 1.0) / 2.0;
  if (x_int > mid + band_fraction * width) return Position::move_left;
  if (x_int < mid - band_fraction * width) return Position::move_right;
  return Position::centered;
}

struct GuidanceConfig {
  Homography homography = Homography::birdseye_default();
  ReferenceResolution resolution;  // bird's-eye frame width is resolution.width
  std::size_t window = 5;
  double threshold = 0.8;
  double angle_threshold_deg = 10.0;
  double band_fraction = 0.085;
};

struct GuidanceOutput {
  LightMode light = LightMode::uncertain;
  bool announce = false;
  Orientation orientation = Orientation::aligned;
  Position position = Position::centered;
  std::optional<double> angle_deg;  // absent when the midline is degenerate
  std::optional<double> x_int;
  /// Averaged 5-class probabilities; keeps the countdown sub-modes apart.
  std::array<double, kNumClasses> averaged{};
  std::size_t frames = 0;  // buffered frames used for this decision
};

class GuidanceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_probabilities(std::span<const double> probs) {
  if (probs.size() != kNumClasses) {
    throw GuidanceError("probability vector must have 5 entries, got " +
                        std::to_string(probs.size()));
  }
  double total = 0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw GuidanceError("probabilities must lie in [0, 1]");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw GuidanceError("probabilities must sum to 1, got " +
                        std::to_string(total));
  }
}

/// Sliding-window decision machine for one stream of frames.
class GuidanceState {
 public:
  explicit GuidanceState(GuidanceConfig cfg = {}) : cfg_(std::move(cfg)) {
    if (cfg_.window == 0) throw std::invalid_argument("window must be positive");
  }

  const GuidanceConfig& config() const { return cfg_; }
  std::size_t buffered() const { return probs_.size(); }
  std::optional<LightMode> last_announced() const { return announced_; }

  GuidanceOutput push_frame(std::span<const double> probs,
                            const Endpoints& endpoints) {
    check_probabilities(probs);
    std::array<double, kNumClasses> p{};
    std::copy(probs.begin(), probs.end(), p.begin());
    probs_.push_back(p);
    endpoints_.push_back(endpoints);
    if (probs_.size() > cfg_.window) {
      probs_.pop_front();
      endpoints_.pop_front();
    }

    GuidanceOutput out;
    out.frames = probs_.size();
    for (std::size_t c = 0; c < kNumClasses; ++c)
      out.averaged[c] = mean_of({c});
    if (probs_.size() == cfg_.window) out.light = decide_light();
    if (out.light != LightMode::uncertain && out.light != announced_) {
      out.announce = true;
      announced_ = out.light;
    }
    steer(out);
    return out;
  }

 private:
  // Sums in sorted order so the result does not depend on frame order.
  double mean_of(std::initializer_list<std::size_t> classes) const {
    std::vector<double> values;
    for (const auto& p : probs_)
      for (auto c : classes) values.push_back(p[c]);
    std::sort(values.begin(), values.end());
    double total = 0;
    for (double v : values) total += v;
    return total / static_cast<double>(probs_.size());
  }

  LightMode decide_light() const {
    const std::array<std::pair<LightMode, double>, 4> merged{{
        {LightMode::red, mean_of({0})},
        {LightMode::green, mean_of({1})},
        {LightMode::countdown, mean_of({2, 3})},
        {LightMode::none, mean_of({4})},
    }};
    for (const auto& [mode, mass] : merged)
      if (mass > cfg_.threshold) return mode;
    return LightMode::uncertain;
  }

  void steer(GuidanceOutput& out) const {
    std::array<double, 4> sum{};
    for (const auto& e : endpoints_) {
      const auto a = e.as_array();
      for (std::size_t i = 0; i < 4; ++i) sum[i] += a[i];
    }
    const double n = static_cast<double>(endpoints_.size());
    const auto& res = cfg_.resolution;
    const Point2 start = res.to_pixels(sum[0] / n, sum[1] / n);
    const Point2 end = res.to_pixels(sum[2] / n, sum[3] / n);
    try {
      const Point2 a = apply_homography(cfg_.homography, start);
      const Point2 b = apply_homography(cfg_.homography, end);
      out.angle_deg = direction_angle(a, b);
      out.orientation =
          decide_orientation(*out.angle_deg, cfg_.angle_threshold_deg);
      out.x_int = x_intercept(a, b);
      out.position = decide_position(*out.x_int, res.width, cfg_.band_fraction);
    } catch (const GeometryError&) {
      // degenerate midline: keep the neutral instructions
    }
  }

  GuidanceConfig cfg_;
  std::deque<std::array<double, kNumClasses>> probs_;
  std::deque<Endpoints> endpoints_;
  std::optional<LightMode> announced_;
};

// ---- replay wire format -------------------------------------------------------

struct ReplayFrame {
  std::array<double, kNumClasses> probs{};
  Endpoints endpoints;

  friend bool operator==(const ReplayFrame&, const ReplayFrame&) = default;
};

inline nlohmann::json to_json(const ReplayFrame& f) {
  return {{"probs", f.probs},      {"x1", f.endpoints.x1},
          {"y1", f.endpoints.y1},  {"x2", f.endpoints.x2},
          {"y2", f.endpoints.y2}};
}

inline ReplayFrame parse_replay_frame(const std::string& line,
                                      std::size_t index) {
  const auto fail = [&](const std::string& what) {
    return GuidanceError("replay line " + std::to_string(index) + ": " + what);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("probs") || !j["probs"].is_array() ||
      j["probs"].size() != kNumClasses) {
    throw fail("expected \"probs\" array of 5 numbers");
  }
  ReplayFrame f;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (!j["probs"][i].is_number()) throw fail("non-numeric probability");
    f.probs[i] = j["probs"][i].get<double>();
  }
  std::array<double, 4> c{};
  const char* keys[4] = {"x1", "y1", "x2", "y2"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j.contains(keys[i]) || !j[keys[i]].is_number()) {
      throw fail(std::string("missing numeric field '") + keys[i] + "'");
    }
    c[i] = j[keys[i]].get<double>();
  }
  f.endpoints = Endpoints::from(c);
  return f;
}

inline nlohmann::json to_json(const GuidanceOutput& o) {
  nlohmann::json j{{"light", to_string(o.light)},
                   {"announce", o.announce},
                   {"orientation", to_string(o.orientation)},
                   {"position", to_string(o.position)},
                   {"delta_theta", nullptr},
                   {"x_int", nullptr},
                   {"averaged_probs", o.averaged},
                   {"frames", o.frames}};
  if (o.angle_deg) j["delta_theta"] = *o.angle_deg;
  if (o.x_int) j["x_int"] = *o.x_int;
  return j;
}

}  // namespace lytnet
