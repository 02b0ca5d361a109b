#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lytnet/dataset.hpp"
#include "lytnet/network.hpp"

namespace lytnet {

struct EvalRecord {
  LightClass predicted = LightClass::none;
  LightClass truth = LightClass::none;
  Endpoints predicted_endpoints;
  Endpoints true_endpoints;
  bool obstructed = false;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

/// One-vs-rest counts and scores. Undefined ratios (zero denominators) are
/// absent rather than zero.
struct ClassMetrics {
  std::size_t support = 0;    // records whose true class is this one
  std::size_t predicted = 0;  // records predicted as this class
  std::size_t true_positive = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

/// Rows are true classes, columns predictions.
inline ConfusionMatrix confusion_matrix(std::span<const EvalRecord> records) {
  ConfusionMatrix m{};
  for (const auto& r : records)
    ++m[static_cast<std::size_t>(r.truth)][static_cast<std::size_t>(r.predicted)];
  return m;
}

inline std::array<ClassMetrics, kNumClasses> precision_recall_f1(
    std::span<const EvalRecord> records) {
  if (records.empty()) throw EvalError("precision_recall_f1: no records");
  const auto m = confusion_matrix(records);
  std::array<ClassMetrics, kNumClasses> out{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& cm = out[c];
    cm.true_positive = m[c][c];
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      cm.support += m[c][o];
      cm.predicted += m[o][c];
    }
    if (cm.predicted) cm.precision = double(cm.true_positive) / double(cm.predicted);
    if (cm.support) cm.recall = double(cm.true_positive) / double(cm.support);
    if (cm.precision && cm.recall) cm.f1 = f1_score(*cm.precision, *cm.recall);
  }
  return out;
}

inline double accuracy(std::span<const EvalRecord> records) {
  if (records.empty()) throw EvalError("accuracy: no records");
  const auto m = confusion_matrix(records);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) trace += m[c][c];
  return double(trace) / double(records.size());
}

/// Unsigned angle in [0, 90] degrees between two midlines treated as
/// undirected lines, measured in normalized image coordinates.
inline double angle_error(const Endpoints& predicted, const Endpoints& truth) {
  const double px = predicted.x2 - predicted.x1, py = predicted.y2 - predicted.y1;
  const double tx = truth.x2 - truth.x1, ty = truth.y2 - truth.y1;
  const double pn = std::hypot(px, py), tn = std::hypot(tx, ty);
  if (pn == 0.0 || tn == 0.0) throw EvalError("angle_error: zero-length midline");
  const double cosine = std::min(1.0, std::abs(px * tx + py * ty) / (pn * tn));
  return std::acos(cosine) * 180.0 / std::numbers::pi;
}

struct EndpointErrors {
  double start = 0;
  double end = 0;
};

/// Euclidean distances between predicted and true start points and end
/// points, in normalized units.
inline EndpointErrors endpoint_errors(const Endpoints& predicted,
                                      const Endpoints& truth) {
  return {std::hypot(predicted.x1 - truth.x1, predicted.y1 - truth.y1),
          std::hypot(predicted.x2 - truth.x2, predicted.y2 - truth.y2)};
}

struct SubsetSummary {
  std::string name;
  std::size_t count = 0;
  double accuracy = 0;
  double angle_error = 0;
  double start_error = 0;
  double end_error = 0;
};

/// Means over a subset, accumulated in record order.
inline SubsetSummary summarize(std::string name,
                               std::span<const EvalRecord> records) {
  SubsetSummary s;
  s.name = std::move(name);
  s.count = records.size();
  if (records.empty()) return s;
  s.accuracy = accuracy(records);
  for (const auto& r : records) {
    s.angle_error += angle_error(r.predicted_endpoints, r.true_endpoints);
    const auto e = endpoint_errors(r.predicted_endpoints, r.true_endpoints);
    s.start_error += e.start;
    s.end_error += e.end;
  }
  const double n = static_cast<double>(records.size());
  s.angle_error /= n;
  s.start_error /= n;
  s.end_error /= n;
  return s;
}

struct EvalReport {
  std::vector<SubsetSummary> subsets;  // clear, obstructed, all (non-empty)
  std::vector<std::string> notes;
  std::array<ClassMetrics, kNumClasses> per_class{};
};

inline EvalReport build_report(std::span<const EvalRecord> records) {
  if (records.empty()) throw EvalError("report: no records");
  std::vector<EvalRecord> clear, obstructed;
  for (const auto& r : records) (r.obstructed ? obstructed : clear).push_back(r);
  EvalReport rep;
  for (auto& [name, subset] :
       {std::pair<const char*, const std::vector<EvalRecord>*>{"clear", &clear},
        {"obstructed", &obstructed}}) {
    if (subset->empty()) {
      rep.notes.push_back(std::string("no ") + name + " records; row omitted");
      continue;
    }
    rep.subsets.push_back(summarize(name, *subset));
  }
  rep.subsets.push_back(summarize("all", records));
  rep.per_class = precision_recall_f1(records);
  return rep;
}

namespace detail {
inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
inline double rounded(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}
}  // namespace detail

/// Display precision: two decimals for percentages and degrees, four for
/// normalized errors and per-class ratios. Text and JSON share the rounding.
inline nlohmann::json report_json(const EvalReport& rep) {
  using detail::rounded;
  nlohmann::json j;
  j["subsets"] = nlohmann::json::array();
  for (const auto& s : rep.subsets) {
    j["subsets"].push_back({{"name", s.name},
                            {"count", s.count},
                            {"accuracy_pct", rounded(100.0 * s.accuracy, 2)},
                            {"angle_error_deg", rounded(s.angle_error, 2)},
                            {"start_error", rounded(s.start_error, 4)},
                            {"end_error", rounded(s.end_error, 4)}});
  }
  j["per_class"] = nlohmann::json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& m = rep.per_class[c];
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
      return v ? nlohmann::json(rounded(*v, 4)) : nlohmann::json(nullptr);
    };
    j["per_class"].push_back({{"class", kClassNames[c]},
                              {"support", m.support},
                              {"precision", opt(m.precision)},
                              {"recall", opt(m.recall)},
                              {"f1", opt(m.f1)}});
  }
  j["notes"] = rep.notes;
  return j;
}

inline std::string report_text(const EvalReport& rep) {
  using detail::fixed;
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %7s %12s %12s %12s %12s\n", "subset",
                "count", "accuracy(%)", "angle(deg)", "start err", "end err");
  os << line;
  for (const auto& s : rep.subsets) {
    std::snprintf(line, sizeof line, "%-12s %7zu %12s %12s %12s %12s\n",
                  s.name.c_str(), s.count, fixed(100.0 * s.accuracy, 2).c_str(),
                  fixed(s.angle_error, 2).c_str(),
                  fixed(s.start_error, 4).c_str(), fixed(s.end_error, 4).c_str());
    os << line;
  }
  os << '\n';
  std::snprintf(line, sizeof line, "%-16s %8s %10s %10s %10s\n", "class",
                "support", "precision", "recall", "f1");
  os << line;
  auto opt = [](const std::optional<double>& v) {
    return v ? fixed(*v, 4) : std::string("n/a");
  };
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& m = rep.per_class[c];
    std::snprintf(line, sizeof line, "%-16s %8zu %10s %10s %10s\n",
                  kClassNames[c], m.support, opt(m.precision).c_str(),
                  opt(m.recall).c_str(), opt(m.f1).c_str());
    os << line;
  }
  for (const auto& n : rep.notes) os << "note: " << n << '\n';
  return os.str();
}

/// Renders the report as "text" or "json".
inline std::string report(std::span<const EvalRecord> records,
                          const std::string& format) {
  if (format != "text" && format != "json") {
    throw EvalError("unknown report format '" + format + "'");
  }
  const auto rep = build_report(records);
  return format == "json" ? report_json(rep).dump(2) + "\n" : report_text(rep);
}

// ---- JSONL records -----------------------------------------------------------

inline nlohmann::json to_json(const EvalRecord& r) {
  return {{"pred_class", class_name(r.predicted)},
          {"true_class", class_name(r.truth)},
          {"pred", r.predicted_endpoints.as_array()},
          {"true", r.true_endpoints.as_array()},
          {"obstructed", r.obstructed}};
}

inline EvalRecord parse_eval_record(const std::string& line, std::size_t index) {
  const auto fail = [&](const std::string& what) {
    return EvalError("eval record " + std::to_string(index) + ": " + what);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("invalid JSON: ") + e.what());
  }
  EvalRecord r;
  auto cls = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw fail(std::string("missing class field '") + key + "'");
    }
    auto c = parse_class(j[key].get<std::string>());
    if (!c) throw fail("unknown class '" + j[key].get<std::string>() + "'");
    return *c;
  };
  auto pts = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 4) {
      throw fail(std::string("field '") + key + "' must be 4 numbers");
    }
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!j[key][i].is_number()) throw fail("non-numeric coordinate");
      v[i] = j[key][i].get<double>();
    }
    return Endpoints::from(v);
  };
  r.predicted = cls("pred_class");
  r.truth = cls("true_class");
  r.predicted_endpoints = pts("pred");
  r.true_endpoints = pts("true");
  if (j.contains("obstructed")) {
    if (!j["obstructed"].is_boolean()) throw fail("'obstructed' must be boolean");
    r.obstructed = j["obstructed"].get<bool>();
  }
  return r;
}

}  // namespace lytnet
