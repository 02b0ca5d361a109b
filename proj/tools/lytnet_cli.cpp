// Command-line front end: train, infer, eval, guide-replay, transform,
// bench and synth.
//
// Exit status: 0 on success, 2 when an input file cannot be opened, 1 for
// any other error. Log verbosity comes from LYTNET_LOG (quiet, info, debug).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lytnet/dataset.hpp"
#include "lytnet/evaluation.hpp"
#include "lytnet/geometry.hpp"
#include "lytnet/guidance.hpp"
#include "lytnet/network.hpp"
#include "lytnet/synthetic.hpp"
#include "lytnet/training.hpp"
#include "lytnet/weights_io.hpp"

namespace fs = std::filesystem;
using namespace lytnet;

namespace {

// An input that could not be read at all; maps to exit status 2.
class InputMissing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { quiet, info, debug };

LogLevel log_level() {
  const char* env = std::getenv("LYTNET_LOG");
  if (!env) return LogLevel::info;
  const std::string v(env);
  if (v == "quiet" || v == "0") return LogLevel::quiet;
  if (v == "debug" || v == "2") return LogLevel::debug;
  return LogLevel::info;
}

void log(LogLevel level, const std::string& msg) {
  if (level <= log_level()) std::cerr << "[lytnet] " << msg << '\n';
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw std::invalid_argument(std::string(what) + " path required");
  if (!fs::is_regular_file(path)) {
    throw InputMissing(std::string("cannot open ") + what + " '" + path + "'");
  }
}

// "HxW" with both extents divisible by 64.
std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw std::invalid_argument("input size must be HxW");
  try {
    return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw std::invalid_argument("input size must be HxW, got '" + text + "'");
  }
}

Point2 parse_point(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("point must be x,y");
  try {
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw std::invalid_argument("point must be x,y, got '" + text + "'");
  }
}

std::ofstream open_output(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--out is required");
  if (const auto parent = fs::path(path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  return os;
}

Homography homography_from(const std::string& path) {
  if (path.empty()) return Homography::birdseye_default();
  require_file(path, "homography");
  return load_homography(path);
}

// Options shared by the network-facing subcommands.
struct NetOptions {
  double alpha = 1.0;
  std::string input_size = "576x768";
  std::uint64_t seed = 0;

  NetworkConfig config() const {
    NetworkConfig cfg;
    cfg.width_multiplier = alpha;
    std::tie(cfg.input_height, cfg.input_width) = parse_size(input_size);
    cfg.validate();
    return cfg;
  }
};

void add_net_options(CLI::App* cmd, NetOptions& o) {
  cmd->add_option("--alpha", o.alpha, "width multiplier")->capture_default_str();
  cmd->add_option("--input-size", o.input_size, "network input HxW")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "random seed")->capture_default_str();
}

Lytnet<float> load_network(const NetOptions& o, const std::string& weights) {
  require_file(weights, "weights");
  auto net = build_lytnet<float>(o.config(), o.seed);
  load_weights(weights, net.parameters());
  return net;
}

std::vector<ManifestRecord> load_manifest(const std::string& path) {
  require_file(path, "manifest");
  return read_manifest(path);
}

// Frames are loaded slightly larger than the network input so that random
// crops have room to move; the margin keeps the 768/876 ratio of the
// full-size augmentation.
std::pair<std::size_t, std::size_t> load_size(const NetworkConfig& cfg) {
  auto grow = [](std::size_t v, double num, double den) {
    return static_cast<std::size_t>(std::lround(v * num / den));
  };
  return {grow(cfg.input_height, 657, 576), grow(cfg.input_width, 876, 768)};
}

// ---- train -------------------------------------------------------------------

struct TrainOptions {
  NetOptions net;
  std::string manifest, out = "lytnet.lytw", log_path;
  std::size_t epochs = 800, batch = 8, eval_interval = 0, checkpoint = 0;
  double omega = 0.5, lambda = 1e-5;
  bool no_augment = false;
};

int cmd_train(const TrainOptions& o) {
  const auto records = load_manifest(o.manifest);
  TrainConfig cfg;
  cfg.network = o.net.config();
  cfg.seed = o.net.seed;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.omega = o.omega;
  cfg.lambda = o.lambda;
  cfg.augment = !o.no_augment;
  cfg.evaluate_interval = o.eval_interval;
  if (o.checkpoint) {
    cfg.checkpoint_interval = o.checkpoint;
    cfg.checkpoint_path = o.out + ".ckpt";
  }
  const auto [h, w] = cfg.augment ? load_size(cfg.network)
                                  : std::pair{cfg.network.input_height,
                                              cfg.network.input_width};
  const auto frames =
      load_frames(records, fs::path(o.manifest).parent_path(), h, w);
  log(LogLevel::info, "training on " + std::to_string(frames.size()) +
                          " frames for " + std::to_string(cfg.epochs) + " epochs");

  auto metrics = open_output(o.log_path.empty() ? o.out + ".metrics.jsonl" : o.log_path);
  const auto result = train(frames, cfg, [&](const EpochMetrics& m) {
    metrics << to_json(m).dump() << '\n';
    if (log_level() == LogLevel::debug || (m.epoch + 1) % 10 == 0 ||
        m.epoch + 1 == cfg.epochs) {
      std::ostringstream os;
      os << "epoch " << m.epoch + 1 << " loss " << m.loss << " acc " << m.accuracy;
      if (m.eval_accuracy) os << " eval_acc " << *m.eval_accuracy;
      log(LogLevel::info, os.str());
    }
  });
  auto out = open_output(o.out);
  write_weights(out, to_stored(result.network.parameters()));
  log(LogLevel::info, "wrote " + o.out);
  return 0;
}

// ---- infer -------------------------------------------------------------------

struct InferOptions {
  NetOptions net;
  std::string weights;
  std::vector<std::string> images;
  std::size_t batch = 8;
};

int cmd_infer(const InferOptions& o) {
  const auto net = load_network(o.net, o.weights);
  const auto& cfg = net.config();
  for (const auto& p : o.images) require_file(p, "image");
  for (std::size_t start = 0; start < o.images.size(); start += o.batch) {
    const std::size_t end = std::min(o.images.size(), start + o.batch);
    std::vector<Tensor<float>> parts;
    for (std::size_t i = start; i < end; ++i) {
      auto img = resize_bilinear(read_ppm(o.images[i]), cfg.input_height,
                                 cfg.input_width);
      parts.push_back(img.reshaped({1, 3, cfg.input_height, cfg.input_width}));
    }
    const auto out = net.infer(concat_batch<float>(parts));
    const auto probs = softmax(out.logits.cast<double>());
    for (std::size_t b = 0; b < end - start; ++b) {
      std::vector<double> pr(kNumClasses);
      for (std::size_t c = 0; c < kNumClasses; ++c) pr[c] = probs[b * kNumClasses + c];
      nlohmann::json j{{"path", o.images[start + b]}, {"probs", pr}};
      const char* keys[4] = {"x1", "y1", "x2", "y2"};
      for (std::size_t k = 0; k < 4; ++k)
        j[keys[k]] = static_cast<double>(out.endpoints[b * 4 + k]);
      std::cout << j.dump() << '\n';
    }
  }
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalOptions {
  NetOptions net;
  std::string records, manifest, weights, format = "text";
};

int cmd_eval(const EvalOptions& o) {
  std::vector<EvalRecord> records;
  if (!o.records.empty()) {
    require_file(o.records, "records");
    std::ifstream is(o.records);
    std::string line;
    for (std::size_t index = 1; std::getline(is, line); ++index)
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        records.push_back(parse_eval_record(line, index));
  } else {
    const auto manifest = load_manifest(o.manifest);
    const auto net = load_network(o.net, o.weights);
    const auto& cfg = net.config();
    const auto frames = load_frames(manifest, fs::path(o.manifest).parent_path(),
                                    cfg.input_height, cfg.input_width);
    for (const auto& f : frames) {
      const auto out = net.infer(stack_images(std::span(&f, 1)));
      std::array<double, 4> e{};
      for (std::size_t k = 0; k < 4; ++k) e[k] = out.endpoints[k];
      records.push_back({static_cast<LightClass>(argmax_row(out.logits, 0)), f.label,
                         Endpoints::from(e), f.endpoints, false});
    }
  }
  std::cout << report(records, o.format);
  return 0;
}

// ---- guide-replay ------------------------------------------------------------

struct ReplayOptions {
  std::string input = "-", homography;
};

int cmd_guide_replay(const ReplayOptions& o) {
  GuidanceConfig cfg;
  cfg.homography = homography_from(o.homography);
  GuidanceState state(cfg);
  std::ifstream file;
  if (o.input != "-") {
    require_file(o.input, "replay");
    file.open(o.input);
  }
  std::istream& is = o.input == "-" ? std::cin : file;
  std::string line;
  for (std::size_t index = 1; std::getline(is, line); ++index) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto frame = parse_replay_frame(line, index);
    const auto out = state.push_frame(frame.probs, frame.endpoints);
    std::cout << to_json(out).dump() << '\n';
  }
  return 0;
}

// ---- transform ---------------------------------------------------------------

struct TransformOptions {
  std::vector<std::string> points;
  std::string homography;
  bool inverse = false;
};

int cmd_transform(const TransformOptions& o) {
  auto h = homography_from(o.homography);
  if (o.inverse) h = h.inverse();
  for (const auto& text : o.points) {
    const auto p = apply_homography(h, parse_point(text));
    std::printf("%.4f,%.4f\n", p.x, p.y);
  }
  return 0;
}

// ---- bench -------------------------------------------------------------------

struct BenchOptions {
  std::vector<double> alphas{1.4, 1.25, 1.0, 0.9375, 0.875, 0.75, 0.5};
  std::string input_size = "576x768", format = "text";
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchOptions& o) {
  const auto [h, w] = parse_size(o.input_size);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> x({1, 3, h, w});
  for (auto& v : x.data()) v = u(rng);

  nlohmann::json rows = nlohmann::json::array();
  for (double alpha : o.alphas) {
    if (!(alpha > 0)) throw std::invalid_argument("width multipliers must be positive");
    NetworkConfig cfg;
    cfg.width_multiplier = alpha;
    cfg.input_height = h;
    cfg.input_width = w;
    const auto net = build_lytnet<float>(cfg, o.seed);
    net.infer(x);  // warm-up
    double best = 1e300;
    for (std::size_t r = 0; r < std::max<std::size_t>(o.repeats, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      net.infer(x);
      best = std::min(best, std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0).count());
    }
    rows.push_back({{"alpha", alpha}, {"macs", net.count_flops()},
                    {"images_per_sec", 1.0 / best}});
  }
  if (o.format == "json") {
    std::cout << rows.dump(2) << '\n';
  } else if (o.format == "text") {
    std::printf("%8s %16s %14s\n", "alpha", "MACs", "images/sec");
    for (const auto& r : rows)
      std::printf("%8.4f %16llu %14.3f\n", r["alpha"].get<double>(),
                  static_cast<unsigned long long>(r["macs"].get<std::uint64_t>()),
                  r["images_per_sec"].get<double>());
  } else {
    throw std::invalid_argument("unknown format '" + o.format + "'");
  }
  return 0;
}

// ---- synth -------------------------------------------------------------------

struct SynthOptions {
  std::size_t count = 40;
  std::uint64_t seed = 0;
  std::string size = "146x146", out = "synthetic";
};

int cmd_synth(const SynthOptions& o) {
  const auto [h, w] = parse_size(o.size);
  const auto frames = make_synthetic_dataset(o.count, o.seed, h, w);
  fs::create_directories(o.out);
  std::vector<ManifestRecord> records;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.ppm", i);
    write_ppm((fs::path(o.out) / name).string(), frames[i].image);
    records.push_back({name, frames[i].label, frames[i].endpoints,
                       frames[i].has_crossing});
  }
  auto os = open_output((fs::path(o.out) / "manifest.jsonl").string());
  write_manifest(os, records);
  log(LogLevel::info, "wrote " + std::to_string(records.size()) + " frames to " + o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pedestrian traffic light and crossing guidance network"};
  app.require_subcommand(1);

  TrainOptions train_o;
  auto* train_cmd = app.add_subcommand("train", "train on a labeled manifest");
  add_net_options(train_cmd, train_o.net);
  train_cmd->add_option("--manifest", train_o.manifest, "JSONL manifest")->required();
  train_cmd->add_option("--out", train_o.out, "weights output")->capture_default_str();
  train_cmd->add_option("--log", train_o.log_path, "JSONL metrics log (default <out>.metrics.jsonl)");
  train_cmd->add_option("--epochs", train_o.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", train_o.batch)->capture_default_str();
  train_cmd->add_option("--omega", train_o.omega, "regression weight")->capture_default_str();
  train_cmd->add_option("--lambda", train_o.lambda, "L2 weight")->capture_default_str();
  train_cmd->add_option("--eval-interval", train_o.eval_interval,
                        "inference-mode evaluation every N epochs (0 = off)");
  train_cmd->add_option("--checkpoint-interval", train_o.checkpoint);
  train_cmd->add_flag("--no-augment", train_o.no_augment);

  InferOptions infer_o;
  auto* infer_cmd = app.add_subcommand("infer", "classify images, print JSONL");
  add_net_options(infer_cmd, infer_o.net);
  infer_cmd->add_option("--weights", infer_o.weights)->required();
  infer_cmd->add_option("--batch-size", infer_o.batch)->capture_default_str();
  infer_cmd->add_option("images", infer_o.images, "PPM images")->required();

  EvalOptions eval_o;
  auto* eval_cmd = app.add_subcommand("eval", "metrics report");
  add_net_options(eval_cmd, eval_o.net);
  auto* rec_opt = eval_cmd->add_option("--records", eval_o.records,
                                       "JSONL of predicted/true records");
  auto* man_opt = eval_cmd->add_option("--manifest", eval_o.manifest,
                                       "manifest to run the network on");
  eval_cmd->add_option("--weights", eval_o.weights);
  eval_cmd->add_option("--format", eval_o.format)
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();
  rec_opt->excludes(man_opt);

  ReplayOptions replay_o;
  auto* replay_cmd = app.add_subcommand("guide-replay", "run the guidance state machine");
  replay_cmd->add_option("input", replay_o.input, "JSONL frames ('-' for stdin)");
  replay_cmd->add_option("--homography", replay_o.homography, "3x3 matrix file");

  TransformOptions transform_o;
  auto* transform_cmd = app.add_subcommand("transform", "map image points to bird's-eye");
  transform_cmd->add_option("points", transform_o.points, "x,y")->required();
  transform_cmd->add_option("--homography", transform_o.homography, "3x3 matrix file");
  transform_cmd->add_flag("--inverse", transform_o.inverse);

  BenchOptions bench_o;
  auto* bench_cmd = app.add_subcommand("bench", "cost and throughput per width");
  bench_cmd->add_option("--alpha", bench_o.alphas, "width multipliers")->capture_default_str();
  bench_cmd->add_option("--input-size", bench_o.input_size)->capture_default_str();
  bench_cmd->add_option("--repeats", bench_o.repeats)->capture_default_str();
  bench_cmd->add_option("--seed", bench_o.seed);
  bench_cmd->add_option("--format", bench_o.format)
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();

  SynthOptions synth_o;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic labeled dataset");
  synth_cmd->add_option("--count", synth_o.count)->capture_default_str();
  synth_cmd->add_option("--seed", synth_o.seed)->capture_default_str();
  synth_cmd->add_option("--size", synth_o.size, "image HxW")->capture_default_str();
  synth_cmd->add_option("--out", synth_o.out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train_o);
    if (*infer_cmd) return cmd_infer(infer_o);
    if (*eval_cmd) return cmd_eval(eval_o);
    if (*replay_cmd) return cmd_guide_replay(replay_o);
    if (*transform_cmd) return cmd_transform(transform_o);
    if (*bench_cmd) return cmd_bench(bench_o);
    if (*synth_cmd) return cmd_synth(synth_o);
  } catch (const InputMissing& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
