// coseg: synthesize feature corpora, train, detect event boundaries, score.
//
//   coseg synth  --config run.ini --out DIR
//   coseg train  --config run.ini --out DIR
//   coseg detect --config run.ini --out DIR [--checkpoint PATH] [--dump-trajectory]
//   coseg eval   --out DIR [--thresholds 0.05,0.1,...]
//
// On failure exactly one line is printed to stderr:
//   error: <category>: <message>

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "coseg/coseg.hpp"

namespace {

std::vector<double> parse_thresholds(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v > 0.0 && v <= 1.0)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw coseg::ConfigError("bad threshold '" + item + "' (expected numbers in (0, 1])");
    }
  }
  if (out.empty()) throw coseg::ConfigError("--thresholds is empty");
  return out;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised event boundary detection on frame-feature sequences"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  coseg::CommandPaths paths;
  std::string thresholds = "0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI run configuration");
    sub->add_option("--seed", seed, "override run.seed");
    sub->add_option("--out", paths.out_dir, "output directory")->capture_default_str();
    sub->add_option("--corpus", paths.corpus_dir, "feature directory (default <out>/features)");
    sub->add_option("--annotations", paths.annotations_path,
                    "annotation JSON (default <out>/annotations.json)");
  };
  auto* synth = app.add_subcommand("synth", "write a synthetic feature corpus and annotations");
  common(synth);
  auto* train = app.add_subcommand("train", "train the model; writes losses.csv and a checkpoint");
  common(train);
  train->add_option("--checkpoint", paths.checkpoint_path, "checkpoint path (default <out>/checkpoint.csgc)");
  auto* detect = app.add_subcommand("detect", "detect boundaries for every corpus video");
  common(detect);
  detect->add_option("--checkpoint", paths.checkpoint_path, "checkpoint path (default <out>/checkpoint.csgc)");
  detect->add_option("--detections", paths.detections_path, "output JSON (default <out>/detections.json)");
  detect->add_flag("--dump-trajectory", paths.dump_trajectory,
                   "write per-frame E/S/G to <out>/trajectories/<video>.csv");
  auto* eval = app.add_subcommand("eval", "score detections; writes report.json and report.txt");
  common(eval);
  eval->add_option("--detections", paths.detections_path, "detections JSON (default <out>/detections.json)");
  eval->add_option("--thresholds", thresholds, "comma-separated Rel.Dis thresholds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    coseg::RunConfig cfg = config_path.empty() ? coseg::RunConfig{} : coseg::load_run_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.synth.seed = *seed;
    }
    cfg.finalize();
    if (paths.corpus_dir.empty()) paths.corpus_dir = cfg.corpus_dir;
    if (paths.annotations_path.empty()) paths.annotations_path = cfg.annotations_path;
    if (paths.detections_path.empty()) paths.detections_path = cfg.detections_path;

    if (synth->parsed()) {
      const auto n = coseg::cmd_synth(cfg, paths);
      std::cout << "wrote " << n << " videos to " << paths.corpus() << '\n';
    } else if (train->parsed()) {
      const auto log = coseg::cmd_train(cfg, paths);
      if (!log.steps.empty()) {
        std::cout << "steps " << log.steps.size() << ": joint loss " << log.steps.front().joint
                  << " -> " << log.steps.back().joint << '\n';
      }
      std::cout << "checkpoint " << paths.checkpoint() << '\n';
    } else if (detect->parsed()) {
      const auto dets = coseg::cmd_detect(cfg, paths);
      std::size_t total = 0;
      for (const auto& d : dets) total += d.boundaries.size();
      std::cout << total << " boundaries in " << dets.size() << " videos -> " << paths.detections() << '\n';
    } else if (eval->parsed()) {
      const auto report = coseg::cmd_eval(paths, parse_thresholds(thresholds));
      std::cout << coseg::report_to_table(report);
    }
  } catch (const coseg::Error& e) {
    std::cerr << "error: " << coseg::category_name(e.category()) << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
