#pragma once

// Run configuration: one INI document with a section per component. Every
// key is optional; defaults follow the reference training setup except the
// queue size and extrema range, which are scaled down for small corpora.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "coseg/boundary.hpp"
#include "coseg/data.hpp"
#include "coseg/embedding.hpp"
#include "coseg/optim.hpp"
#include "coseg/reconstruction.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

struct ModelShape {
  std::size_t input_dim = 32;
  std::size_t embed_dim = 16;
  std::size_t heads = 8;
  std::size_t layers = 2;
  std::size_t window = 10;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t videos_per_batch = 16;    // B
  std::size_t snippets_per_video = 2;   // X
  double alpha = 0.999;
  std::size_t queue_size = 4096;        // K
};

struct RunConfig {
  std::uint64_t seed = 7;
  ModelShape model;
  TrainConfig train;
  ContrastiveConfig contrastive;
  ReconstructionConfig reconstruction;
  Optimizer optimizer;
  DetectorConfig detector{10, 5, 5, 0};
  SynthConfig synth;
  std::string corpus_dir;
  std::string annotations_path;
  std::string detections_path;

  /// Pushes shared values (window, input width, seed) into the component
  /// configs and checks cross-field consistency.
  void finalize() {
    contrastive.window = model.window;
    reconstruction.window = model.window;
    reconstruction.heads = model.heads;
    reconstruction.layers = model.layers;
    detector.window = model.window;
    synth.feature_dim = model.input_dim;
    validate();
  }

  void validate() const {
    contrastive.validate();
    reconstruction.validate();
    optimizer.validate();
    detector.validate();
    if (model.embed_dim % 2 != 0) throw ConfigError("model.embed_dim must be even");
    if (model.embed_dim % model.heads != 0)
      throw ConfigError("model.embed_dim must be divisible by model.heads");
    if (!(train.alpha >= 0.0 && train.alpha <= 1.0)) throw ConfigError("train.alpha must lie in [0, 1]");
    if (detector.window != model.window || contrastive.window != model.window ||
        reconstruction.window != model.window)
      throw ConfigError("window length must agree across model, contrastive, reconstruction and detector");
    if (synth.feature_dim != model.input_dim)
      throw ConfigError("synth.feature_dim must equal model.input_dim");
  }
};

namespace detail {
template <class T>
void read_key(const boost::property_tree::ptree& tree, const std::string& key, T& dst) {
  if (auto v = tree.get_optional<std::string>(key)) {
    // istream wraps "-1" around for unsigned targets instead of failing.
    if constexpr (std::is_unsigned_v<T>) {
      if (v->find('-') != std::string::npos)
        throw ConfigError("bad value for " + key + ": '" + *v + "'");
    }
    std::istringstream is(*v);
    T parsed{};
    is >> parsed;
    if (!is || !(is >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + *v + "'");
    dst = parsed;
  }
}

inline void read_key(const boost::property_tree::ptree& tree, const std::string& key, std::string& dst) {
  if (auto v = tree.get_optional<std::string>(key)) dst = *v;
}
}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }

  static const std::map<std::string, std::set<std::string>> known = {
      {"run", {"seed"}},
      {"paths", {"corpus", "annotations", "detections"}},
      {"model", {"input_dim", "embed_dim", "heads", "layers", "window"}},
      {"contrastive", {"temperature", "alpha", "queue_size"}},
      {"reconstruction", {"mask_size", "beta"}},
      {"optimizer", {"learning_rate", "weight_decay", "momentum"}},
      {"train", {"steps", "videos_per_batch", "snippets_per_video"}},
      {"detect", {"fir_half_width", "extrema_range", "min_trajectory_len"}},
      {"synth",
       {"num_videos", "events_min", "events_max", "event_length_min", "event_length_max",
        "num_prototypes", "noise_std", "drift_std", "fps", "seed"}},
  };
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw ConfigError("unknown section [" + section + "]");
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + section + "' outside any section");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError("unknown key " + section + "." + key);
  }

  RunConfig c;
  using detail::read_key;
  read_key(tree, "run.seed", c.seed);
  c.synth.seed = c.seed;
  read_key(tree, "paths.corpus", c.corpus_dir);
  read_key(tree, "paths.annotations", c.annotations_path);
  read_key(tree, "paths.detections", c.detections_path);
  read_key(tree, "model.input_dim", c.model.input_dim);
  read_key(tree, "model.embed_dim", c.model.embed_dim);
  read_key(tree, "model.heads", c.model.heads);
  read_key(tree, "model.layers", c.model.layers);
  read_key(tree, "model.window", c.model.window);
  read_key(tree, "contrastive.temperature", c.contrastive.temperature);
  read_key(tree, "contrastive.alpha", c.train.alpha);
  read_key(tree, "contrastive.queue_size", c.train.queue_size);
  read_key(tree, "reconstruction.mask_size", c.reconstruction.mask_size);
  read_key(tree, "reconstruction.beta", c.reconstruction.beta);
  read_key(tree, "optimizer.learning_rate", c.optimizer.learning_rate);
  read_key(tree, "optimizer.weight_decay", c.optimizer.weight_decay);
  read_key(tree, "optimizer.momentum", c.optimizer.momentum);
  read_key(tree, "train.steps", c.train.steps);
  read_key(tree, "train.videos_per_batch", c.train.videos_per_batch);
  read_key(tree, "train.snippets_per_video", c.train.snippets_per_video);
  read_key(tree, "detect.fir_half_width", c.detector.fir_half_width);
  read_key(tree, "detect.extrema_range", c.detector.extrema_range);
  read_key(tree, "detect.min_trajectory_len", c.detector.min_trajectory_len);
  read_key(tree, "synth.num_videos", c.synth.num_videos);
  read_key(tree, "synth.events_min", c.synth.events_min);
  read_key(tree, "synth.events_max", c.synth.events_max);
  read_key(tree, "synth.event_length_min", c.synth.event_length_min);
  read_key(tree, "synth.event_length_max", c.synth.event_length_max);
  read_key(tree, "synth.num_prototypes", c.synth.num_prototypes);
  read_key(tree, "synth.noise_std", c.synth.noise_std);
  read_key(tree, "synth.drift_std", c.synth.drift_std);
  read_key(tree, "synth.fps", c.synth.fps);
  read_key(tree, "synth.seed", c.synth.seed);
  c.finalize();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace coseg
