#pragma once

// Feature-sequence ingestion, annotation I/O and the seeded synthetic event
// stream generator.
//
// Boundary convention used throughout the library: boundary index b is the
// first frame of the new event.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coseg/binary_io.hpp"
#include "coseg/tensor.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

struct FrameFeatureSequence {
  std::string video_id;
  float fps = 30.0f;
  Tensor features;  // [num_frames × dim]

  std::size_t num_frames() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
};

/// Ground truth or detections for one video. Detections carry one score per
/// boundary; annotations leave `scores` empty.
struct Annotation {
  std::string video_id;
  std::size_t num_frames = 0;
  double fps = 30.0;
  std::vector<std::size_t> boundaries;
  std::optional<std::vector<double>> scores;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Sorted boundary frame indices of one video.
struct BoundarySet {
  std::string video_id;
  std::size_t num_frames = 0;
  std::vector<std::size_t> frames;

  /// Throws unless frames are strictly increasing and inside [0, num_frames).
  void validate() const {
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i] >= num_frames)
        throw DataError("boundary set " + video_id + ": frame " + std::to_string(frames[i]) +
                        " out of range");
      if (i > 0 && frames[i] <= frames[i - 1])
        throw DataError("boundary set " + video_id + ": frames not strictly increasing");
    }
  }

  static BoundarySet from_annotation(const Annotation& a) {
    return {a.video_id, a.num_frames, a.boundaries};
  }
};

// ---------------------------------------------------------------------------
// CSGF feature files: "CSGF" | u16 version=1 | u32 dim | u32 num_frames |
// f32 fps | num_frames × dim f32, row-major, little-endian.

inline constexpr char kFeatureMagic[] = "CSGF";
inline constexpr std::uint16_t kFeatureVersion = 1;

inline std::vector<std::uint8_t> encode_features(const FrameFeatureSequence& seq) {
  ByteWriter w;
  w.bytes({kFeatureMagic, 4});
  w.u16(kFeatureVersion);
  w.u32(std::uint32_t(seq.dim()));
  w.u32(std::uint32_t(seq.num_frames()));
  w.f32(seq.fps);
  for (real v : seq.features.data()) w.f32(float(v));
  return w.take();
}

inline FrameFeatureSequence decode_features(const std::vector<std::uint8_t>& bytes,
                                            std::string video_id) {
  ByteReader r(bytes, "feature file " + video_id);
  if (r.bytes(4) != std::string_view(kFeatureMagic, 4))
    throw FormatError(FormatError::Kind::bad_magic, "feature file " + video_id + ": bad magic");
  if (auto v = r.u16(); v != kFeatureVersion)
    throw FormatError(FormatError::Kind::bad_version,
                      "feature file " + video_id + ": unsupported version " + std::to_string(v));
  const std::uint32_t dim = r.u32();
  const std::uint32_t frames = r.u32();
  FrameFeatureSequence seq;
  seq.video_id = std::move(video_id);
  seq.fps = r.f32();
  const std::size_t n = std::size_t(dim) * frames;
  r.need(n * 4);
  std::vector<real> data(n);
  for (auto& v : data) v = r.f32();
  if (!r.at_end())
    throw FormatError(FormatError::Kind::schema,
                      "feature file " + seq.video_id + ": payload larger than declared frame count");
  seq.features = Tensor({frames, dim}, std::move(data));
  if (frames == 0)
    throw DataError("feature file " + seq.video_id + ": sequence has no frames");
  if (!seq.features.all_finite())
    throw DataError("feature file " + seq.video_id + ": non-finite feature value");
  return seq;
}

inline void save_feature_file(const FrameFeatureSequence& seq, const std::string& path) {
  write_file_bytes(path, encode_features(seq));
}

/// The video id is the file stem.
inline FrameFeatureSequence load_feature_file(const std::string& path) {
  return decode_features(read_file_bytes(path), std::filesystem::path(path).stem().string());
}

/// Every *.csgf file in `dir`, ordered by file name.
inline std::vector<FrameFeatureSequence> load_corpus(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csgf") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<FrameFeatureSequence> corpus;
  corpus.reserve(files.size());
  for (const auto& f : files) corpus.push_back(load_feature_file(f.string()));
  return corpus;
}

// ---------------------------------------------------------------------------
// Annotation JSON.

inline void validate_annotation(const Annotation& a, const std::string& where) {
  for (std::size_t i = 0; i < a.boundaries.size(); ++i) {
    if (a.boundaries[i] >= a.num_frames) {
      throw FormatError(FormatError::Kind::schema,
                        where + ".boundaries[" + std::to_string(i) + "]: index " +
                            std::to_string(a.boundaries[i]) + " >= num_frames " +
                            std::to_string(a.num_frames));
    }
    if (i > 0 && a.boundaries[i] <= a.boundaries[i - 1]) {
      throw FormatError(FormatError::Kind::schema, where + ".boundaries[" + std::to_string(i) +
                                                       "]: boundaries must be strictly increasing");
    }
  }
  if (a.scores && a.scores->size() != a.boundaries.size()) {
    throw FormatError(FormatError::Kind::schema,
                      where + ".scores: expected " + std::to_string(a.boundaries.size()) +
                          " entries, got " + std::to_string(a.scores->size()));
  }
}

inline nlohmann::ordered_json annotation_to_json(const Annotation& a) {
  nlohmann::ordered_json j;
  j["video_id"] = a.video_id;
  j["num_frames"] = a.num_frames;
  j["fps"] = a.fps;
  j["boundaries"] = a.boundaries;
  if (a.scores) j["scores"] = *a.scores;
  return j;
}

inline Annotation annotation_from_json(const nlohmann::json& j, const std::string& where) {
  auto fail = [&](const std::string& field, const std::string& msg) {
    return FormatError(FormatError::Kind::schema, where + "." + field + ": " + msg);
  };
  if (!j.is_object()) throw FormatError(FormatError::Kind::schema, where + ": expected an object");
  Annotation a;
  if (!j.contains("video_id") || !j["video_id"].is_string())
    throw fail("video_id", "missing or not a string");
  a.video_id = j["video_id"].get<std::string>();
  if (!j.contains("num_frames") || !j["num_frames"].is_number_unsigned())
    throw fail("num_frames", "missing or not a non-negative integer");
  a.num_frames = j["num_frames"].get<std::size_t>();
  if (!j.contains("fps") || !j["fps"].is_number()) throw fail("fps", "missing or not a number");
  a.fps = j["fps"].get<double>();
  if (!j.contains("boundaries") || !j["boundaries"].is_array())
    throw fail("boundaries", "missing or not an array");
  const auto& bs = j["boundaries"];
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (!bs[i].is_number_unsigned())
      throw fail("boundaries[" + std::to_string(i) + "]", "not a non-negative integer");
    a.boundaries.push_back(bs[i].get<std::size_t>());
  }
  if (j.contains("scores")) {
    if (!j["scores"].is_array()) throw fail("scores", "not an array");
    std::vector<double> scores;
    for (std::size_t i = 0; i < j["scores"].size(); ++i) {
      if (!j["scores"][i].is_number())
        throw fail("scores[" + std::to_string(i) + "]", "not a number");
      scores.push_back(j["scores"][i].get<double>());
    }
    a.scores = std::move(scores);
  }
  validate_annotation(a, where);
  return a;
}

/// Serialized form of a list of annotations: a JSON array of objects.
inline std::string dump_annotations(const std::vector<Annotation>& list) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& a : list) arr.push_back(annotation_to_json(a));
  return arr.dump(2) + "\n";
}

/// Accepts a single annotation object or an array of them.
inline std::vector<Annotation> parse_annotations(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(FormatError::Kind::schema, std::string("annotations: ") + e.what());
  }
  std::vector<Annotation> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i)
      out.push_back(annotation_from_json(j[i], "annotations[" + std::to_string(i) + "]"));
  } else {
    out.push_back(annotation_from_json(j, "annotation"));
  }
  return out;
}

inline void save_annotations(const std::vector<Annotation>& list, const std::string& path) {
  const std::string text = dump_annotations(list);
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::vector<Annotation> load_annotations(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_annotations(std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------
// Synthetic event streams.

struct SynthConfig {
  std::size_t num_videos = 32;
  std::size_t events_min = 3;
  std::size_t events_max = 5;
  std::size_t event_length_min = 30;
  std::size_t event_length_max = 60;
  std::size_t feature_dim = 32;
  std::size_t num_prototypes = 16;
  double noise_std = 0.1;
  double drift_std = 0.02;
  double fps = 30.0;
  std::uint64_t seed = 7;

  /// `window` is the snippet length the corpus will be used with.
  void validate(std::size_t window = 1) const {
    if (events_min < 1 || events_min > events_max)
      throw ConfigError("synth: events range must satisfy 1 <= min <= max");
    if (event_length_min > event_length_max)
      throw ConfigError("synth: event_length range must satisfy min <= max");
    if (event_length_min < std::max<std::size_t>(window, 1))
      throw ConfigError("synth: event_length_min must be >= window length " +
                        std::to_string(window));
    if (num_prototypes < 2) throw ConfigError("synth: num_prototypes must be >= 2");
    if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
    if (noise_std < 0.0 || drift_std < 0.0) throw ConfigError("synth: negative noise/drift std");
    if (!(fps > 0.0)) throw ConfigError("synth: fps must be positive");
  }
};

struct SynthCorpus {
  std::vector<FrameFeatureSequence> videos;
  std::vector<Annotation> annotations;
  Tensor prototypes;  // [num_prototypes × feature_dim], unit rows
  /// Prototype index of every frame, per video.
  std::vector<std::vector<std::size_t>> frame_labels;
};

inline std::string synth_video_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "synth_" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

/// Each video concatenates events; an event repeats one unit-norm prototype
/// (drawn once per corpus) plus white noise and a per-dimension random-walk
/// drift restarted at the event start. Consecutive events use distinct
/// prototypes, so every annotated boundary is a prototype switch.
inline SynthCorpus synth_generate(const SynthConfig& cfg, std::size_t window = 1) {
  cfg.validate(window);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t dim = cfg.feature_dim;

  SynthCorpus out;
  out.prototypes = Tensor({cfg.num_prototypes, dim});
  for (std::size_t p = 0; p < cfg.num_prototypes; ++p) {
    std::vector<double> v(dim);
    double sq = 0.0;
    do {
      sq = 0.0;
      for (auto& x : v) {
        x = normal(rng);
        sq += x * x;
      }
    } while (sq < 1e-12);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t c = 0; c < dim; ++c) out.prototypes(p, c) = real(v[c] * inv);
  }

  std::uniform_int_distribution<std::size_t> n_events(cfg.events_min, cfg.events_max);
  std::uniform_int_distribution<std::size_t> ev_len(cfg.event_length_min, cfg.event_length_max);
  std::uniform_int_distribution<std::size_t> pick_other(0, cfg.num_prototypes - 2);
  std::uniform_int_distribution<std::size_t> pick_any(0, cfg.num_prototypes - 1);

  for (std::size_t vi = 0; vi < cfg.num_videos; ++vi) {
    const std::size_t k = n_events(rng);
    std::vector<std::size_t> lengths(k), protos(k);
    for (std::size_t e = 0; e < k; ++e) {
      lengths[e] = ev_len(rng);
      if (e == 0) {
        protos[e] = pick_any(rng);
      } else {
        const std::size_t draw = pick_other(rng);
        protos[e] = draw >= protos[e - 1] ? draw + 1 : draw;
      }
    }
    std::size_t total = 0;
    for (auto l : lengths) total += l;

    FrameFeatureSequence seq;
    seq.video_id = synth_video_id(vi);
    seq.fps = float(cfg.fps);
    seq.features = Tensor({total, dim});
    Annotation ann;
    ann.video_id = seq.video_id;
    ann.num_frames = total;
    ann.fps = double(seq.fps);
    std::vector<std::size_t> labels;
    labels.reserve(total);

    std::size_t frame = 0;
    std::vector<double> drift(dim);
    for (std::size_t e = 0; e < k; ++e) {
      if (e > 0) ann.boundaries.push_back(frame);
      std::fill(drift.begin(), drift.end(), 0.0);
      for (std::size_t t = 0; t < lengths[e]; ++t, ++frame) {
        for (std::size_t c = 0; c < dim; ++c) {
          if (t > 0) drift[c] += cfg.drift_std * normal(rng);
          const double noise = cfg.noise_std * normal(rng);
          seq.features(frame, c) = real(out.prototypes(protos[e], c) + noise + drift[c]);
        }
        labels.push_back(protos[e]);
      }
    }
    out.videos.push_back(std::move(seq));
    out.annotations.push_back(std::move(ann));
    out.frame_labels.push_back(std::move(labels));
  }
  return out;
}

}  // namespace coseg
