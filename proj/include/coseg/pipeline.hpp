#pragma once

// End-to-end commands behind the CLI: synthesize a corpus, train, detect,
// evaluate. Each is a plain function of (config, paths) so the same code
// paths are exercised by tests.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "coseg/boundary.hpp"
#include "coseg/checkpoint.hpp"
#include "coseg/config.hpp"
#include "coseg/evaluation.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Model <-> checkpoint records.

inline constexpr char kMetaRecord[] = "meta.shape";
inline constexpr char kQueueRecord[] = "ctfe.queue";
inline constexpr char kAlphaRecord[] = "ctfe.alpha";

inline CosegModel make_model(const RunConfig& cfg, std::mt19937_64& rng) {
  return CosegModel(cfg.model.input_dim, cfg.model.embed_dim, cfg.model.window, cfg.model.heads,
                    cfg.model.layers, cfg.train.alpha, cfg.train.queue_size, rng);
}

inline std::vector<CheckpointRecord> model_records(CosegModel& model) {
  std::vector<CheckpointRecord> recs;
  recs.push_back({kMetaRecord,
                  Tensor({6}, std::vector<real>{real(model.window()),
                                                 real(model.encoder.input_dim()),
                                                 real(model.encoder.embed_dim()),
                                                 real(model.reconstructor.heads()),
                                                 real(model.reconstructor.layers()),
                                                 real(model.queue.capacity())})});
  recs.push_back({kAlphaRecord, Tensor({1}, std::vector<real>{real(model.encoder.alpha)})});
  for (auto* p : model.encoder.query.parameters()) recs.push_back({p->name(), p->value()});
  for (auto* p : model.encoder.key.parameters()) recs.push_back({p->name(), p->value()});
  for (auto* p : model.reconstructor.parameters()) recs.push_back({p->name(), p->value()});
  Tensor queue = model.queue.as_tensor();
  if (queue.empty()) queue = Tensor({0, model.queue.dim()});
  recs.push_back({kQueueRecord, std::move(queue)});
  return recs;
}

inline CosegModel model_from_records(const std::vector<CheckpointRecord>& recs) {
  const Tensor& meta = find_record(recs, kMetaRecord);
  if (meta.size() != 6) throw FormatError(FormatError::Kind::schema, "checkpoint: bad meta.shape");
  auto as_size = [&](std::size_t i) { return std::size_t(meta[i]); };
  std::mt19937_64 rng(0);
  CosegModel model(as_size(1), as_size(2), as_size(0), as_size(3), as_size(4),
                   double(find_record(recs, kAlphaRecord)[0]), as_size(5), rng);
  auto load = [&](std::vector<Parameter*> params) {
    for (auto* p : params) {
      const Tensor& t = find_record(recs, p->name());
      if (t.shape() != p->value().shape())
        throw FormatError(FormatError::Kind::schema, "checkpoint: shape mismatch for " + p->name());
      p->mutable_value() = t;
    }
  };
  load(model.encoder.query.parameters());
  load(model.encoder.key.parameters());
  load(model.reconstructor.parameters());
  const Tensor& q = find_record(recs, kQueueRecord);
  if (q.rank() != 2 || q.cols() != model.queue.dim())
    throw FormatError(FormatError::Kind::schema, "checkpoint: bad memory queue record");
  for (std::size_t r = 0; r < q.shape()[0]; ++r) model.queue.push(q.row(r));
  return model;
}

inline void save_model(CosegModel& model, const std::string& path) {
  save_checkpoint(path, model_records(model));
}

inline CosegModel load_model(const std::string& path) { return model_from_records(load_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Training loop.

struct TrainLog {
  std::vector<StepLosses> steps;
};

/// Runs cfg.train.steps joint training steps from a fresh, seeded model.
/// `on_step` (optional) sees each step's losses. The batch sampler, mask
/// sampler and memory-frame choice all draw from one seeded generator.
inline TrainLog train_model(CosegModel& model, const std::vector<FrameFeatureSequence>& corpus,
                            const RunConfig& cfg, std::mt19937_64& rng,
                            const std::function<void(std::size_t, const StepLosses&)>& on_step = {}) {
  TrainLog log;
  log.steps.reserve(cfg.train.steps);
  for (std::size_t s = 0; s < cfg.train.steps; ++s) {
    const SnippetBatch batch = sample_batch(corpus, cfg.train.videos_per_batch,
                                            cfg.train.snippets_per_video, cfg.model.window, rng);
    const StepLosses losses =
        train_step(batch, model, cfg.contrastive, cfg.reconstruction, cfg.optimizer, rng);
    log.steps.push_back(losses);
    if (on_step) on_step(s + 1, losses);
  }
  return log;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Commands.

struct CommandPaths {
  std::string out_dir = ".";
  std::string corpus_dir;        // default: <out>/features
  std::string annotations_path;  // default: <out>/annotations.json
  std::string detections_path;   // default: <out>/detections.json
  std::string checkpoint_path;   // default: <out>/checkpoint.csgc
  bool dump_trajectory = false;

  std::string corpus() const { return corpus_dir.empty() ? (fs::path(out_dir) / "features").string() : corpus_dir; }
  std::string annotations() const {
    return annotations_path.empty() ? (fs::path(out_dir) / "annotations.json").string() : annotations_path;
  }
  std::string detections() const {
    return detections_path.empty() ? (fs::path(out_dir) / "detections.json").string() : detections_path;
  }
  std::string checkpoint() const {
    return checkpoint_path.empty() ? (fs::path(out_dir) / "checkpoint.csgc").string() : checkpoint_path;
  }
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

/// Writes <corpus>/<video_id>.csgf for every synthetic video plus the
/// ground-truth annotations. Returns the number of videos.
inline std::size_t cmd_synth(const RunConfig& cfg, const CommandPaths& paths) {
  const SynthCorpus corpus = synth_generate(cfg.synth, cfg.model.window);
  ensure_dir(paths.corpus());
  for (const auto& v : corpus.videos)
    save_feature_file(v, (fs::path(paths.corpus()) / (v.video_id + ".csgf")).string());
  ensure_dir(fs::path(paths.annotations()).parent_path().string().empty()
                 ? "."
                 : fs::path(paths.annotations()).parent_path().string());
  save_annotations(corpus.annotations, paths.annotations());
  return corpus.videos.size();
}

/// Trains from scratch and writes <out>/losses.csv and the checkpoint. A
/// non-finite loss stops training; the model as of the last completed step
/// is still written before the error propagates.
inline TrainLog cmd_train(const RunConfig& cfg, const CommandPaths& paths) {
  const auto corpus = load_corpus(paths.corpus());
  if (corpus.empty()) throw DataError("train: no feature files in " + paths.corpus());
  for (const auto& v : corpus)
    if (v.dim() != cfg.model.input_dim)
      throw ConfigError("train: " + v.video_id + " has width " + std::to_string(v.dim()) +
                        ", model.input_dim is " + std::to_string(cfg.model.input_dim));
  ensure_dir(paths.out_dir);
  std::mt19937_64 rng(cfg.seed);
  CosegModel model = make_model(cfg, rng);

  std::string csv = "step,contrastive,reconstruction,joint\n";
  TrainLog log;
  try {
    log = train_model(model, corpus, cfg, rng, [&](std::size_t step, const StepLosses& l) {
      csv += std::to_string(step) + "," + format_real(l.contrastive) + "," +
             format_real(l.reconstruction) + "," + format_real(l.joint) + "\n";
    });
  } catch (const NumericError&) {
    write_text((fs::path(paths.out_dir) / "losses.csv").string(), csv);
    save_model(model, paths.checkpoint());
    throw;
  }
  write_text((fs::path(paths.out_dir) / "losses.csv").string(), csv);
  save_model(model, paths.checkpoint());
  return log;
}

inline std::string trajectory_csv(const DetectionTrace& t) {
  std::string csv = "frame,error,smoothed,gradient\n";
  for (std::size_t i = 0; i < t.error.size(); ++i) {
    csv += std::to_string(i) + "," + format_real(t.error[i]) + "," + format_real(t.smoothed[i]) + "," +
           format_real(i < t.gradient.size() ? t.gradient[i] : 0.0) + "\n";
  }
  return csv;
}

/// Detections for every corpus video in the annotation schema (with scores).
/// The checkpoint is only read.
inline std::vector<Annotation> cmd_detect(const RunConfig& cfg, const CommandPaths& paths) {
  CosegModel model = load_model(paths.checkpoint());
  if (model.window() != cfg.detector.window) {
    throw ConfigError("detect: checkpoint window " + std::to_string(model.window()) +
                      " differs from configured window " + std::to_string(cfg.detector.window));
  }
  const auto corpus = load_corpus(paths.corpus());
  std::vector<Annotation> out;
  if (paths.dump_trajectory) ensure_dir((fs::path(paths.out_dir) / "trajectories").string());
  for (const auto& video : corpus) {
    const Detection d = detect_boundaries(video, model, cfg.detector);
    Annotation a;
    a.video_id = video.video_id;
    a.num_frames = video.num_frames();
    a.fps = double(video.fps);
    a.boundaries = d.boundaries.frames;
    a.scores = d.scores;
    out.push_back(std::move(a));
    if (paths.dump_trajectory)
      write_text((fs::path(paths.out_dir) / "trajectories" / (video.video_id + ".csv")).string(),
                 trajectory_csv(d.trace));
  }
  ensure_dir(fs::path(paths.detections()).parent_path().string().empty()
                 ? "."
                 : fs::path(paths.detections()).parent_path().string());
  save_annotations(out, paths.detections());
  return out;
}

/// Scores detections against annotations; writes <out>/report.json and
/// <out>/report.txt.
inline MetricReport cmd_eval(const CommandPaths& paths, const std::vector<double>& thresholds) {
  const auto detections = load_annotations(paths.detections());
  const auto annotations = load_annotations(paths.annotations());
  std::vector<BoundarySet> dets;
  for (const auto& d : detections) dets.push_back(BoundarySet::from_annotation(d));
  const MetricReport report = evaluate_corpus(dets, annotations, thresholds);
  ensure_dir(paths.out_dir);
  write_text((fs::path(paths.out_dir) / "report.json").string(), report_to_json(report).dump(2) + "\n");
  write_text((fs::path(paths.out_dir) / "report.txt").string(), report_to_table(report));
  return report;
}

}  // namespace coseg
