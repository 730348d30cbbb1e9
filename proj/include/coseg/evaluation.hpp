#pragma once

// Boundary and segment scoring: Rel.Dis-thresholded precision/recall/F1 with
// one-to-one matching, and MoF/IoU over per-video Hungarian segment matching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coseg/data.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

/// One-to-one pairing. `pairs` holds (prediction index, reference index).
struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched_det;
  std::vector<std::size_t> unmatched_gt;
};

inline double rel_dis(std::size_t det_frame, std::size_t gt_frame, std::size_t num_frames) {
  const double diff = det_frame > gt_frame ? double(det_frame - gt_frame) : double(gt_frame - det_frame);
  return diff / double(num_frames);
}

inline std::vector<double> default_thresholds() {
  return {0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
}

namespace detail {
inline MatchResult complete_match(std::vector<std::pair<std::size_t, std::size_t>> pairs,
                                  std::size_t n_det, std::size_t n_gt) {
  MatchResult m;
  std::vector<bool> used_d(n_det, false), used_g(n_gt, false);
  for (auto [d, g] : pairs) used_d[d] = used_g[g] = true;
  std::sort(pairs.begin(), pairs.end());
  m.pairs = std::move(pairs);
  for (std::size_t i = 0; i < n_det; ++i)
    if (!used_d[i]) m.unmatched_det.push_back(i);
  for (std::size_t j = 0; j < n_gt; ++j)
    if (!used_g[j]) m.unmatched_gt.push_back(j);
  return m;
}
}  // namespace detail

/// Maximum-cardinality one-to-one matching of detections to ground truth
/// among pairs with rel_dis ≤ threshold; among maximum matchings the total
/// frame distance is minimal. On a line some optimal matching never crosses,
/// so a DP over prefixes of both sorted lists finds it. Remaining ties prefer
/// the earliest detections.
inline MatchResult match_boundaries(const BoundarySet& det, const BoundarySet& gt, double threshold) {
  const std::size_t n = det.frames.size(), m = gt.frames.size();
  const std::size_t len = gt.num_frames ? gt.num_frames : det.num_frames;
  if (len == 0) return detail::complete_match({}, n, m);
  struct Cell {
    std::size_t count = 0;
    std::uint64_t cost = 0;
    std::uint8_t move = 0;  // 0 skip det, 1 skip gt, 2 match
  };
  auto better = [](std::size_t c1, std::uint64_t k1, std::size_t c2, std::uint64_t k2) {
    return c1 > c2 || (c1 == c2 && k1 < k2);
  };
  std::vector<std::vector<Cell>> dp(n + 1, std::vector<Cell>(m + 1));
  for (std::size_t i = 1; i <= n; ++i) dp[i][0].move = 0;
  for (std::size_t j = 1; j <= m; ++j) dp[0][j].move = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      Cell best = dp[i][j - 1];
      best.move = 1;
      if (better(dp[i - 1][j].count, dp[i - 1][j].cost, best.count, best.cost) ||
          (dp[i - 1][j].count == best.count && dp[i - 1][j].cost == best.cost)) {
        best = dp[i - 1][j];
        best.move = 0;
      }
      const std::size_t d = det.frames[i - 1], g = gt.frames[j - 1];
      if (rel_dis(d, g, len) <= threshold) {
        const std::size_t c = dp[i - 1][j - 1].count + 1;
        const std::uint64_t k = dp[i - 1][j - 1].cost + (d > g ? d - g : g - d);
        if (better(c, k, best.count, best.cost)) best = {c, k, 2};
      }
      dp[i][j] = best;
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = n, j = m; i > 0 && j > 0;) {
    switch (dp[i][j].move) {
      case 2: pairs.emplace_back(i - 1, j - 1); --i; --j; break;
      case 0: --i; break;
      default: --j; break;
    }
  }
  return detail::complete_match(std::move(pairs), n, m);
}

/// Total |det − gt| frame distance of a matching.
inline std::uint64_t matching_cost(const MatchResult& m, const BoundarySet& det, const BoundarySet& gt) {
  std::uint64_t c = 0;
  for (auto [d, g] : m.pairs) {
    const auto a = det.frames[d], b = gt.frames[g];
    c += a > b ? a - b : b - a;
  }
  return c;
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean, 0 when both inputs are 0.
inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// P = TP/n_det and R = TP/n_gt, each 0 when its denominator is 0.
inline PrecisionRecall precision_recall_f1(std::size_t true_positives, std::size_t n_det,
                                           std::size_t n_gt) {
  PrecisionRecall pr;
  pr.precision = n_det ? double(true_positives) / double(n_det) : 0.0;
  pr.recall = n_gt ? double(true_positives) / double(n_gt) : 0.0;
  pr.f1 = f1_score(pr.precision, pr.recall);
  return pr;
}

inline PrecisionRecall precision_recall_f1(const MatchResult& m, std::size_t n_det, std::size_t n_gt) {
  return precision_recall_f1(m.pairs.size(), n_det, n_gt);
}

// ---------------------------------------------------------------------------
// Segments.

struct Segment {
  std::size_t begin = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  std::size_t length() const noexcept { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentSet {
  std::size_t num_frames = 0;
  std::vector<Segment> segments;
};

inline std::size_t overlap(const Segment& a, const Segment& b) {
  const std::size_t lo = std::max(a.begin, b.begin), hi = std::min(a.end, b.end);
  return hi > lo ? hi - lo : 0;
}

/// {b₁..bₙ} over F frames → [0,b₁), [b₁,b₂), …, [bₙ,F). A boundary at frame 0
/// would open an empty segment and is ignored.
inline SegmentSet boundaries_to_segments(const BoundarySet& b) {
  b.validate();
  SegmentSet s{b.num_frames, {}};
  std::size_t start = 0;
  for (auto f : b.frames) {
    if (f == 0) continue;
    s.segments.push_back({start, f});
    start = f;
  }
  if (b.num_frames > 0) s.segments.push_back({start, b.num_frames});
  return s;
}

/// Minimum-cost assignment of every row to a distinct column; requires
/// rows ≤ cols. Returns the column of each row.
inline std::vector<std::size_t> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost[0].size();
  if (n > m) throw DimensionError("hungarian: more rows than columns");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials over rows (u) and columns (v); way[j] is the previous
  // column on the augmenting path, p[j] the row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) assign[p[j] - 1] = j - 1;
  return assign;
}

/// One-to-one assignment of predicted to ground-truth segments maximising
/// total frame overlap. Pairs with zero overlap are left unmatched.
inline MatchResult hungarian_match(const SegmentSet& pred, const SegmentSet& gt) {
  if (pred.num_frames != gt.num_frames)
    throw DataError("hungarian_match: prediction and ground truth cover different lengths");
  const std::size_t np = pred.segments.size(), ng = gt.segments.size();
  const bool rows_are_pred = np <= ng;
  const std::size_t r = rows_are_pred ? np : ng, c = rows_are_pred ? ng : np;
  std::vector<std::vector<double>> cost(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const auto& a = rows_are_pred ? pred.segments[i] : pred.segments[j];
      const auto& b = rows_are_pred ? gt.segments[j] : gt.segments[i];
      cost[i][j] = -double(overlap(a, b));
    }
  const auto assign = hungarian_min_cost(cost);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t p = rows_are_pred ? i : assign[i];
    const std::size_t g = rows_are_pred ? assign[i] : i;
    if (overlap(pred.segments[p], gt.segments[g]) > 0) pairs.emplace_back(p, g);
  }
  return detail::complete_match(std::move(pairs), np, ng);
}

inline std::size_t total_overlap(const MatchResult& m, const SegmentSet& pred, const SegmentSet& gt) {
  std::size_t t = 0;
  for (auto [p, g] : m.pairs) t += overlap(pred.segments[p], gt.segments[g]);
  return t;
}

struct MofIou {
  double mof = 0.0;
  double iou = 0.0;
};

/// MoF = Σ|Y∩Z| / Σ|Z|; IoU = mean over ground-truth segments of |Y∩Z|/|Y∪Z|,
/// where an unmatched ground-truth segment scores 0.
inline MofIou mof_iou(const SegmentSet& pred, const SegmentSet& gt, const MatchResult& matching) {
  MofIou out;
  if (gt.segments.empty()) return out;
  std::size_t inter = 0, gt_frames = 0;
  for (const auto& z : gt.segments) gt_frames += z.length();
  double iou_sum = 0.0;
  for (auto [p, g] : matching.pairs) {
    const Segment& y = pred.segments[p];
    const Segment& z = gt.segments[g];
    const std::size_t i = overlap(y, z);
    inter += i;
    iou_sum += double(i) / double(y.length() + z.length() - i);
  }
  out.mof = gt_frames ? double(inter) / double(gt_frames) : 0.0;
  out.iou = iou_sum / double(gt.segments.size());
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level report.

struct ThresholdScore {
  double threshold = 0.0;
  std::size_t true_positives = 0;
  std::size_t n_det = 0;
  std::size_t n_gt = 0;
  PrecisionRecall pr;
};

struct VideoScore {
  std::string video_id;
  std::vector<PrecisionRecall> per_threshold;
  MofIou segments;
};

struct MetricReport {
  std::vector<ThresholdScore> thresholds;  // micro-aggregated over videos
  PrecisionRecall average;                 // arithmetic mean over thresholds
  double mof = 0.0;                        // mean over videos
  double iou = 0.0;                        // mean over videos
  std::vector<VideoScore> videos;          // macro view, for inspection
};

/// Scores every detection against the annotation with the same video id.
/// Counts are pooled over videos per threshold; MoF and IoU are per-video
/// means.
inline MetricReport evaluate_corpus(const std::vector<BoundarySet>& detections,
                                    const std::vector<Annotation>& annotations,
                                    const std::vector<double>& thresholds = default_thresholds()) {
  std::map<std::string, const Annotation*> by_id;
  for (const auto& a : annotations) by_id[a.video_id] = &a;
  std::vector<std::string> missing;
  for (const auto& d : detections)
    if (!by_id.count(d.video_id)) missing.push_back(d.video_id);
  if (!missing.empty()) {
    std::string ids;
    for (const auto& m : missing) ids += (ids.empty() ? "" : ", ") + m;
    throw DataError("evaluate: no annotation for video(s): " + ids);
  }

  MetricReport report;
  for (double t : thresholds) report.thresholds.push_back({t, 0, 0, 0, {}});
  for (const auto& det : detections) {
    const Annotation& ann = *by_id[det.video_id];
    if (det.num_frames != ann.num_frames)
      throw DataError("evaluate: " + det.video_id + " frame count differs from annotation");
    const BoundarySet gt = BoundarySet::from_annotation(ann);
    VideoScore vs;
    vs.video_id = det.video_id;
    for (auto& ts : report.thresholds) {
      const auto m = match_boundaries(det, gt, ts.threshold);
      ts.true_positives += m.pairs.size();
      ts.n_det += det.frames.size();
      ts.n_gt += gt.frames.size();
      vs.per_threshold.push_back(precision_recall_f1(m, det.frames.size(), gt.frames.size()));
    }
    const auto ps = boundaries_to_segments(det);
    const auto gs = boundaries_to_segments(gt);
    vs.segments = mof_iou(ps, gs, hungarian_match(ps, gs));
    report.mof += vs.segments.mof;
    report.iou += vs.segments.iou;
    report.videos.push_back(std::move(vs));
  }
  if (!detections.empty()) {
    report.mof /= double(detections.size());
    report.iou /= double(detections.size());
  }
  for (auto& ts : report.thresholds) {
    ts.pr = precision_recall_f1(ts.true_positives, ts.n_det, ts.n_gt);
    report.average.precision += ts.pr.precision;
    report.average.recall += ts.pr.recall;
    report.average.f1 += ts.pr.f1;
  }
  if (!report.thresholds.empty()) {
    const double k = double(report.thresholds.size());
    report.average.precision /= k;
    report.average.recall /= k;
    report.average.f1 /= k;
  }
  return report;
}

/// Upper bound on the expected F1 (micro-pooled, at `threshold`) of a
/// detector that places the same number of boundaries per video as
/// `detections`, uniformly at random over distinct frames. Per video, true
/// positives are at most the detections landing within tolerance of some
/// ground-truth boundary and at most the ground-truth boundaries with a
/// detection within tolerance; both expectations are exact for uniform
/// sampling without replacement.
inline double random_baseline_f1(const std::vector<BoundarySet>& detections,
                                 const std::vector<Annotation>& annotations, double threshold) {
  std::map<std::string, const Annotation*> by_id;
  for (const auto& a : annotations) by_id[a.video_id] = &a;
  double tp = 0.0;
  std::size_t n_det = 0, n_gt = 0;
  for (const auto& det : detections) {
    auto it = by_id.find(det.video_id);
    if (it == by_id.end()) throw DataError("random baseline: no annotation for " + det.video_id);
    const Annotation& a = *it->second;
    const std::size_t n = a.num_frames, k = std::min(det.frames.size(), n);
    n_det += det.frames.size();
    n_gt += a.boundaries.size();
    if (k == 0 || a.boundaries.empty()) continue;
    auto near = [&](std::size_t f, std::size_t g) { return rel_dis(f, g, n) <= threshold; };
    std::size_t covered = 0;
    for (std::size_t f = 0; f < n; ++f)
      covered += std::any_of(a.boundaries.begin(), a.boundaries.end(),
                             [&](std::size_t g) { return near(f, g); });
    const double det_side = double(k) * double(covered) / double(n);
    double gt_side = 0.0;
    for (std::size_t g : a.boundaries) {
      std::size_t m_g = 0;
      for (std::size_t f = 0; f < n; ++f) m_g += near(f, g);
      double none = 1.0;  // P(no detection within tolerance of g)
      for (std::size_t i = 0; i < k; ++i)
        none *= double(n - m_g > i ? n - m_g - i : 0) / double(n - i);
      gt_side += 1.0 - none;
    }
    tp += std::min(det_side, gt_side);
  }
  return n_det + n_gt ? 2.0 * tp / double(n_det + n_gt) : 0.0;
}

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json th = nlohmann::ordered_json::array();
  for (const auto& t : r.thresholds) {
    th.push_back({{"threshold", t.threshold},
                  {"true_positives", t.true_positives},
                  {"num_detections", t.n_det},
                  {"num_ground_truth", t.n_gt},
                  {"precision", t.pr.precision},
                  {"recall", t.pr.recall},
                  {"f1", t.pr.f1}});
  }
  j["thresholds"] = th;
  j["average"] = {{"precision", r.average.precision},
                  {"recall", r.average.recall},
                  {"f1", r.average.f1}};
  j["mof"] = r.mof;
  j["iou"] = r.iou;
  nlohmann::ordered_json vids = nlohmann::ordered_json::array();
  for (const auto& v : r.videos) {
    nlohmann::ordered_json f1 = nlohmann::ordered_json::array();
    for (const auto& p : v.per_threshold) f1.push_back(p.f1);
    vids.push_back({{"video_id", v.video_id}, {"f1", f1}, {"mof", v.segments.mof},
                    {"iou", v.segments.iou}});
  }
  j["videos"] = vids;
  return j;
}

/// Fixed-width table: one column per threshold plus "avg", rows P/R/F1,
/// followed by MoF and IoU.
inline std::string report_to_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << std::left << std::setw(10) << "Rel.Dis";
  for (const auto& t : r.thresholds) {
    std::ostringstream h;
    h << std::setprecision(2) << t.threshold;
    os << std::right << std::setw(7) << h.str();
  }
  os << std::right << std::setw(7) << "avg" << '\n';
  auto row = [&](const char* name, auto get, double avg) {
    os << std::left << std::setw(10) << name;
    for (const auto& t : r.thresholds) os << std::right << std::setw(7) << get(t.pr);
    os << std::right << std::setw(7) << avg << '\n';
  };
  row("Precision", [](const PrecisionRecall& p) { return p.precision; }, r.average.precision);
  row("Recall", [](const PrecisionRecall& p) { return p.recall; }, r.average.recall);
  row("F1", [](const PrecisionRecall& p) { return p.f1; }, r.average.f1);
  os << std::left << std::setw(10) << "MoF" << std::right << std::setw(7) << r.mof << '\n';
  os << std::left << std::setw(10) << "IoU" << std::right << std::setw(7) << r.iou << '\n';
  return os.str();
}

}  // namespace coseg
