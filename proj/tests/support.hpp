#pragma once

// Test-only oracles: central finite differences, brute-force references and
// small random generators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "coseg/coseg.hpp"

namespace coseg::inline COSEG_PRECISION_NS::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, real lo = -1.0f, real hi = 1.0f) {
  std::uniform_real_distribution<real> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

inline Tensor random_unit_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    std::vector<double> v(dim);
    for (auto& x : v) {
      x = n(rng);
      sq += x * x;
    }
    for (std::size_t c = 0; c < dim; ++c) t(r, c) = real(v[c] / std::sqrt(sq));
  }
  return t;
}

/// Central differences of `loss` w.r.t. every entry of `value`, which
/// `loss` must read on each call.
inline Tensor numeric_gradient(Tensor& value, const std::function<double()>& loss, double eps = 1e-3) {
  Tensor g(value.shape());
  for (std::size_t i = 0; i < value.size(); ++i) {
    const real saved = value[i];
    value[i] = real(saved + eps);
    const double plus = loss();
    value[i] = real(saved - eps);
    const double minus = loss();
    value[i] = saved;
    g[i] = real((plus - minus) / (2.0 * eps));
  }
  return g;
}

/// Runs `build` with graph recording on, back-propagates, then returns the
/// worst gradient_error over `leaves` against central differences of the
/// same function.
inline double worst_gradient_error(std::vector<Var> leaves, const std::function<Var()>& build,
                                   double eps = 1e-3);

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute difference when both norms are
/// below `abs_floor`.
inline double gradient_error(const Tensor& analytic, const Tensor& numeric, double abs_floor = 1e-5) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = double(analytic[i]) - numeric[i];
    diff += d * d;
    na += double(analytic[i]) * analytic[i];
    nn += double(numeric[i]) * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  if (scale < abs_floor) return std::sqrt(diff) < abs_floor ? 0.0 : std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

inline double worst_gradient_error(std::vector<Var> leaves, const std::function<Var()>& build,
                                   double eps) {
  for (auto& l : leaves) l.zero_grad();
  backward(build());
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const Tensor analytic = leaf.grad();
    const Tensor numeric = numeric_gradient(
        leaf.mutable_value(),
        [&] {
          NoGradGuard ng;
          return double(build().value()[0]);
        },
        eps);
    worst = std::max(worst, gradient_error(analytic, numeric));
  }
  for (auto& l : leaves) l.zero_grad();
  return worst;
}

/// Joint loss of a tiny model on fixed inputs, rebuilt on every call so that
/// finite differences see parameter perturbations.
struct TinyJointProblem {
  CosegModel model;
  Tensor frames;
  Tensor queue;
  Tensor target;  // stop-gradient reconstruction target, frozen at the base point
  MaskSets masks;
  std::size_t snippets;
  double temperature = 0.2;

  TinyJointProblem(std::size_t input_dim, std::size_t dim, std::size_t window, std::size_t snippets,
                   std::size_t queue_len, std::size_t mask_size, std::uint64_t seed)
      : snippets(snippets) {
    std::mt19937_64 rng(seed);
    model = CosegModel(input_dim, dim, window, 8 <= dim ? 8 : dim, 2, 0.999, queue_len, rng);
    frames = random_tensor({snippets * window, input_dim}, rng);
    queue = random_unit_rows(queue_len, dim, rng);
    masks = sample_masks(snippets, window, mask_size, rng);
    // Perturb the key encoder so that it differs from the query encoder.
    for (auto* p : model.encoder.key.parameters())
      for (auto& v : p->mutable_value().storage()) v += std::uniform_real_distribution<real>(-0.1f, 0.1f)(rng);
    // Nonzero biases and gains exercise every gradient path.
    for (auto* p : model.trainable())
      for (auto& v : p->mutable_value().storage()) v += std::uniform_real_distribution<real>(-0.05f, 0.05f)(rng);
    NoGradGuard ng;
    target = encode_query(frames, model.encoder).value();
  }

  Var loss() const {
    Var h = encode_query(frames, model.encoder);
    Tensor z = encode_key(frames, model.encoder);
    Var lc = contrastive_loss(h, z, queue, snippets, model.window(), temperature);
    Var recon = reconstruct(h, masks, model.reconstructor, model.positions);
    return joint_loss(lc, reconstruction_loss(constant(target), recon, masks, model.window()), 1.0);
  }

  /// Per-parameter worst norm-relative error and the name of the worst one.
  std::pair<double, std::string> gradient_check(double eps = 1e-3) {
    double worst = 0.0;
    std::string name;
    for (auto* p : model.trainable()) {
      const double e = worst_gradient_error({p->var()}, [&] { return loss(); }, eps);
      if (e >= worst) worst = e, name = p->name();
    }
    return {worst, name};
  }
};

/// Contrastive loss computed directly from its definition with a double loop
/// over every (query, key) pair, in double precision.
inline double brute_force_contrastive(const Tensor& h, const Tensor& z, const Tensor& queue,
                                      std::size_t snippets, std::size_t window, double tau) {
  auto sim = [](std::span<const real> a, std::span<const real> b) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) s += double(a[c]) * b[c];
    return s;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < snippets; ++i) {
    for (std::size_t j = 0; j < window; ++j) {
      const auto q = h.row(i * window + j);
      double q1 = 0.0;
      for (std::size_t l = 0; l < snippets; ++l) {
        if (l == i) continue;
        for (std::size_t m = 0; m < window; ++m) q1 += std::exp(sim(q, z.row(l * window + m)) / tau);
      }
      double q2 = 0.0;
      for (std::size_t n = 0; n < queue.rows(); ++n) q2 += std::exp(sim(q, queue.row(n)) / tau);
      double inner = 0.0;
      for (std::size_t k = 0; k < window; ++k) {
        if (k == j) continue;
        const double pos = std::exp(sim(q, z.row(i * window + k)) / tau);
        inner += std::log(pos / (pos + q1 + q2));
      }
      total += -inner / double(window - 1);
    }
  }
  return total / double(snippets * window);
}

/// Best (cardinality, total distance) over every one-to-one matching of
/// detections to ground truth with rel_dis ≤ threshold, by exhaustive search.
inline std::pair<std::size_t, std::uint64_t> brute_force_boundary_match(
    const std::vector<std::size_t>& det, const std::vector<std::size_t>& gt, std::size_t len,
    double threshold) {
  std::pair<std::size_t, std::uint64_t> best{0, 0};
  std::vector<bool> used(gt.size(), false);
  std::function<void(std::size_t, std::size_t, std::uint64_t)> rec = [&](std::size_t i, std::size_t count,
                                                                         std::uint64_t cost) {
    if (i == det.size()) {
      if (count > best.first || (count == best.first && cost < best.second)) best = {count, cost};
      return;
    }
    rec(i + 1, count, cost);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (used[j]) continue;
      const std::size_t d = det[i] > gt[j] ? det[i] - gt[j] : gt[j] - det[i];
      if (double(d) / double(len) > threshold) continue;
      used[j] = true;
      rec(i + 1, count + 1, cost + d);
      used[j] = false;
    }
  };
  rec(0, 0, 0);
  return best;
}

/// Maximum total overlap over all one-to-one segment assignments.
inline std::size_t brute_force_segment_overlap(const std::vector<Segment>& pred,
                                               const std::vector<Segment>& gt) {
  const bool pred_small = pred.size() <= gt.size();
  const auto& small = pred_small ? pred : gt;
  const auto& big = pred_small ? gt : pred;
  std::vector<std::size_t> perm(big.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t total = 0;
    for (std::size_t i = 0; i < small.size(); ++i) total += overlap(small[i], big[perm[i]]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Random sorted distinct boundaries in [1, len).
inline std::vector<std::size_t> random_boundaries(std::size_t count, std::size_t len, std::mt19937_64& rng) {
  std::vector<std::size_t> all(len - 1);
  std::iota(all.begin(), all.end(), 1);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(count, all.size()));
  std::sort(all.begin(), all.end());
  return all;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace coseg::testing
