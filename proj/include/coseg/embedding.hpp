#pragma once

// Contrastive temporal feature embedding: query/key encoders, momentum
// update, negative memory queue, snippet batching and the contrastive loss.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coseg/core_math.hpp"
#include "coseg/data.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

/// Two-layer perceptron: in → hidden → out with GELU in between.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
      std::mt19937_64& rng)
      : fc1_w_(prefix + ".fc1.weight", uniform_init(in, hidden, rng)),
        fc1_b_(prefix + ".fc1.bias", Tensor::zeros({hidden})),
        fc2_w_(prefix + ".fc2.weight", uniform_init(hidden, out, rng)),
        fc2_b_(prefix + ".fc2.bias", Tensor::zeros({out})) {}

  Var forward(const Var& x) const {
    return affine(gelu(affine(x, fc1_w_.var(), fc1_b_.var())), fc2_w_.var(), fc2_b_.var());
  }

  std::size_t input_dim() const { return fc1_w_.value().shape()[0]; }
  std::size_t output_dim() const { return fc2_w_.value().shape()[1]; }

  std::vector<Parameter*> parameters() { return {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_}; }
  std::vector<const Parameter*> parameters() const { return {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_}; }

 private:
  Parameter fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// Query encoder f and momentum key encoder g. Both map D_in → 2D → D and
/// start from identical weights; g only ever moves via momentum_update.
struct EncoderPair {
  Mlp query;
  Mlp key;
  double alpha = 0.999;

  EncoderPair() = default;
  EncoderPair(std::size_t input_dim, std::size_t embed_dim, double alpha, std::mt19937_64& rng)
      : query("ctfe.query", input_dim, 2 * embed_dim, embed_dim, rng), alpha(alpha) {
    std::mt19937_64 unused(0);
    key = Mlp("ctfe.key", input_dim, 2 * embed_dim, embed_dim, unused);
    auto q = query.parameters();
    auto k = key.parameters();
    for (std::size_t i = 0; i < q.size(); ++i) k[i]->mutable_value() = q[i]->value();
  }

  std::size_t input_dim() const { return query.input_dim(); }
  std::size_t embed_dim() const { return query.output_dim(); }
};

namespace detail {
inline void require_input_width(const Tensor& frames, const EncoderPair& enc) {
  if (frames.cols() != enc.input_dim()) {
    throw DimensionError("encoder: input width " + std::to_string(frames.cols()) +
                         " does not match encoder input " + std::to_string(enc.input_dim()));
  }
}
}  // namespace detail

/// h = l2_normalize(f(frames)); differentiable w.r.t. the query encoder.
inline Var encode_query(const Tensor& frames, const EncoderPair& enc) {
  detail::require_input_width(frames, enc);
  return l2_normalize(enc.query.forward(constant(frames)));
}

/// z = l2_normalize(g(frames)), detached from the graph.
inline Tensor encode_key(const Tensor& frames, const EncoderPair& enc) {
  detail::require_input_width(frames, enc);
  NoGradGuard no_grad;
  return l2_normalize(enc.key.forward(constant(frames))).value();
}

/// g ← α·g + (1−α)·f for every key parameter.
inline void momentum_update(EncoderPair& enc) {
  auto q = enc.query.parameters();
  auto k = enc.key.parameters();
  const double a = enc.alpha;
  for (std::size_t i = 0; i < q.size(); ++i) {
    require_same_shape(q[i]->value(), k[i]->value(), "momentum_update");
    Tensor& g = k[i]->mutable_value();
    const Tensor& f = q[i]->value();
    for (std::size_t e = 0; e < g.size(); ++e) g[e] = real(a * g[e] + (1.0 - a) * f[e]);
  }
}

/// Bounded FIFO of unit-norm key embeddings used as extra negatives.
class MemoryQueue {
 public:
  MemoryQueue() = default;
  MemoryQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {}

  void push(std::span<const real> row) {
    if (row.size() != dim_) throw DimensionError("memory queue: entry width mismatch");
    if (capacity_ == 0) return;
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.emplace_back(row.begin(), row.end());
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return entries_.empty(); }

  /// Entries oldest-first as a [size × dim] matrix.
  Tensor as_tensor() const {
    Tensor t({entries_.size(), dim_});
    for (std::size_t i = 0; i < entries_.size(); ++i)
      std::copy(entries_[i].begin(), entries_[i].end(), t.row(i).begin());
    return t;
  }

  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::deque<std::vector<real>> entries_;
};

struct Snippet {
  std::size_t video = 0;  // index into the corpus
  std::size_t start = 0;  // first frame
};

/// L = B·X snippets of T frames; `frames` stacks them snippet-major into
/// [L·T × D_in].
struct SnippetBatch {
  std::size_t window = 0;
  std::vector<Snippet> snippets;
  std::vector<std::string> video_ids;
  Tensor frames;

  std::size_t size() const noexcept { return snippets.size(); }
};

struct ContrastiveConfig {
  double temperature = 0.2;
  std::size_t window = 10;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("contrastive: temperature must be positive");
    if (window < 3) throw ConfigError("contrastive: window must be >= 3");
  }
};

/// Builds a batch from explicit snippet placements.
inline SnippetBatch make_batch(const std::vector<FrameFeatureSequence>& corpus,
                               std::vector<Snippet> snippets, std::size_t window) {
  SnippetBatch batch;
  batch.window = window;
  if (snippets.empty()) throw DataError("batch: no snippets");
  const std::size_t dim = corpus.at(snippets.front().video).dim();
  batch.frames = Tensor({snippets.size() * window, dim});
  for (std::size_t s = 0; s < snippets.size(); ++s) {
    const auto& video = corpus.at(snippets[s].video);
    if (video.dim() != dim) throw DimensionError("batch: videos disagree on feature width");
    if (snippets[s].start + window > video.num_frames())
      throw DataError("batch: snippet exceeds video " + video.video_id);
    for (std::size_t t = 0; t < window; ++t) {
      auto src = video.features.row(snippets[s].start + t);
      std::copy(src.begin(), src.end(), batch.frames.row(s * window + t).begin());
    }
    batch.video_ids.push_back(video.video_id);
  }
  batch.snippets = std::move(snippets);
  return batch;
}

/// Picks `videos_per_batch` distinct videos, and from each
/// `snippets_per_video` non-overlapping windows placed uniformly at random.
/// Videos shorter than snippets_per_video·window are skipped.
inline SnippetBatch sample_batch(const std::vector<FrameFeatureSequence>& corpus,
                                 std::size_t videos_per_batch, std::size_t snippets_per_video,
                                 std::size_t window, std::mt19937_64& rng) {
  if (videos_per_batch == 0 || snippets_per_video == 0 || window == 0)
    throw ConfigError("sample_batch: B, X and T must be positive");
  if (corpus.size() < videos_per_batch) {
    throw DataError("sample_batch: corpus has " + std::to_string(corpus.size()) +
                    " videos, batch needs " + std::to_string(videos_per_batch));
  }
  const std::size_t span = snippets_per_video * window;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Snippet> snippets;
  std::size_t chosen = 0;
  for (std::size_t idx : order) {
    if (chosen == videos_per_batch) break;
    const auto& video = corpus[idx];
    if (video.num_frames() < span) continue;
    // Sorted offsets in [0, slack] spaced by `window` give disjoint windows.
    std::uniform_int_distribution<std::size_t> offset(0, video.num_frames() - span);
    std::vector<std::size_t> offs(snippets_per_video);
    for (auto& o : offs) o = offset(rng);
    std::sort(offs.begin(), offs.end());
    for (std::size_t x = 0; x < snippets_per_video; ++x)
      snippets.push_back({idx, offs[x] + x * window});
    ++chosen;
  }
  if (chosen < videos_per_batch) {
    throw DataError("sample_batch: only " + std::to_string(chosen) + " videos have at least " +
                    std::to_string(span) + " frames; batch needs " +
                    std::to_string(videos_per_batch));
  }
  return make_batch(corpus, std::move(snippets), window);
}

inline SnippetBatch sample_batch(const std::vector<FrameFeatureSequence>& corpus,
                                 std::size_t videos_per_batch, std::size_t snippets_per_video,
                                 std::size_t window, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_batch(corpus, videos_per_batch, snippets_per_video, window, rng);
}

/// Contrastive negative log-likelihood over temperature-scaled similarity
/// logits. Row r = i·T + j is query frame j of snippet i.
///   batch_logits [N×N]: sim(h_r, z_c)/τ against every in-batch key
///   queue_logits [N×K]: sim(h_r, z_n)/τ against memory entries
/// Positives are the other frames of the same snippet; negatives are every
/// key of every other snippet plus all memory entries. The key of the query
/// frame itself is unused. Returns the mean over rows of
///   −1/(T−1) · Σ_{k≠j} log( Q⁺_k / (Q⁺_k + Q⁻) ).
inline Var contrastive_nll(const Var& batch_logits, const Var& queue_logits, std::size_t snippets,
                           std::size_t window) {
  const std::size_t n = snippets * window;
  const Tensor& sb = batch_logits.value();
  const Tensor& sq = queue_logits.value();
  if (window < 2) throw ConfigError("contrastive loss: window must be >= 2 to form positives");
  if (sb.rank() != 2 || sb.shape()[0] != n || sb.shape()[1] != n)
    throw DimensionError("contrastive loss: batch logits must be " + std::to_string(n) + "x" +
                         std::to_string(n));
  if (sq.rows() != n && !(sq.empty() && sq.rank() == 2 && sq.shape()[0] == n))
    throw DimensionError("contrastive loss: queue logits must have " + std::to_string(n) + " rows");
  const std::size_t k_queue = sq.rank() == 2 ? sq.shape()[1] : 0;

  const double w = 1.0 / (double(n) * double(window - 1));
  Tensor gb({n, n}), gq({n, k_queue});
  double total = 0.0;
  std::vector<double> pos(window), den(window);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r / window, j = r % window;
    const std::size_t own = i * window;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) m = std::max(m, double(sb(r, c)));
    for (std::size_t c = 0; c < k_queue; ++c) m = std::max(m, double(sq(r, c)));

    double neg = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (c / window != i) neg += std::exp(sb(r, c) - m);
    for (std::size_t c = 0; c < k_queue; ++c) neg += std::exp(sq(r, c) - m);

    double inv_den_sum = 0.0;
    for (std::size_t k = 0; k < window; ++k) {
      if (k == j) continue;
      const double s = sb(r, own + k) - m;
      pos[k] = std::exp(s);
      den[k] = pos[k] + neg;
      total += w * (std::log(den[k]) - s);
      inv_den_sum += 1.0 / den[k];
      gb(r, own + k) = real(w * (pos[k] / den[k] - 1.0));
    }
    for (std::size_t c = 0; c < n; ++c)
      if (c / window != i) gb(r, c) = real(w * std::exp(sb(r, c) - m) * inv_den_sum);
    for (std::size_t c = 0; c < k_queue; ++c)
      gq(r, c) = real(w * std::exp(sq(r, c) - m) * inv_den_sum);
  }

  return make_op(
      Tensor({1}, std::vector<real>{real(total)}), {batch_logits, queue_logits},
      [batch_logits, queue_logits, gb = std::move(gb), gq = std::move(gq)](const Tensor& g) {
        auto scaled = [&](const Tensor& t) {
          Tensor out = t;
          for (auto& v : out.storage()) v *= g[0];
          return out;
        };
        if (batch_logits.requires_grad()) batch_logits.node()->accumulate(scaled(gb));
        if (queue_logits.requires_grad()) queue_logits.node()->accumulate(scaled(gq));
      },
      "contrastive_nll");
}

/// Contrastive loss from precomputed embeddings: h [L·T × D] query
/// embeddings (differentiable), z [L·T × D] key embeddings, queue [K × D].
inline Var contrastive_loss(const Var& h, const Tensor& z, const Tensor& queue,
                            std::size_t snippets, std::size_t window, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive loss: temperature must be positive");
  if (window < 2) throw ConfigError("contrastive loss: window must be >= 2 to form positives");
  require_same_shape(h.value(), z, "contrastive loss");
  if (h.value().rows() != snippets * window)
    throw DimensionError("contrastive loss: embedding rows do not equal snippets x window");
  if (!queue.empty() && queue.cols() != z.cols())
    throw DimensionError("contrastive loss: queue width mismatch");
  const real inv_tau = real(1.0 / temperature);
  Var batch_logits = scale(matmul(h, constant(transpose(z))), inv_tau);
  Var queue_logits = queue.empty()
                         ? constant(Tensor({h.value().rows(), 0}))
                         : scale(matmul(h, constant(transpose(queue))), inv_tau);
  return contrastive_nll(batch_logits, queue_logits, snippets, window);
}

inline Var contrastive_loss(const SnippetBatch& batch, const EncoderPair& enc,
                            const MemoryQueue& queue, const ContrastiveConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("contrastive: temperature must be positive");
  if (batch.window != cfg.window) throw ConfigError("contrastive: batch window differs from config");
  Var h = encode_query(batch.frames, enc);
  Tensor z = encode_key(batch.frames, enc);
  return contrastive_loss(h, z, queue.as_tensor(), batch.size(), batch.window, cfg.temperature);
}

/// Key-encodes one uniformly chosen frame per snippet and pushes it.
inline void enqueue_memory(const SnippetBatch& batch, const EncoderPair& enc, MemoryQueue& queue,
                           std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, batch.window - 1);
  std::vector<std::size_t> rows;
  rows.reserve(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) rows.push_back(s * batch.window + pick(rng));
  const Tensor keys = encode_key(take_rows(batch.frames, rows), enc);
  for (std::size_t r = 0; r < keys.rows(); ++r) queue.push(keys.row(r));
}

}  // namespace coseg
