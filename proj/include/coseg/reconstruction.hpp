#pragma once

// Masked frame-feature reconstruction: sin-cos positions, masked-input
// assembly, a pre-norm bidirectional attention encoder with an affine output
// head, the masked MSE objective and the joint training step.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "coseg/core_math.hpp"
#include "coseg/embedding.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

/// [T×D] table, row t: (sin(w_0 t), cos(w_0 t), sin(w_1 t), cos(w_1 t), ...)
/// with w_k = 10000^(−2k/D).
struct PositionalTable {
  Tensor table;

  std::size_t window() const noexcept { return table.rows(); }
  std::size_t dim() const noexcept { return table.cols(); }
};

inline PositionalTable positional_embedding(std::size_t window, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0)
    throw DimensionError("positional embedding: dimension must be even, got " + std::to_string(dim));
  PositionalTable pos{Tensor({window, dim})};
  for (std::size_t t = 0; t < window; ++t) {
    for (std::size_t k = 0; 2 * k < dim; ++k) {
      const double w = 1.0 / std::pow(10000.0, double(2 * k) / double(dim));
      pos.table(t, 2 * k) = real(std::sin(w * double(t)));
      pos.table(t, 2 * k + 1) = real(std::cos(w * double(t)));
    }
  }
  return pos;
}

struct ReconstructionConfig {
  std::size_t window = 10;
  std::size_t mask_size = 1;
  double beta = 1.0;
  std::size_t heads = 8;
  std::size_t layers = 2;

  void validate() const {
    if (mask_size < 1 || mask_size >= window)
      throw ConfigError("reconstruction: mask_size must satisfy 1 <= M < T");
    if (!(beta >= 0.0)) throw ConfigError("reconstruction: beta must be >= 0");
    if (heads == 0 || layers == 0) throw ConfigError("reconstruction: heads and layers must be >= 1");
  }
};

struct AttentionLayer {
  Parameter q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Parameter ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Parameter fc1_w, fc1_b, fc2_w, fc2_b;

  AttentionLayer() = default;
  AttentionLayer(const std::string& p, std::size_t d, std::mt19937_64& rng)
      : q_w(p + ".msa.q.weight", uniform_init(d, d, rng)),
        q_b(p + ".msa.q.bias", Tensor::zeros({d})),
        k_w(p + ".msa.k.weight", uniform_init(d, d, rng)),
        k_b(p + ".msa.k.bias", Tensor::zeros({d})),
        v_w(p + ".msa.v.weight", uniform_init(d, d, rng)),
        v_b(p + ".msa.v.bias", Tensor::zeros({d})),
        o_w(p + ".msa.out.weight", uniform_init(d, d, rng)),
        o_b(p + ".msa.out.bias", Tensor::zeros({d})),
        ln1_gamma(p + ".ln1.gamma", Tensor({d}, 1.0f)),
        ln1_beta(p + ".ln1.beta", Tensor::zeros({d})),
        ln2_gamma(p + ".ln2.gamma", Tensor({d}, 1.0f)),
        ln2_beta(p + ".ln2.beta", Tensor::zeros({d})),
        fc1_w(p + ".mlp.fc1.weight", uniform_init(d, 4 * d, rng)),
        fc1_b(p + ".mlp.fc1.bias", Tensor::zeros({4 * d})),
        fc2_w(p + ".mlp.fc2.weight", uniform_init(4 * d, d, rng)),
        fc2_b(p + ".mlp.fc2.bias", Tensor::zeros({d})) {}

  std::vector<Parameter*> parameters() {
    return {&q_w,       &q_b,      &k_w,       &k_b,      &v_w,   &v_b,   &o_w,   &o_b,
            &ln1_gamma, &ln1_beta, &ln2_gamma, &ln2_beta, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
  }
};

/// Mask token, attention layers and output head. Attention heads split the
/// model width evenly, so width % heads must be 0.
class ReconstructorParams {
 public:
  ReconstructorParams() = default;
  ReconstructorParams(std::size_t dim, std::size_t heads, std::size_t layers, std::mt19937_64& rng)
      : heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
      throw DimensionError("reconstructor: width " + std::to_string(dim) +
                           " not divisible by " + std::to_string(heads) + " heads");
    }
    Tensor token({dim});
    std::normal_distribution<real> small(0.0f, 0.02f);
    for (auto& v : token.storage()) v = small(rng);
    mask_token = Parameter("ffr.mask_token", std::move(token));
    for (std::size_t l = 0; l < layers; ++l)
      blocks.emplace_back("ffr.layer" + std::to_string(l), dim, rng);
    head_w = Parameter("ffr.head.weight", uniform_init(dim, dim, rng));
    head_b = Parameter("ffr.head.bias", Tensor::zeros({dim}));
  }

  std::size_t dim() const { return mask_token.value().size(); }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t layers() const noexcept { return blocks.size(); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&mask_token};
    for (auto& b : blocks)
      for (auto* p : b.parameters()) out.push_back(p);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  Parameter mask_token;
  std::vector<AttentionLayer> blocks;
  Parameter head_w, head_b;

 private:
  std::size_t heads_ = 8;
};

/// Local masked positions for each of a batch of windows.
using MaskSets = std::vector<std::vector<std::size_t>>;

namespace detail {
inline std::vector<std::size_t> global_mask_rows(const MaskSets& masks, std::size_t window) {
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < masks.size(); ++s) {
    for (std::size_t t : masks[s]) {
      if (t >= window) {
        throw DimensionError("mask index " + std::to_string(t) + " outside window of " +
                             std::to_string(window));
      }
      rows.push_back(s * window + t);
    }
  }
  return rows;
}

inline void check_windows(const Tensor& h, const PositionalTable& pos, std::size_t count) {
  if (h.cols() != pos.dim())
    throw DimensionError("reconstruction: embedding width differs from positional table");
  if (h.rows() != count * pos.window())
    throw DimensionError("reconstruction: rows do not form " + std::to_string(count) +
                         " windows of " + std::to_string(pos.window()));
}
}  // namespace detail

/// Input of the encoder for a stack of windows H [(S·T)×D]: row t of window s
/// is h + pos_t, except masked rows, which become the mask token (position
/// included in the masking).
inline Var assemble_masked_input(const Var& h, const MaskSets& masks, const PositionalTable& pos,
                                 const ReconstructorParams& params) {
  detail::check_windows(h.value(), pos, masks.size());
  Tensor tiled({h.value().rows(), pos.dim()});
  for (std::size_t r = 0; r < tiled.rows(); ++r) {
    auto src = pos.table.row(r % pos.window());
    std::copy(src.begin(), src.end(), tiled.row(r).begin());
  }
  Var with_pos = add(h, constant(std::move(tiled)));
  auto rows = detail::global_mask_rows(masks, pos.window());
  if (rows.empty()) return with_pos;
  return replace_rows(with_pos, std::move(rows), params.mask_token.var());
}

/// Runs the pre-norm residual attention layers (full bidirectional attention
/// within each window) and the output head over an assembled input.
inline Var encode_windows(const Var& x0, std::size_t window, const ReconstructorParams& params,
                          Tensor* attention_probs = nullptr) {
  Var x = x0;
  for (const auto& b : params.blocks) {
    Var a = layer_norm(x, b.ln1_gamma.var(), b.ln1_beta.var());
    Var q = affine(a, b.q_w.var(), b.q_b.var());
    Var k = affine(a, b.k_w.var(), b.k_b.var());
    Var v = affine(a, b.v_w.var(), b.v_b.var());
    Tensor probs;
    Var attn = multi_head_attention(q, k, v, params.heads(), window,
                                    attention_probs ? &probs : nullptr);
    if (attention_probs) {
      if (attention_probs->empty()) {
        *attention_probs = std::move(probs);
      } else {
        std::vector<real> st = std::move(attention_probs->storage());
        st.insert(st.end(), probs.storage().begin(), probs.storage().end());
        const std::size_t rows = st.size() / window;
        *attention_probs = Tensor({rows, window}, std::move(st));
      }
    }
    x = add(x, affine(attn, b.o_w.var(), b.o_b.var()));
    Var m = layer_norm(x, b.ln2_gamma.var(), b.ln2_beta.var());
    x = add(x, affine(gelu(affine(m, b.fc1_w.var(), b.fc1_b.var())), b.fc2_w.var(), b.fc2_b.var()));
  }
  return affine(x, params.head_w.var(), params.head_b.var());
}

/// Reconstruction of a stack of windows; output has the shape of H and row
/// t of window s is the reconstruction of that frame.
inline Var reconstruct(const Var& h, const MaskSets& masks, const ReconstructorParams& params,
                       const PositionalTable& pos, Tensor* attention_probs = nullptr) {
  if (pos.dim() % params.heads() != 0)
    throw DimensionError("reconstruct: width not divisible by number of heads");
  return encode_windows(assemble_masked_input(h, masks, pos, params), pos.window(), params,
                        attention_probs);
}

/// Mean over masked rows of ‖recon − target‖². The target is detached.
inline Var reconstruction_loss(const Var& target, const Var& recon, const MaskSets& masks,
                               std::size_t window) {
  require_same_shape(target.value(), recon.value(), "reconstruction loss");
  auto rows = detail::global_mask_rows(masks, window);
  if (rows.empty()) throw ConfigError("reconstruction loss: empty mask set");
  const real inv = 1.0f / real(rows.size());
  Var diff = sub(gather_rows(recon, rows), constant(take_rows(target.value(), rows)));
  return scale(sum_squares(diff), inv);
}

/// L = L_C + β·L_R
inline Var joint_loss(const Var& contrastive, const Var& reconstruction, double beta) {
  return add(contrastive, scale(reconstruction, real(beta)));
}

/// Everything the training step mutates.
struct CosegModel {
  EncoderPair encoder;
  ReconstructorParams reconstructor;
  MemoryQueue queue;
  PositionalTable positions;

  CosegModel() = default;
  CosegModel(std::size_t input_dim, std::size_t embed_dim, std::size_t window, std::size_t heads,
             std::size_t layers, double alpha, std::size_t queue_capacity, std::mt19937_64& rng)
      : encoder(input_dim, embed_dim, alpha, rng),
        reconstructor(embed_dim, heads, layers, rng),
        queue(queue_capacity, embed_dim),
        positions(positional_embedding(window, embed_dim)) {}

  std::size_t window() const noexcept { return positions.window(); }

  /// Parameters updated by gradient descent (the key encoder is excluded).
  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out = encoder.query.parameters();
    for (auto* p : reconstructor.parameters()) out.push_back(p);
    return out;
  }
};

struct StepLosses {
  double contrastive = 0.0;
  double reconstruction = 0.0;
  double joint = 0.0;
};

/// Distinct mask positions for each snippet, sampled without replacement.
inline MaskSets sample_masks(std::size_t snippets, std::size_t window, std::size_t mask_size,
                             std::mt19937_64& rng) {
  MaskSets masks(snippets);
  std::vector<std::size_t> all(window);
  std::iota(all.begin(), all.end(), 0);
  for (auto& m : masks) {
    std::shuffle(all.begin(), all.end(), rng);
    m.assign(all.begin(), all.begin() + std::ptrdiff_t(mask_size));
    std::sort(m.begin(), m.end());
  }
  return masks;
}

/// One optimisation step of the joint objective: contrastive loss on query
/// and key embeddings, masked reconstruction of the query embeddings, SGD on
/// the query encoder and reconstructor, momentum update of the key encoder,
/// then one key per snippet enters the memory queue.
inline StepLosses train_step(const SnippetBatch& batch, CosegModel& model,
                             const ContrastiveConfig& ccfg, const ReconstructionConfig& rcfg,
                             const Optimizer& opt, std::mt19937_64& rng) {
  if (batch.window != model.window() || rcfg.window != model.window() || ccfg.window != model.window())
    throw ConfigError("train_step: window length differs between batch, configs and model");
  rcfg.validate();
  opt.validate();

  Var h = encode_query(batch.frames, model.encoder);
  Tensor z = encode_key(batch.frames, model.encoder);
  Var lc = contrastive_loss(h, z, model.queue.as_tensor(), batch.size(), batch.window,
                            ccfg.temperature);

  MaskSets masks = sample_masks(batch.size(), batch.window, rcfg.mask_size, rng);
  Var recon = reconstruct(h, masks, model.reconstructor, model.positions);
  Var lr = reconstruction_loss(h, recon, masks, batch.window);
  Var total = joint_loss(lc, lr, rcfg.beta);

  StepLosses out{lc.value()[0], lr.value()[0], total.value()[0]};
  auto params = model.trainable();
  try {
    backward(total);
    sgd_step(params, opt);
  } catch (...) {
    for (auto* p : params) p->zero_grad();
    throw;
  }
  momentum_update(model.encoder);
  enqueue_memory(batch, model.encoder, model.queue, rng);
  return out;
}

}  // namespace coseg
