#pragma once

// Reverse-mode automatic differentiation over coseg::Tensor.
//
// A Var is a handle to a graph node. Ops build nodes that remember their
// parents and a closure propagating the output gradient back to them; the
// graph is released when the last Var referencing it goes out of scope.
// Leaves created with requires_grad accumulate gradients across backward
// calls until explicitly zeroed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <utility>
#include <vector>

#include "coseg/tensor.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

namespace detail {
inline thread_local bool grad_mode = true;
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() noexcept { return detail::grad_mode; }

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& grad_out)> backward;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor::zeros(value.shape());
    return grad;
  }

  void accumulate(const Tensor& g) {
    Tensor& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf holding `value`.
  static Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  /// Gradient buffer; zeros of the value's shape when nothing has accumulated.
  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad_buffer().fill(0.0f); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const noexcept { return static_cast<bool>(node_); }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor value) { return Var::leaf(std::move(value), false); }

/// Wraps an op result. `backward` receives dLoss/dOutput and must push
/// gradients into whichever `parents` require them. Non-finite outputs are
/// rejected here so NaN/Inf never propagate silently.
inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(const Tensor&)> backward, const char* name = "op") {
  if (!value.all_finite()) {
    throw NumericError(std::string(name) + ": produced a non-finite value");
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Var& p) { return p.requires_grad(); });
  if (grad_enabled() && any) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.shared());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

/// Back-propagates from a scalar. Leaf gradients accumulate additively;
/// intermediate gradients are released once consumed.
inline void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().fill(1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    n->backward(n->grad_buffer());
    n->grad = Tensor();
  }
}

// ---------------------------------------------------------------------------
// Plain tensor kernels (no graph). Reductions accumulate in double.

/// a · bᵀ for a [m×k], b [n×k].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ disagree");
  }
  const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const real* ar = a.data().data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const real* br = b.data().data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += double(ar[p]) * double(br[p]);
      out(i, j) = real(acc);
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.cols() != b.shape()[0]) {
    throw DimensionError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " disagree");
  }
  return matmul_nt(a, transpose(b));
}

// ---------------------------------------------------------------------------
// Differentiable ops.

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: inner dimensions of " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()) + " disagree");
  }
  Tensor bt = transpose(bv);
  Tensor out = matmul_nt(av, bt);
  return make_op(
      std::move(out), {a, b},
      [a, b](const Tensor& g) {
        if (a.requires_grad()) a.node()->accumulate(matmul_nt(g, b.value()));
        if (b.requires_grad()) {
          b.node()->accumulate(matmul_nt(transpose(a.value()), transpose(g)));
        }
      },
      "matmul");
}

inline Var transpose(const Var& a) {
  return make_op(
      transpose(a.value()), {a},
      [a](const Tensor& g) { a.node()->accumulate(transpose(g)); }, "transpose");
}

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(
      std::move(out), {a, b},
      [a, b](const Tensor& g) {
        if (a.requires_grad()) a.node()->accumulate(g);
        if (b.requires_grad()) b.node()->accumulate(g);
      },
      "add");
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(
      std::move(out), {a, b},
      [a, b](const Tensor& g) {
        if (a.requires_grad()) a.node()->accumulate(g);
        if (b.requires_grad()) {
          Tensor neg = g;
          for (auto& v : neg.storage()) v = -v;
          b.node()->accumulate(neg);
        }
      },
      "sub");
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(
      std::move(out), {a, b},
      [a, b](const Tensor& g) {
        if (a.requires_grad()) {
          Tensor ga = g;
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
          a.node()->accumulate(ga);
        }
        if (b.requires_grad()) {
          Tensor gb = g;
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
          b.node()->accumulate(gb);
        }
      },
      "mul");
}

inline Var scale(const Var& a, real factor) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return make_op(
      std::move(out), {a},
      [a, factor](const Tensor& g) {
        Tensor ga = g;
        for (auto& v : ga.storage()) v *= factor;
        a.node()->accumulate(ga);
      },
      "scale");
}

/// x [m×n] + bias [n] broadcast over rows.
inline Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = x.value().cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_bias: bias of size " + std::to_string(bias.value().size()) +
                         " for rows of width " + std::to_string(n));
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) += bias.value()[c];
  return make_op(
      std::move(out), {x, bias},
      [x, bias, n](const Tensor& g) {
        if (x.requires_grad()) x.node()->accumulate(g);
        if (bias.requires_grad()) {
          std::vector<double> acc(n, 0.0);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) acc[c] += g(r, c);
          Tensor gb(bias.shape());
          for (std::size_t c = 0; c < n; ++c) gb[c] = real(acc[c]);
          bias.node()->accumulate(gb);
        }
      },
      "add_bias");
}

/// x · W + b.
inline Var affine(const Var& x, const Var& weight, const Var& bias) {
  return add_bias(matmul(x, weight), bias);
}

/// GELU, tanh approximation.
inline Var gelu(const Var& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  Tensor out = x.value();
  for (auto& v : out.storage()) {
    const double u = v;
    v = real(0.5 * u * (1.0 + std::tanh(c * (u + k * u * u * u))));
  }
  return make_op(
      std::move(out), {x},
      [x](const Tensor& g) {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double u = x.value()[i];
          const double t = std::tanh(c * (u + k * u * u * u));
          const double d = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * c * (1.0 + 3.0 * k * u * u);
          gx[i] = real(g[i] * d);
        }
        x.node()->accumulate(gx);
      },
      "gelu");
}

/// Row-wise layer normalization over the last dimension.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, real eps = 1e-5f) {
  const std::size_t d = x.value().cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: gamma/beta width does not match feature dimension " +
                         std::to_string(d));
  }
  if (!(eps > 0.0f)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.value().rows();
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = x.value().row(r);
    double mean = 0.0;
    for (real v : row) mean += v;
    mean /= double(d);
    double var = 0.0;
    for (real v : row) var += (v - mean) * (v - mean);
    var /= double(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * inv_std[r];
      xhat(r, c) = real(h);
      out(r, c) = real(h * gamma.value()[c] + beta.value()[c]);
    }
  }
  return make_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
       rows](const Tensor& g) {
        if (gamma.requires_grad() || beta.requires_grad()) {
          std::vector<double> gg(d, 0.0), gb(d, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              gg[c] += double(g(r, c)) * xhat(r, c);
              gb[c] += g(r, c);
            }
          Tensor tg(gamma.shape()), tb(beta.shape());
          for (std::size_t c = 0; c < d; ++c) {
            tg[c] = real(gg[c]);
            tb[c] = real(gb[c]);
          }
          if (gamma.requires_grad()) gamma.node()->accumulate(tg);
          if (beta.requires_grad()) beta.node()->accumulate(tb);
        }
        if (x.requires_grad()) {
          Tensor gx(x.shape());
          std::vector<double> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dh[c] = double(g(r, c)) * gamma.value()[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * xhat(r, c);
            }
            mean_dh /= double(d);
            mean_dh_h /= double(d);
            for (std::size_t c = 0; c < d; ++c)
              gx(r, c) = real(inv_std[r] * (dh[c] - mean_dh - xhat(r, c) * mean_dh_h));
          }
          x.node()->accumulate(gx);
        }
      },
      "layer_norm");
}

namespace detail {
inline void softmax_rows_inplace(Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    if (row.empty()) continue;
    const real mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v = real(v / total);
  }
}

inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& g) {
  Tensor gx(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) dot += double(y(r, c)) * g(r, c);
    for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) = real(y(r, c) * (g(r, c) - dot));
  }
  return gx;
}
}  // namespace detail

/// Softmax with max-subtraction. `axis` is -1 or rank-1 for rows, 0 for
/// columns of a matrix.
inline Var softmax(const Var& x, int axis = -1) {
  const int rank = int(x.value().rank());
  if (axis < 0) axis += rank;
  const bool columns = rank == 2 && axis == 0;
  if (!columns && axis != rank - 1) throw DimensionError("softmax: unsupported axis");
  Tensor y = columns ? transpose(x.value()) : x.value();
  detail::softmax_rows_inplace(y);
  if (columns) y = transpose(y);
  Tensor saved = y;
  return make_op(
      std::move(y), {x},
      [x, y = std::move(saved), columns](const Tensor& g) {
        if (columns) {
          x.node()->accumulate(
              transpose(detail::softmax_rows_backward(transpose(y), transpose(g))));
        } else {
          x.node()->accumulate(detail::softmax_rows_backward(y, g));
        }
      },
      "softmax");
}

/// Threshold below which a row counts as zero for l2_normalize.
inline constexpr double kDegenerateNorm = 1e-12;

/// Scales each row to unit Euclidean norm. Rows with norm below
/// kDegenerateNorm stay zero (and get zero gradient); their indices are
/// reported through `degenerate_rows` when given.
inline Var l2_normalize(const Var& x, std::vector<std::size_t>* degenerate_rows = nullptr) {
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  Tensor y(x.shape());
  std::vector<double> inv_norm(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = x.value().row(r);
    double sq = 0.0;
    for (real v : row) sq += double(v) * v;
    const double norm = std::sqrt(sq);
    if (norm < kDegenerateNorm) {
      if (degenerate_rows) degenerate_rows->push_back(r);
      continue;
    }
    inv_norm[r] = 1.0 / norm;
    for (std::size_t c = 0; c < d; ++c) y(r, c) = real(row[c] * inv_norm[r]);
  }
  Tensor saved = y;
  return make_op(
      std::move(y), {x},
      [x, y = std::move(saved), inv_norm = std::move(inv_norm), rows, d](const Tensor& g) {
        Tensor gx(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          if (inv_norm[r] == 0.0) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) dot += double(y(r, c)) * g(r, c);
          for (std::size_t c = 0; c < d; ++c)
            gx(r, c) = real((g(r, c) - y(r, c) * dot) * inv_norm[r]);
        }
        x.node()->accumulate(gx);
      },
      "l2_normalize");
}

inline Var sum(const Var& x) {
  double acc = 0.0;
  for (real v : x.value().data()) acc += v;
  return make_op(
      Tensor({1}, std::vector<real>{real(acc)}), {x},
      [x](const Tensor& g) { x.node()->accumulate(Tensor(x.shape(), g[0])); }, "sum");
}

inline Var mean(const Var& x) {
  if (x.value().empty()) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0f / real(x.value().size()));
}

inline Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

/// Sum of squared entries.
inline Var sum_squares(const Var& x) {
  double acc = 0.0;
  for (real v : x.value().data()) acc += double(v) * v;
  return make_op(
      Tensor({1}, std::vector<real>{real(acc)}), {x},
      [x](const Tensor& g) {
        Tensor gx = x.value();
        for (auto& v : gx.storage()) v *= 2.0f * g[0];
        x.node()->accumulate(gx);
      },
      "sum_squares");
}

/// Same value, no gradient path.
inline Var detach(const Var& x) { return constant(x.value()); }

/// Rows of x selected by `indices` (repeats allowed; gradients scatter-add).
inline Var gather_rows(const Var& x, std::vector<std::size_t> indices) {
  for (auto i : indices)
    if (i >= x.value().rows()) throw DimensionError("gather_rows: row index out of range");
  Tensor out = take_rows(x.value(), indices);
  return make_op(
      std::move(out), {x},
      [x, indices = std::move(indices)](const Tensor& g) {
        Tensor gx(x.shape());
        for (std::size_t i = 0; i < indices.size(); ++i) {
          auto src = g.row(i);
          auto dst = gx.row(indices[i]);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
        x.node()->accumulate(gx);
      },
      "gather_rows");
}

/// Copy of x with each row listed in `rows` replaced by `token`. Replaced rows
/// pass no gradient back to x; the token receives the sum of their gradients.
inline Var replace_rows(const Var& x, std::vector<std::size_t> rows, const Var& token) {
  const std::size_t d = x.value().cols();
  if (token.value().size() != d) throw DimensionError("replace_rows: token width mismatch");
  Tensor out = x.value();
  for (auto r : rows) {
    if (r >= out.rows()) throw DimensionError("replace_rows: row index out of range");
    std::copy(token.value().data().begin(), token.value().data().end(), out.row(r).begin());
  }
  return make_op(
      std::move(out), {x, token},
      [x, token, rows = std::move(rows), d](const Tensor& g) {
        if (x.requires_grad()) {
          Tensor gx = g;
          for (auto r : rows) std::fill(gx.row(r).begin(), gx.row(r).end(), 0.0f);
          x.node()->accumulate(gx);
        }
        if (token.requires_grad()) {
          std::vector<double> acc(d, 0.0);
          for (auto r : rows)
            for (std::size_t c = 0; c < d; ++c) acc[c] += g(r, c);
          Tensor gt(token.shape());
          for (std::size_t c = 0; c < d; ++c) gt[c] = real(acc[c]);
          token.node()->accumulate(gt);
        }
      },
      "replace_rows");
}

/// Scaled dot-product self-attention, multi-head, applied independently to
/// consecutive blocks of `block` rows (one block per sequence). q, k, v are
/// [N×D] with N a multiple of `block` and D a multiple of `heads`; head h uses
/// columns [h·D/heads, (h+1)·D/heads). When `probs_out` is given it receives
/// the attention weights as [(N/block)·heads·block × block].
inline Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                                std::size_t block, Tensor* probs_out = nullptr) {
  const Tensor& qv = q.value();
  require_same_shape(qv, k.value(), "attention");
  require_same_shape(qv, v.value(), "attention");
  const std::size_t n = qv.rows(), d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (block == 0 || n % block != 0) {
    throw DimensionError("attention: " + std::to_string(n) + " rows not a multiple of block " +
                         std::to_string(block));
  }
  const std::size_t dh = d / heads, blocks = n / block;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));

  auto probs = std::make_shared<Tensor>(Shape{blocks * heads * block, block});
  Tensor out({n, d});
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * block;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < block; ++i) {
        auto prow = probs->row((b * heads + h) * block + i);
        for (std::size_t j = 0; j < block; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c)
            s += double(qv(base + i, off + c)) * k.value()(base + j, off + c);
          prow[j] = real(s * inv_sqrt);
        }
      }
    }
  }
  detail::softmax_rows_inplace(*probs);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * block;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < block; ++i) {
        auto prow = probs->row((b * heads + h) * block + i);
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < block; ++j) acc += double(prow[j]) * v.value()(base + j, off + c);
          out(base + i, off + c) = real(acc);
        }
      }
    }
  }
  if (probs_out) *probs_out = *probs;

  return make_op(
      std::move(out), {q, k, v},
      [q, k, v, probs, heads, block, blocks, dh, inv_sqrt](const Tensor& g) {
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        const Tensor& vv = v.value();
        Tensor gq(qv.shape()), gk(kv.shape()), gv(vv.shape());
        std::vector<double> dp(block), ds(block);
        for (std::size_t b = 0; b < blocks; ++b) {
          const std::size_t base = b * block;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < block; ++i) {
              auto prow = probs->row((b * heads + h) * block + i);
              // dP = dO · Vᵀ, dV += Pᵀ · dO
              double rowdot = 0.0;
              for (std::size_t j = 0; j < block; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  acc += double(g(base + i, off + c)) * vv(base + j, off + c);
                  gv(base + j, off + c) += real(double(prow[j]) * g(base + i, off + c));
                }
                dp[j] = acc;
                rowdot += acc * prow[j];
              }
              for (std::size_t j = 0; j < block; ++j) ds[j] = prow[j] * (dp[j] - rowdot) * inv_sqrt;
              for (std::size_t j = 0; j < block; ++j) {
                for (std::size_t c = 0; c < dh; ++c) {
                  gq(base + i, off + c) += real(ds[j] * kv(base + j, off + c));
                  gk(base + j, off + c) += real(ds[j] * qv(base + i, off + c));
                }
              }
            }
          }
        }
        if (q.requires_grad()) q.node()->accumulate(gq);
        if (k.requires_grad()) k.node()->accumulate(gk);
        if (v.requires_grad()) v.node()->accumulate(gv);
      },
      "attention");
}

}  // namespace coseg
