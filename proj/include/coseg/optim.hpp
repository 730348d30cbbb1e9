#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "coseg/autodiff.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

/// Trainable tensor: a requires-grad leaf plus its SGD momentum buffer.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name_(std::move(name)),
        momentum_(Tensor::zeros(value.shape())),
        var_(Var::leaf(std::move(value), true)) {}

  const std::string& name() const noexcept { return name_; }
  const Var& var() const noexcept { return var_; }
  const Tensor& value() const { return var_.value(); }
  Tensor& mutable_value() { return var_.mutable_value(); }
  const Tensor& grad() const { return var_.grad(); }
  Tensor& mutable_grad() { return var_.mutable_grad(); }
  const Tensor& momentum_buffer() const noexcept { return momentum_; }
  Tensor& mutable_momentum_buffer() noexcept { return momentum_; }
  void zero_grad() { var_.zero_grad(); }

 private:
  std::string name_;
  Tensor momentum_;
  Var var_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrix [fan_in × fan_out].
inline Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const real bound = 1.0f / std::sqrt(real(fan_in));
  std::uniform_real_distribution<real> dist(-bound, bound);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

struct Optimizer {
  double learning_rate = 0.002;
  double weight_decay = 1e-4;
  double momentum = 0.9;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("optimizer: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("optimizer: momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
  }
};

/// SGD with momentum and L2 weight decay:
///   buf ← momentum·buf + (grad + wd·value);  value ← value − lr·buf
/// then zeroes the gradients. A non-finite gradient anywhere aborts the step
/// before any parameter is touched.
inline void sgd_step(std::vector<Parameter*> params, const Optimizer& opt) {
  opt.validate();
  for (const Parameter* p : params) {
    if (!p->grad().all_finite()) {
      throw NumericError("sgd_step: non-finite gradient in " + p->name());
    }
  }
  for (Parameter* p : params) {
    Tensor& value = p->mutable_value();
    Tensor& buf = p->mutable_momentum_buffer();
    const Tensor& grad = p->grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double step = double(grad[i]) + opt.weight_decay * double(value[i]);
      buf[i] = real(opt.momentum * double(buf[i]) + step);
      value[i] = real(double(value[i]) - opt.learning_rate * double(buf[i]));
    }
    p->zero_grad();
  }
}

}  // namespace coseg
