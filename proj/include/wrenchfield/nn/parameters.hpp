#pragma once

#include "wrenchfield/nn/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wrenchfield::nn {

template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
};

template <class S>
class ParameterSet {
 public:
  int add(std::string name, Mat<S> init) {
    Parameter<S> p{std::move(name), std::move(init), {}};
    p.grad = Mat<S>::Zero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Registers every parameter as a tape variable, in order.
  std::vector<Var> bind(Tape<S>& tape) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.variable(p.value));
    return vars;
  }

  /// Adds the tape gradients of bound variables into the parameter gradients.
  void collect(const Tape<S>& tape, const std::vector<Var>& vars) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (tape.has_grad(vars[i])) params_[i].grad += tape.grad(vars[i]);
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_) s += p.grad.template cast<double>().squaredNorm();
    return std::sqrt(s);
  }

  void scale_grad(S f) {
    for (auto& p : params_) p.grad *= f;
  }

  bool finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<T>());
    return out;
  }

 private:
  std::vector<Parameter<S>> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Adam {
 public:
  explicit Adam(const ParameterSet<S>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ParameterSet<S>& params, double lr) {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, t_));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, t_));
    const S a = static_cast<S>(lr), eps = static_cast<S>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= a * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  long t_ = 0;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
template <class S>
Mat<S> uniform_init(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat<S> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<S>(u(rng));
  return m;
}

/// Cosine decay from lr to lr_min over `total` steps after a linear warmup.
inline double cosine_lr(double lr, double lr_min, long step, long total, long warmup) {
  if (warmup > 0 && step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = std::max<long>(1, total - warmup);
  const double p = std::min(1.0, static_cast<double>(step - warmup) / span);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(3.14159265358979323846 * p));
}

}  // namespace wrenchfield::nn
