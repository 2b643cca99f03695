#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lesact/errors.hpp"
#include "lesact/nn/layers.hpp"

namespace lesact::nn {

/// Optimizer state, kept separate so checkpoints can persist it.
template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
};

/// Adam with bias-corrected moment estimates.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<Scalar>*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      state_.m.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      state_.v.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  /// Apply one update from the accumulated gradients. lr == 0 leaves the
  /// parameter values untouched (moments still advance).
  void step(double lr) {
    ++state_.step;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    const auto b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      m = b1 * m + (Scalar(1) - b1) * p.grad;
      v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseAbs2();
      if (lr == 0.0) continue;
      const auto step_size = static_cast<Scalar>(lr / c1);
      const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(c2));
      const auto eps = static_cast<Scalar>(eps_);
      p.value.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + eps);
    }
  }

  const AdamState<Scalar>& state() const { return state_; }

  void set_state(AdamState<Scalar> s) {
    if (s.m.size() != params_.size() || s.v.size() != params_.size())
      throw InvalidArgument("adam: state does not match parameter list");
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (s.m[i].rows() != params_[i]->value.rows() || s.m[i].cols() != params_[i]->value.cols() ||
          s.v[i].rows() != params_[i]->value.rows() || s.v[i].cols() != params_[i]->value.cols())
        throw InvalidArgument("adam: moment shape mismatch for " + params_[i]->name);
    state_ = std::move(s);
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  double beta1_, beta2_, eps_;
  AdamState<Scalar> state_;
};

}  // namespace lesact::nn
