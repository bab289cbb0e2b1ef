// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "mfa/tensor.hpp"

namespace mfa {

/// Adam with decoupled weight decay. State is keyed by tensor name.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW() = default;
  explicit AdamW(Options opts) : opts_(opts) {}

  void begin_step() { ++step_; }
  long step() const noexcept { return step_; }

  void update(const std::string& name, Matrix& param, const Matrix& grad, double lr, double weight_decay) {
    auto& st = state_[name];
    if (st.m.size() == 0) {
      st.m = Matrix::Zero(param.rows(), param.cols());
      st.v = Matrix::Zero(param.rows(), param.cols());
    }
    st.m = opts_.beta1 * st.m + (1.0 - opts_.beta1) * grad;
    st.v = opts_.beta2 * st.v + (1.0 - opts_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    if (weight_decay != 0.0) param -= (lr * weight_decay) * param;
    param.array() -= lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + opts_.eps);
  }

 private:
  struct State {
    Matrix m, v;
  };
  Options opts_;
  long step_ = 0;
  std::map<std::string, State> state_;
};

/// Cosine decay from `base` to 0 over `total` steps.
inline double cosine_lr(double base, long step, long total) {
  if (total <= 0) return base;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace mfa
