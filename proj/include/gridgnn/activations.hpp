/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>

#include "gridgnn/tensor.hpp"

namespace gridgnn {

/// x for x >= 0, epsilon * x otherwise.
inline Var leaky_relu(Var x, double epsilon = 0.2) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ArgumentError("leaky_relu: epsilon must be in (0, 1)");
  return detail::unary(
      x, [epsilon](double v) { return v >= 0.0 ? v : epsilon * v; },
      [epsilon](double v) { return v >= 0.0 ? 1.0 : epsilon; });
}

/// x for x >= 0, theta * x otherwise; theta is a learnable scalar.
inline Var prelu(Var x, Var theta) {
  if (theta.size() != 1) throw ArgumentError("prelu: theta must be a scalar");
  const Tensor& xv = x.value();
  const double t = theta.value()[0];
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] >= 0.0 ? xv[i] : t * xv[i];
  return x.tape->record(std::move(y), {x, theta}, [x, theta](const Tensor& g, GradBuffer& gb) {
    const Tensor& xv = x.value();
    if (Tensor* gx = gb.slot(x.id)) {
      const double t = theta.value()[0];
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += xv[i] >= 0.0 ? g[i] : t * g[i];
    }
    if (Tensor* gt = gb.slot(theta.id)) {
      double s = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] < 0.0) s += g[i] * xv[i];
      (*gt)[0] += s;
    }
  });
}

enum class Mode { kTrain, kEval };

/// Running statistics of one batch-norm layer (not trainable).
struct BNState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BNState() = default;
  explicit BNState(std::size_t features)
      : running_mean({features}, 0.0), running_var({features}, 1.0) {}
};

/// Per-feature normalization over the rows of x [R, D], followed by the
/// learnable scale gamma [D] and shift beta [D]. Train mode uses batch
/// statistics (biased variance) and updates the running estimates
/// (unbiased variance); eval mode uses the running estimates.
inline Var batch_norm(Var x, BNState& state, Mode mode, Var gamma, Var beta) {
  detail::require_rank2(x, "batch_norm");
  const std::size_t r = x.shape()[0], d = x.shape()[1];
  if (gamma.size() != d || beta.size() != d) throw ArgumentError("batch_norm: gamma/beta size mismatch");
  if (state.running_mean.size() != d) throw ArgumentError("batch_norm: state has wrong feature count");
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  if (mode == Mode::kEval) {
    Tensor y({r, d});
    std::vector<double> inv(d);
    for (std::size_t j = 0; j < d; ++j) inv[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    const Tensor mu = state.running_mean;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < d; ++j)
        y[i * d + j] = (xv[i * d + j] - mu[j]) * inv[j] * gv[j] + bv[j];
    return x.tape->record(std::move(y), {x, gamma, beta},
                          [x, gamma, beta, inv, mu, r, d](const Tensor& g, GradBuffer& gb) {
                            const Tensor& xv = x.value();
                            const Tensor& gv = gamma.value();
                            Tensor* gx = gb.slot(x.id);
                            Tensor* gg = gb.slot(gamma.id);
                            Tensor* gbt = gb.slot(beta.id);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < d; ++j) {
                                const double dy = g[i * d + j];
                                if (gx) (*gx)[i * d + j] += dy * gv[j] * inv[j];
                                if (gg) (*gg)[j] += dy * (xv[i * d + j] - mu[j]) * inv[j];
                                if (gbt) (*gbt)[j] += dy;
                              }
                          });
  }

  if (r < 2) throw ArgumentError("batch_norm: train mode needs at least 2 rows");
  std::vector<double> mu(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += xv[i * d + j];
  for (double& m : mu) m /= static_cast<double>(r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - mu[j];
      var[j] += c * c;
    }
  for (double& v : var) v /= static_cast<double>(r);

  std::vector<double> inv(d);
  for (std::size_t j = 0; j < d; ++j) inv[j] = 1.0 / std::sqrt(var[j] + state.eps);
  Tensor xhat({r, d});
  Tensor y({r, d});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - mu[j]) * inv[j];
      xhat[i * d + j] = h;
      y[i * d + j] = h * gv[j] + bv[j];
    }

  const double m = state.momentum;
  const double unbias = static_cast<double>(r) / static_cast<double>(r - 1);
  for (std::size_t j = 0; j < d; ++j) {
    state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mu[j];
    state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j] * unbias;
  }

  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), r, d](const Tensor& g, GradBuffer& gb) {
        const Tensor& gv = gamma.value();
        Tensor* gg = gb.slot(gamma.id);
        Tensor* gbt = gb.slot(beta.id);
        std::vector<double> sum_dy(d, 0.0), sum_dy_xhat(d, 0.0);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            sum_dy[j] += g[i * d + j];
            sum_dy_xhat[j] += g[i * d + j] * xhat[i * d + j];
          }
        if (gg)
          for (std::size_t j = 0; j < d; ++j) (*gg)[j] += sum_dy_xhat[j];
        if (gbt)
          for (std::size_t j = 0; j < d; ++j) (*gbt)[j] += sum_dy[j];
        if (Tensor* gx = gb.slot(x.id)) {
          const double rn = static_cast<double>(r);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              const double dxhat = g[i * d + j] * gv[j];
              // dx = inv/R * (R dxhat - sum(dxhat) - xhat * sum(dxhat xhat))
              (*gx)[i * d + j] +=
                  inv[j] / rn *
                  (rn * dxhat - gv[j] * sum_dy[j] - xhat[i * d + j] * gv[j] * sum_dy_xhat[j]);
            }
        }
      });
}

}  // namespace gridgnn
