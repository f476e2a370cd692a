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

// Prediction loss, Kirchhoff power-balance residual and explicit Euler
// integration. Bus states are ordered [P, Q, ReV, ImV, ReI, ImI].

#include <cmath>
#include <vector>

#include "gridgnn/tensor.hpp"

namespace gridgnn {

struct LossBreakdown {
  double l1 = 0.0;
  double l2 = 0.0;
  double nu = 1.0;
  double total = 0.0;
};

/// total = l1 + nu * l2.
inline LossBreakdown total_loss(double l1, double l2, double nu = 1.0) {
  if (!(nu >= 0.0)) throw ArgumentError("nu must be non-negative");
  LossBreakdown b{l1, l2, nu, l1 + nu * l2};
  if (!std::isfinite(b.total)) throw NumericalError("non-finite loss");
  return b;
}

/// |(P + iQ) - V conj(I)|^2 for one bus state.
inline double kirchhoff_residual(const double* s) {
  const double p = s[0], q = s[1], vr = s[2], vi = s[3], ir = s[4], ii = s[5];
  const double dp = p - (vr * ir + vi * ii);
  const double dq = q - (vi * ir - vr * ii);
  return dp * dp + dq * dq;
}

inline double kirchhoff_residual(const std::vector<double>& s) {
  if (s.size() != 6) throw ArgumentError("bus state must have 6 entries");
  return kirchhoff_residual(s.data());
}

/// Sum of squared Frobenius norms of the differences over a sequence of
/// equally shaped rate tensors.
inline double prediction_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth) {
  if (pred.size() != truth.size()) throw ArgumentError("prediction_loss: sequence lengths differ");
  double l = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].shape() != truth[k].shape())
      throw ArgumentError("prediction_loss: shape mismatch at step " + std::to_string(k));
    for (std::size_t i = 0; i < pred[k].size(); ++i) {
      const double d = pred[k][i] - truth[k][i];
      l += d * d;
    }
  }
  return l;
}

/// Sum of Kirchhoff residuals over every bus of every state in the sequence.
inline double kirchhoff_loss(const std::vector<Tensor>& states) {
  double l = 0.0;
  for (const Tensor& s : states) {
    if (s.cols() != 6) throw ArgumentError("kirchhoff_loss: states must have 6 columns");
    for (std::size_t r = 0; r < s.rows(); ++r) l += kirchhoff_residual(s.data() + r * 6);
  }
  return l;
}

/// X + dt * rates.
inline Tensor integrate_state(const Tensor& x, const Tensor& rates, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("integrate_state: dt must be positive");
  if (x.shape() != rates.shape()) throw ArgumentError("integrate_state: shape mismatch");
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += dt * rates[i];
  return y;
}

/// Tape op: squared Frobenius distance sum((a - b)^2).
inline Var squared_error(Var pred, Var truth) { return sum(square(sub(pred, truth))); }

/// Tape op: sum of Kirchhoff residuals over the rows of states [R, 6].
inline Var kirchhoff_loss(Var states) {
  detail::require_rank2(states, "kirchhoff_loss");
  if (states.shape()[1] != 6) throw ArgumentError("kirchhoff_loss: states must have 6 columns");
  const Tensor& s = states.value();
  const std::size_t r = s.rows();
  double l = 0.0;
  for (std::size_t i = 0; i < r; ++i) l += kirchhoff_residual(s.data() + i * 6);
  return states.tape->record(Tensor::scalar(l), {states}, [states, r](const Tensor& g, GradBuffer& gb) {
    Tensor* gs = gb.slot(states.id);
    if (!gs) return;
    const Tensor& s = states.value();
    for (std::size_t i = 0; i < r; ++i) {
      const double* x = s.data() + i * 6;
      double* d = gs->data() + i * 6;
      const double p = x[0], q = x[1], vr = x[2], vi = x[3], ir = x[4], ii = x[5];
      const double ep = 2.0 * g[0] * (p - (vr * ir + vi * ii));
      const double eq = 2.0 * g[0] * (q - (vi * ir - vr * ii));
      d[0] += ep;
      d[1] += eq;
      d[2] += -ep * ir + eq * ii;
      d[3] += -ep * ii - eq * ir;
      d[4] += -ep * vr - eq * vi;
      d[5] += -ep * vi + eq * vr;
    }
  });
}

/// Tape op: explicit Euler over windows of predicted rates. rates holds
/// [windows, steps, n] blocks of 6-feature rows; x0 holds the [windows, n]
/// starting states. Row (w, j, b) of the result is
/// x0(w, b) + dt * sum_{i <= j} rates(w, i, b), i.e. the predicted state one
/// step after step j of the window.
inline Var integrate_windows(Var x0, Var rates, std::size_t windows, std::size_t steps, std::size_t n, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("integrate_windows: dt must be positive");
  detail::require_rank2(x0, "integrate_windows");
  detail::require_rank2(rates, "integrate_windows");
  if (x0.shape() != Shape{windows * n, 6} || rates.shape() != Shape{windows * steps * n, 6})
    throw ArgumentError("integrate_windows: expected x0 [W*N, 6] and rates [W*S*N, 6]");
  const Tensor& xv = x0.value();
  const Tensor& rv = rates.value();
  Tensor y(rv.shape());
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t f = 0; f < 6; ++f) {
        double acc = xv[(w * n + b) * 6 + f];
        for (std::size_t j = 0; j < steps; ++j) {
          const std::size_t i = ((w * steps + j) * n + b) * 6 + f;
          acc += dt * rv[i];
          y[i] = acc;
        }
      }
  return rates.tape->record(std::move(y), {x0, rates}, [x0, rates, windows, steps, n, dt](const Tensor& g, GradBuffer& gb) {
    Tensor* gx = gb.slot(x0.id);
    Tensor* gr = gb.slot(rates.id);
    for (std::size_t w = 0; w < windows; ++w)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t f = 0; f < 6; ++f) {
          double acc = 0.0;
          for (std::size_t j = steps; j-- > 0;) {
            const std::size_t i = ((w * steps + j) * n + b) * 6 + f;
            acc += g[i];
            if (gr) (*gr)[i] += dt * acc;
          }
          if (gx) (*gx)[(w * n + b) * 6 + f] += acc;
        }
  });
}

}  // namespace gridgnn
