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

// Per-feature min-max scaling of extended states (10 features) and rates
// (6 features) to [0, 1]. Constant features map to 0.5.

#include <algorithm>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridgnn/tensor.hpp"

namespace gridgnn {

class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> state_min, std::vector<double> state_max, std::vector<double> rate_min,
             std::vector<double> rate_max)
      : state_min_(std::move(state_min)),
        state_max_(std::move(state_max)),
        rate_min_(std::move(rate_min)),
        rate_max_(std::move(rate_max)) {
    check();
  }

  /// Fits on row-major feature blocks: each tensor's last axis is the
  /// feature axis (10 for states, 6 for rates).
  static Normalizer fit(const std::vector<const Tensor*>& states, const std::vector<const Tensor*>& rates) {
    Normalizer n;
    fit_block(states, 10, n.state_min_, n.state_max_, "states");
    fit_block(rates, 6, n.rate_min_, n.rate_max_, "rates");
    return n;
  }

  bool fitted() const { return state_min_.size() == 10 && rate_min_.size() == 6; }

  double apply_state(std::size_t f, double x) const { return scale(x, state_min_[f], state_max_[f]); }
  double invert_state(std::size_t f, double y) const { return unscale(y, state_min_[f], state_max_[f]); }
  double apply_rate(std::size_t f, double x) const { return scale(x, rate_min_[f], rate_max_[f]); }
  double invert_rate(std::size_t f, double y) const { return unscale(y, rate_min_[f], rate_max_[f]); }

  /// Elementwise over a tensor whose last axis holds the 10 state features.
  Tensor apply_states(const Tensor& t) const { return map(t, 10, [&](std::size_t f, double v) { return apply_state(f, v); }); }
  Tensor invert_states(const Tensor& t) const { return map(t, 10, [&](std::size_t f, double v) { return invert_state(f, v); }); }
  /// Measured states only (first 6 features).
  Tensor apply_measured(const Tensor& t) const { return map(t, 6, [&](std::size_t f, double v) { return apply_state(f, v); }); }
  Tensor invert_measured(const Tensor& t) const { return map(t, 6, [&](std::size_t f, double v) { return invert_state(f, v); }); }
  Tensor apply_rates(const Tensor& t) const { return map(t, 6, [&](std::size_t f, double v) { return apply_rate(f, v); }); }
  Tensor invert_rates(const Tensor& t) const { return map(t, 6, [&](std::size_t f, double v) { return invert_rate(f, v); }); }

  /// Affine form of invert_rate: phys = offset + slope * normalized.
  double rate_slope(std::size_t f) const { return rate_max_[f] - rate_min_[f]; }
  double rate_offset(std::size_t f) const { return rate_min_[f]; }
  double state_slope(std::size_t f) const { return state_max_[f] - state_min_[f]; }
  double state_offset(std::size_t f) const { return state_min_[f]; }

  const std::vector<double>& state_min() const { return state_min_; }
  const std::vector<double>& state_max() const { return state_max_; }
  const std::vector<double>& rate_min() const { return rate_min_; }
  const std::vector<double>& rate_max() const { return rate_max_; }

  friend void to_json(nlohmann::json& j, const Normalizer& n) {
    j = {{"state_min", n.state_min_}, {"state_max", n.state_max_}, {"rate_min", n.rate_min_}, {"rate_max", n.rate_max_}};
  }
  friend void from_json(const nlohmann::json& j, Normalizer& n) {
    n = Normalizer(j.at("state_min").get<std::vector<double>>(), j.at("state_max").get<std::vector<double>>(),
                   j.at("rate_min").get<std::vector<double>>(), j.at("rate_max").get<std::vector<double>>());
  }

 private:
  static double scale(double x, double lo, double hi) { return hi == lo ? 0.5 : (x - lo) / (hi - lo); }
  static double unscale(double y, double lo, double hi) { return hi == lo ? lo : lo + y * (hi - lo); }

  template <class F>
  static Tensor map(const Tensor& t, std::size_t width, F f) {
    if (t.cols() != width)
      throw ArgumentError("normalizer: expected " + std::to_string(width) + " features, got " + shape_str(t.shape()));
    Tensor y = t;
    for (std::size_t i = 0; i < t.size(); ++i) y[i] = f(i % width, t[i]);
    return y;
  }

  static void fit_block(const std::vector<const Tensor*>& blocks, std::size_t width, std::vector<double>& lo,
                        std::vector<double>& hi, const char* what) {
    lo.assign(width, std::numeric_limits<double>::infinity());
    hi.assign(width, -std::numeric_limits<double>::infinity());
    bool any = false;
    for (const Tensor* t : blocks) {
      if (t->cols() != width) throw ArgumentError(std::string("normalizer: ") + what + " have the wrong feature count");
      for (std::size_t i = 0; i < t->size(); ++i) {
        const std::size_t f = i % width;
        lo[f] = std::min(lo[f], (*t)[i]);
        hi[f] = std::max(hi[f], (*t)[i]);
        any = true;
      }
    }
    if (!any) throw ArgumentError(std::string("normalizer: no ") + what + " to fit");
  }

  void check() const {
    if (state_min_.size() != 10 || state_max_.size() != 10 || rate_min_.size() != 6 || rate_max_.size() != 6)
      throw ArgumentError("normalizer: expected 10 state and 6 rate features");
    for (std::size_t f = 0; f < 10; ++f)
      if (state_max_[f] < state_min_[f]) throw ArgumentError("normalizer: max < min");
    for (std::size_t f = 0; f < 6; ++f)
      if (rate_max_[f] < rate_min_[f]) throw ArgumentError("normalizer: max < min");
  }

  std::vector<double> state_min_, state_max_, rate_min_, rate_max_;
};

}  // namespace gridgnn
