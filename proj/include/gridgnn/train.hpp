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

// Training: data preparation (normalization fitted on the training split),
// window sampling, Adam with a geometric learning-rate schedule, and the
// epoch loop over the prediction and Kirchhoff loss terms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridgnn/model.hpp"
#include "gridgnn/normalizer.hpp"
#include "gridgnn/physics.hpp"
#include "gridgnn/sim.hpp"

namespace gridgnn {

struct TrainConfig {
  int epochs = 500;
  double lr_start = 1e-3;
  double lr_end = 1e-7;
  double nu = 1.0;
  std::uint64_t seed = 0;
  int batch = 2;                     // windows per optimizer step
  int window_steps = 50;             // N_t
  int windows_per_trajectory = 1;    // windows drawn per training trajectory per epoch
  int complete_window_max_start = 250;  // complete responses: window start in [0, this]
  bool serial = true;

  void validate() const {
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (!(lr_start > lr_end && lr_end > 0.0)) throw ArgumentError("need lr_start > lr_end > 0");
    if (!(nu >= 0.0)) throw ArgumentError("nu must be non-negative");
    if (batch < 1 || window_steps < 1 || windows_per_trajectory < 1 || complete_window_max_start < 0)
      throw ArgumentError("batch, window_steps and windows_per_trajectory must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr_start", c.lr_start},
       {"lr_end", c.lr_end},
       {"nu", c.nu},
       {"seed", c.seed},
       {"batch", c.batch},
       {"window_steps", c.window_steps},
       {"windows_per_trajectory", c.windows_per_trajectory},
       {"complete_window_max_start", c.complete_window_max_start},
       {"serial", c.serial}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  try {
    c.epochs = j.value("epochs", d.epochs);
    c.lr_start = j.value("lr_start", d.lr_start);
    c.lr_end = j.value("lr_end", d.lr_end);
    c.nu = j.value("nu", d.nu);
    c.seed = j.value("seed", d.seed);
    c.batch = j.value("batch", d.batch);
    c.window_steps = j.value("window_steps", d.window_steps);
    c.windows_per_trajectory = j.value("windows_per_trajectory", d.windows_per_trajectory);
    c.complete_window_max_start = j.value("complete_window_max_start", d.complete_window_max_start);
    c.serial = j.value("serial", d.serial);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
}

/// lr(e) = lr_start (lr_end / lr_start)^(e / (E - 1)); E = 1 gives lr_start.
inline double lr_schedule(int epoch, const TrainConfig& c) {
  if (c.epochs <= 1) return c.lr_start;
  if (epoch == c.epochs - 1) return c.lr_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(c.epochs - 1);
  return c.lr_start * std::pow(c.lr_end / c.lr_start, t);
}

/// Bias-corrected Adam with per-parameter first and second moments.
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Adam() = default;
  explicit Adam(const ParameterSet& params) {
    for (const auto& p : params.items()) {
      m_.emplace(p.name, Tensor(p.value.shape(), 0.0));
      v_.emplace(p.name, Tensor(p.value.shape(), 0.0));
    }
  }

  /// Parameters without an entry in `grads` get a zero gradient.
  void step(ParameterSet& params, const GradientMap& grads, double lr) {
    for (const auto& [name, g] : grads) {
      if (!params.contains(name)) throw ArgumentError("gradient for unknown parameter " + name);
      if (g.shape() != params.at(name).value.shape())
        throw ArgumentError("gradient shape mismatch for " + name + ": " + shape_str(g.shape()) + " vs " +
                            shape_str(params.at(name).value.shape()));
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& p : params.items()) {
      Tensor& m = moment(m_, p);
      Tensor& v = moment(v_, p);
      const auto it = grads.find(p.name);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = it == grads.end() ? 0.0 : it->second[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  std::map<std::string, Tensor>& first() { return m_; }
  std::map<std::string, Tensor>& second() { return v_; }
  const std::map<std::string, Tensor>& first() const { return m_; }
  const std::map<std::string, Tensor>& second() const { return v_; }

 private:
  static Tensor& moment(std::map<std::string, Tensor>& store, const Parameter& p) {
    auto it = store.find(p.name);
    if (it == store.end()) it = store.emplace(p.name, Tensor(p.value.shape(), 0.0)).first;
    if (it->second.shape() != p.value.shape()) throw ArgumentError("moment shape mismatch for " + p.name);
    return it->second;
  }

  std::map<std::string, Tensor> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Data preparation

/// One trajectory in model units. Snapshot index k of the trajectory is
/// stored at row k + C - 1 of `inputs`; the C - 1 leading rows repeat X^(0)
/// with zero disturbance features (the system rests at X^(0) before the
/// record starts).
struct PreparedTrajectory {
  std::size_t index = 0;  // position in the dataset
  TrajectoryKind kind = TrajectoryKind::kComplete;
  std::size_t steps = 0;  // T
  std::size_t n = 0;
  std::size_t input_steps = 1;
  Tensor inputs;      // [T + C, N, 10] normalized extended states (padded)
  Tensor rates;       // [T, N, 6] normalized forward-difference rates
  Tensor measured;    // [T + 1, N, 6] physical measured states
  Tensor extended;    // [T + 1, N, 10] physical extended states

  /// Model input rows [N, 10 C] for current step k (current first).
  Tensor window_rows(std::size_t k) const {
    Tensor rows({n, kStateDim * input_steps});
    fill_window_rows(k, rows.data());
    return rows;
  }

  void fill_window_rows(std::size_t k, double* out) const {
    const std::size_t width = kStateDim * input_steps;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < input_steps; ++s) {
        const double* src = inputs.data() + ((k + input_steps - 1 - s) * n + b) * kStateDim;
        std::copy(src, src + kStateDim, out + b * width + s * kStateDim);
      }
  }
};

/// Extended states with the pre-record padding applied: X^(0) repeated with
/// zero disturbance features.
inline Tensor padded_extended(const Tensor& extended, std::size_t input_steps) {
  const std::size_t t1 = extended.dim(0), n = extended.dim(1);
  const std::size_t pad = input_steps - 1;
  Tensor out({t1 + pad, n, kStateDim});
  for (std::size_t p = 0; p < pad; ++p)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t f = 0; f < kStateDim; ++f) out(p, b, f) = (f >= 6 && f <= 8) ? 0.0 : extended(0, b, f);
  std::copy(extended.data(), extended.data() + extended.size(), out.data() + pad * n * kStateDim);
  return out;
}

inline PreparedTrajectory prepare_trajectory(const Dataset& ds, std::size_t index, const Normalizer& norm,
                                             std::size_t input_steps) {
  const Trajectory& t = ds.trajectories.at(index);
  PreparedTrajectory p;
  p.index = index;
  p.kind = t.kind;
  p.steps = t.steps();
  p.n = t.n();
  p.input_steps = input_steps;
  p.measured = t.states;
  p.extended = build_extended_states(t, ds.grid.betas());
  p.inputs = norm.apply_states(padded_extended(p.extended, input_steps));
  p.rates = norm.apply_rates(trajectory_rates(t, ds.dt()));
  return p;
}

/// Min-max statistics over the extended states and rates of the given
/// trajectories (the training split).
inline Normalizer fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("fit_normalizer: no training trajectories");
  std::vector<Tensor> ext, rates;
  for (std::size_t i : indices) {
    ext.push_back(build_extended_states(ds.trajectories.at(i), ds.grid.betas()));
    rates.push_back(trajectory_rates(ds.trajectories.at(i), ds.dt()));
  }
  std::vector<const Tensor*> e, r;
  for (const auto& t : ext) e.push_back(&t);
  for (const auto& t : rates) r.push_back(&t);
  return Normalizer::fit(e, r);
}

/// Hash identifying the trajectories a normalizer was fitted on.
inline std::string split_hash(const std::vector<std::size_t>& indices) {
  return hex64(fnv1a(nlohmann::json(indices).dump()));
}

struct TrainingData {
  Normalizer normalizer;
  std::vector<std::size_t> normalizer_source;  // trajectory indices used for fitting
  GraphContext graph;
  double dt = 1e-3;
  std::vector<PreparedTrajectory> train;
};

/// Fits the normalizer on the training split only and prepares every
/// training trajectory.
inline TrainingData prepare_training(const Dataset& ds, const ModelConfig& cfg, double scaling_k = 0.0) {
  TrainingData d;
  d.normalizer_source = ds.indices(false);
  d.normalizer = fit_normalizer(ds, d.normalizer_source);
  d.graph = GraphContext::from(ds.grid.graph, scaling_k);
  d.dt = ds.dt();
  for (std::size_t i : d.normalizer_source)
    d.train.push_back(prepare_trajectory(ds, i, d.normalizer, static_cast<std::size_t>(cfg.input_steps)));
  return d;
}

// ---------------------------------------------------------------------------
// Loss on a batch of windows

struct WindowRef {
  std::size_t trajectory = 0;  // position in TrainingData::train
  std::size_t start = 0;       // k0
};

struct BatchLoss {
  Var total;
  double l1 = 0.0;
  double l2 = 0.0;
};

/// Forward pass over every step of every window at once. L1 is the squared
/// error of normalized rates; L2 is the Kirchhoff residual of the states
/// obtained by integrating the de-normalized predicted rates from the true
/// state at the start of each window.
inline BatchLoss window_loss(Tape& tape, Model& model, const TrainingData& data, const std::vector<WindowRef>& windows,
                             std::size_t steps, double nu, Mode mode) {
  const std::size_t n = data.graph.n, w = windows.size();
  const std::size_t width = model.input_width();
  Tensor inputs({w * steps * n, width}), target({w * steps * n, 6}), x0({w * n, 6});
  for (std::size_t a = 0; a < w; ++a) {
    const PreparedTrajectory& t = data.train.at(windows[a].trajectory);
    const std::size_t k0 = windows[a].start;
    if (k0 + steps > t.steps) throw ArgumentError("window exceeds trajectory length");
    for (std::size_t j = 0; j < steps; ++j) {
      const std::size_t row = (a * steps + j) * n;
      t.fill_window_rows(k0 + j, inputs.data() + row * width);
      std::copy(t.rates.data() + (k0 + j) * n * 6, t.rates.data() + (k0 + j + 1) * n * 6, target.data() + row * 6);
    }
    std::copy(t.measured.data() + k0 * n * 6, t.measured.data() + (k0 + 1) * n * 6, x0.data() + a * n * 6);
  }
  Var pred = model.forward(tape, inputs, data.graph, mode);
  Var l1 = squared_error(pred, tape.constant(target));

  Tensor slope({6}), offset({6});
  for (std::size_t f = 0; f < 6; ++f) {
    slope[f] = data.normalizer.rate_slope(f);
    offset[f] = data.normalizer.rate_offset(f);
  }
  Var rates = add_row(mul_row(pred, tape.constant(slope)), tape.constant(offset));
  Var states = integrate_windows(tape.constant(x0), rates, w, steps, n, data.dt);
  Var l2 = kirchhoff_loss(states);

  BatchLoss out;
  out.l1 = l1.value()[0];
  out.l2 = l2.value()[0];
  out.total = nu == 0.0 ? l1 : add(l1, scalar_mul(l2, nu));
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // sums over the epoch's windows
  double lr = 0.0;
};

struct TrainState {
  Model model;
  Adam adam;
  std::vector<EpochRecord> history;
  int next_epoch = 0;
};

/// Windows for one epoch: every training trajectory contributes
/// `windows_per_trajectory` windows in a shuffled order. Complete responses
/// draw their start in [0, complete_window_max_start]; initial responses
/// anywhere.
inline std::vector<WindowRef> epoch_windows(const TrainingData& data, const TrainConfig& cfg, int epoch) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
  const auto steps = static_cast<std::size_t>(cfg.window_steps);
  std::vector<WindowRef> out;
  for (int r = 0; r < cfg.windows_per_trajectory; ++r)
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      const PreparedTrajectory& t = data.train[i];
      if (t.steps < steps) continue;
      std::size_t hi = t.steps - steps;
      if (t.kind == TrajectoryKind::kComplete)
        hi = std::min(hi, static_cast<std::size_t>(cfg.complete_window_max_start));
      out.push_back({i, rng.index(hi + 1)});
    }
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.index(i)]);
  if (out.empty()) throw ArgumentError("no training trajectory is longer than the window");
  return out;
}

/// Replaces every batch-norm running estimate with the statistics of one
/// train-mode pass over a fixed set of training windows: evenly spaced starts
/// over each trajectory's window range, at most `max_windows` in total. The
/// exponential averages collected during training mix heterogeneous small
/// batches and are a poor stand-in for the population.
inline void calibrate_batch_norm(Model& model, const TrainingData& data, const TrainConfig& cfg,
                                 std::size_t max_windows = 64) {
  const auto steps = static_cast<std::size_t>(cfg.window_steps);
  std::vector<const PreparedTrajectory*> usable;
  for (const PreparedTrajectory& t : data.train)
    if (t.steps >= steps) usable.push_back(&t);
  if (usable.empty() || model.bn_states().empty()) return;
  const std::size_t per = std::clamp<std::size_t>(max_windows / usable.size(), 1, 6);
  std::vector<WindowRef> windows;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const PreparedTrajectory& t = data.train[i];
    if (t.steps < steps) continue;
    std::size_t hi = t.steps - steps;
    if (t.kind == TrajectoryKind::kComplete) hi = std::min(hi, static_cast<std::size_t>(cfg.complete_window_max_start));
    for (std::size_t k = 0; k < per && windows.size() < max_windows; ++k)
      windows.push_back({i, per == 1 ? 0 : k * hi / (per - 1)});
  }
  std::map<std::string, double> momentum;
  for (auto& [name, bn] : model.bn_states()) {
    momentum[name] = bn.momentum;
    bn.momentum = 1.0;
  }
  {
    Tape tape;
    window_loss(tape, model, data, windows, steps, cfg.nu, Mode::kTrain);
  }
  for (auto& [name, bn] : model.bn_states()) bn.momentum = momentum.at(name);
}

/// Runs epochs [state.next_epoch, cfg.epochs), or up to stop_epoch when it is
/// non-negative (the schedule still spans cfg.epochs). `on_epoch` is called after
/// each epoch (checkpointing, progress). After the final epoch of the
/// schedule the batch-norm statistics are recalibrated. Throws NumericalError
/// naming the epoch and trajectory when a loss becomes non-finite.
inline void train(TrainState& state, const TrainingData& data, const TrainConfig& cfg,
                  const std::function<void(const TrainState&)>& on_epoch = {}, int stop_epoch = -1) {
  cfg.validate();
  const auto steps = static_cast<std::size_t>(cfg.window_steps);
  const int end = stop_epoch >= 0 ? std::min(stop_epoch, cfg.epochs) : cfg.epochs;
  for (int e = state.next_epoch; e < end; ++e) {
    const double lr = lr_schedule(e, cfg);
    const std::vector<WindowRef> windows = epoch_windows(data, cfg, e);
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    double l1 = 0.0, l2 = 0.0;
    for (std::size_t b = 0; b < windows.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::vector<WindowRef> batch(windows.begin() + static_cast<std::ptrdiff_t>(b),
                                         windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), b + static_cast<std::size_t>(cfg.batch))));
      Tape tape;
      const BatchLoss loss = window_loss(tape, state.model, data, batch, steps, cfg.nu, Mode::kTrain);
      const double total = loss.total.value()[0];
      if (!std::isfinite(loss.l1) || !std::isfinite(loss.l2) || !std::isfinite(total)) {
        std::string ids;
        for (const auto& w : batch) ids += (ids.empty() ? "" : ",") + std::to_string(data.train[w.trajectory].index);
        throw NumericalError("non-finite loss at epoch " + std::to_string(e) + ", trajectory " + ids);
      }
      const GradientMap grads = tape.backward(loss.total);
      state.adam.step(state.model.params(), grads, lr);
      l1 += loss.l1;
      l2 += loss.l2;
    }
    rec.loss = total_loss(l1, l2, cfg.nu);
    state.history.push_back(rec);
    state.next_epoch = e + 1;
    if (state.next_epoch == cfg.epochs) calibrate_batch_norm(state.model, data, cfg);
    if (on_epoch) on_epoch(state);
  }
}

inline std::string history_csv(const std::vector<EpochRecord>& h) {
  std::string out = "epoch,l1,l2,total,lr\n";
  for (const auto& r : h)
    out += std::to_string(r.epoch) + "," + fmt_double(r.loss.l1) + "," + fmt_double(r.loss.l2) + "," +
           fmt_double(r.loss.total) + "," + fmt_double(r.lr) + "\n";
  return out;
}

}  // namespace gridgnn
