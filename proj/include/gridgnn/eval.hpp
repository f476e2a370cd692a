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

// Evaluation: one-step RMSE from true windows, closed-loop rollout with
// exogenous disturbance features, cumulative RMSE, a ridge-regression
// linear baseline, and the ablation runner.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridgnn/train.hpp"

namespace gridgnn {

/// Predicts normalized rates [N, 6] for current step k from normalized
/// window rows [N, 10 C].
using RatePredictor = std::function<Tensor(std::size_t k, const Tensor& rows)>;

inline RatePredictor model_predictor(Model& model, const GraphContext& graph) {
  return [&model, &graph](std::size_t, const Tensor& rows) {
    Tape tape;
    return model.forward(tape, rows, graph, Mode::kEval).value();
  };
}

/// E1 = sqrt(sum_k ||pred_k - true_k||_F^2 / (T N)) over all T steps, in
/// normalized rate units, predictions made from true windows.
inline double one_step_rmse(const RatePredictor& predict, const PreparedTrajectory& t) {
  if (t.steps < t.input_steps) throw ArgumentError("trajectory is shorter than the input window");
  double sse = 0.0;
  for (std::size_t k = 0; k < t.steps; ++k) {
    const Tensor p = predict(k, t.window_rows(k));
    for (std::size_t i = 0; i < t.n * 6; ++i) {
      const double d = p[i] - t.rates[k * t.n * 6 + i];
      sse += d * d;
    }
  }
  return std::sqrt(sse / static_cast<double>(t.steps * t.n));
}

/// Same metric, batching every step of the trajectory through the model in
/// chunks (identical up to GEMM summation order).
inline double one_step_rmse(Model& model, const GraphContext& graph, const PreparedTrajectory& t,
                            std::size_t chunk = 100) {
  if (t.steps < t.input_steps) throw ArgumentError("trajectory is shorter than the input window");
  const std::size_t n = t.n, width = model.input_width();
  double sse = 0.0;
  for (std::size_t k0 = 0; k0 < t.steps; k0 += chunk) {
    const std::size_t len = std::min(chunk, t.steps - k0);
    Tensor rows({len * n, width});
    for (std::size_t j = 0; j < len; ++j) t.fill_window_rows(k0 + j, rows.data() + j * n * width);
    Tape tape;
    const Tensor p = model.forward(tape, rows, graph, Mode::kEval).value();
    for (std::size_t i = 0; i < len * n * 6; ++i) {
      const double d = p[i] - t.rates[k0 * n * 6 + i];
      sse += d * d;
    }
  }
  return std::sqrt(sse / static_cast<double>(t.steps * n));
}

struct RolloutResult {
  std::size_t start = 0;
  Tensor states;  // [steps + 1, N, 6] physical; row 0 is the true state at `start`
  bool diverged = false;
  std::size_t diverged_step = 0;  // offset from start of the first bad state

  std::size_t steps() const { return states.dim(0) - 1; }
};

/// Closed-loop prediction from the true window ending at `start`: each step
/// assembles the window from the rollout's own measured states plus the
/// scheduled disturbance features and bus codes, predicts rates and takes
/// one explicit Euler step. A non-finite state or one whose normalized
/// magnitude exceeds 1e6 marks the rollout diverged; the partial trajectory
/// up to the last good state is returned.
inline RolloutResult rollout(const RatePredictor& predict, const PreparedTrajectory& t, const Normalizer& norm,
                             double dt, std::size_t start, std::size_t horizon) {
  if (horizon < 1) throw ArgumentError("rollout horizon must be >= 1");
  if (start + horizon > t.steps) throw ArgumentError("rollout runs past the end of the trajectory");
  const std::size_t n = t.n, c = t.input_steps, width = kStateDim * c;
  Tensor hist = t.inputs;  // normalized padded extended states; measured part overwritten as we go
  Tensor phys({horizon + 1, n, 6});
  std::copy(t.measured.data() + start * n * 6, t.measured.data() + (start + 1) * n * 6, phys.data());
  RolloutResult r;
  r.start = start;
  std::size_t done = 0;
  Tensor rows({n, width});
  for (std::size_t j = 0; j < horizon; ++j) {
    const std::size_t k = start + j;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < c; ++s) {
        const double* src = hist.data() + ((k + c - 1 - s) * n + b) * kStateDim;
        std::copy(src, src + kStateDim, rows.data() + b * width + s * kStateDim);
      }
    const Tensor rate = predict(k, rows);
    bool bad = false;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t f = 0; f < 6; ++f) {
        const double x = phys(j, b, f) + dt * norm.invert_rate(f, rate[b * 6 + f]);
        phys(j + 1, b, f) = x;
        const double xn = norm.apply_state(f, x);
        hist(k + c, b, f) = xn;
        if (!std::isfinite(xn) || std::abs(xn) > 1e6) bad = true;
      }
    if (bad) {
      r.diverged = true;
      r.diverged_step = j + 1;
      break;
    }
    done = j + 1;
  }
  r.states = Tensor({done + 1, n, 6}, std::vector<double>(phys.data(), phys.data() + (done + 1) * n * 6));
  return r;
}

/// sqrt(sum_{k=1..H} ||pred_k - true_k||_F^2 / (H N)) over the measured
/// features of [>= H + 1, N, 6] tensors given in the same units. Returns
/// +inf when the prediction is shorter than the horizon (diverged rollout).
inline double cumulative_rmse(const Tensor& pred, const Tensor& truth, std::size_t horizon) {
  if (horizon < 1) throw ArgumentError("horizon must be >= 1");
  if (truth.dim(0) < horizon + 1) throw ArgumentError("truth is shorter than the horizon");
  if (pred.dim(0) < horizon + 1) return std::numeric_limits<double>::infinity();
  const std::size_t row = pred.dim(1) * pred.dim(2);
  double sse = 0.0;
  for (std::size_t i = row; i < (horizon + 1) * row; ++i) {
    const double d = pred[i] - truth[i];
    sse += d * d;
  }
  return std::sqrt(sse / static_cast<double>(horizon * pred.dim(1)));
}

/// Rollout states and the matching true states, both normalized.
struct NormalizedPair {
  Tensor pred, truth;
};

inline NormalizedPair normalized_rollout_pair(const RolloutResult& r, const PreparedTrajectory& t,
                                              const Normalizer& norm) {
  const std::size_t n = t.n, len = r.states.dim(0);
  const Tensor truth({len * n, 6}, std::vector<double>(t.measured.data() + r.start * n * 6,
                                                       t.measured.data() + (r.start + len) * n * 6));
  return {norm.apply_measured(r.states.reshaped({len * n, 6})).reshaped({len, n, 6}),
          norm.apply_measured(truth).reshaped({len, n, 6})};
}

/// True measured states X^(start..start+h), normalized, [h + 1, N, 6].
inline Tensor normalized_truth(const PreparedTrajectory& t, const Normalizer& norm, std::size_t start, std::size_t h) {
  const std::size_t n = t.n;
  Tensor x({(h + 1) * n, 6}, std::vector<double>(t.measured.data() + start * n * 6,
                                                 t.measured.data() + (start + h + 1) * n * 6));
  return norm.apply_measured(x).reshaped({h + 1, n, 6});
}

// ---------------------------------------------------------------------------
// Linear baseline

/// One-step linear map: normalized rates = W [vec(window rows); 1], fitted by
/// ridge regression (lambda = 1e-8) through a QR solve of the augmented
/// least-squares system.
class LinearBaseline {
 public:
  LinearBaseline() = default;

  /// Samples are the steps k >= C - 1 of every given trajectory (windows
  /// entirely inside the record).
  static LinearBaseline fit(const std::vector<const PreparedTrajectory*>& trajs, double lambda = 1e-8) {
    if (trajs.empty()) throw ArgumentError("linear baseline: no training data");
    const std::size_t n = trajs[0]->n, c = trajs[0]->input_steps;
    const std::size_t f = n * kStateDim * c + 1, o = n * 6;
    std::size_t samples = 0;
    for (const auto* t : trajs) {
      if (t->n != n || t->input_steps != c) throw ArgumentError("linear baseline: inconsistent trajectories");
      if (t->steps >= c) samples += t->steps - (c - 1);
    }
    if (samples == 0) throw ArgumentError("linear baseline: trajectories are shorter than the window");
    Matrix x(static_cast<Eigen::Index>(samples + f), static_cast<Eigen::Index>(f));
    Matrix y = Matrix::Zero(static_cast<Eigen::Index>(samples + f), static_cast<Eigen::Index>(o));
    Eigen::Index r = 0;
    Tensor rows({n, kStateDim * c});
    for (const auto* t : trajs)
      for (std::size_t k = c - 1; k < t->steps; ++k, ++r) {
        t->fill_window_rows(k, rows.data());
        for (std::size_t i = 0; i + 1 < f; ++i) x(r, static_cast<Eigen::Index>(i)) = rows[i];
        x(r, static_cast<Eigen::Index>(f - 1)) = 1.0;
        for (std::size_t i = 0; i < o; ++i) y(r, static_cast<Eigen::Index>(i)) = t->rates[k * o + i];
      }
    x.bottomRows(static_cast<Eigen::Index>(f)) = std::sqrt(lambda) * Matrix::Identity(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(f));
    LinearBaseline b;
    b.n_ = n;
    b.input_steps_ = c;
    b.w_ = x.colPivHouseholderQr().solve(y).transpose();
    return b;
  }

  Tensor predict(const Tensor& rows) const {
    const std::size_t f = n_ * kStateDim * input_steps_;
    if (rows.size() != f) throw ArgumentError("linear baseline: window has the wrong size");
    const Vector v = w_.leftCols(static_cast<Eigen::Index>(f)) * Eigen::Map<const Vector>(rows.data(), static_cast<Eigen::Index>(f)) +
                     w_.col(static_cast<Eigen::Index>(f));
    Tensor out({n_, 6});
    for (std::size_t i = 0; i < n_ * 6; ++i) out[i] = v(static_cast<Eigen::Index>(i));
    return out;
  }

  RatePredictor predictor() const {
    return [this](std::size_t, const Tensor& rows) { return predict(rows); };
  }

  const Matrix& weights() const { return w_; }

 private:
  std::size_t n_ = 0, input_steps_ = 1;
  Matrix w_;
};

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  double one_step_rmse = 0.0;
  std::map<std::size_t, double> c_rmse;  // horizon -> pooled C-RMSE (inf when diverged)
  std::size_t trajectories = 0;
  std::size_t diverged = 0;
};

/// Pools E1 and C-RMSE over the given prepared trajectories. Rollouts start
/// at step C - 1 (first window fully inside the record); trajectories too
/// short for a horizon are skipped for that horizon.
inline MetricReport evaluate_predictor(const RatePredictor& predict, const std::vector<const PreparedTrajectory*>& trajs,
                                       const Normalizer& norm, double dt, const std::vector<std::size_t>& horizons,
                                       const std::function<double(const PreparedTrajectory&)>& e1 = {}) {
  MetricReport rep;
  rep.trajectories = trajs.size();
  double e1_sse = 0.0, e1_count = 0.0;
  for (const auto* t : trajs) {
    const double e = e1 ? e1(*t) : one_step_rmse(predict, *t);
    e1_sse += e * e * static_cast<double>(t->steps * t->n);
    e1_count += static_cast<double>(t->steps * t->n);
  }
  rep.one_step_rmse = e1_count > 0 ? std::sqrt(e1_sse / e1_count) : 0.0;
  std::size_t hmax = 0;
  for (std::size_t h : horizons) hmax = std::max(hmax, h);
  std::map<std::size_t, std::pair<double, double>> acc;
  for (const auto* t : trajs) {
    const std::size_t start = t->input_steps - 1;
    if (start + 1 > t->steps) continue;
    const std::size_t h = std::min(hmax, t->steps - start);
    const RolloutResult r = rollout(predict, *t, norm, dt, start, h);
    if (r.diverged) ++rep.diverged;
    const NormalizedPair p = normalized_rollout_pair(r, *t, norm);
    const Tensor truth = normalized_truth(*t, norm, start, h);
    for (std::size_t hz : horizons) {
      if (hz > h) continue;
      const double c = cumulative_rmse(p.pred, truth, hz);
      auto& a = acc[hz];
      a.first += c * c * static_cast<double>(hz * t->n);
      a.second += static_cast<double>(hz * t->n);
    }
  }
  for (std::size_t hz : horizons) {
    const auto it = acc.find(hz);
    rep.c_rmse[hz] = it == acc.end() || it->second.second == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                               : std::sqrt(it->second.first / it->second.second);
  }
  return rep;
}

inline std::vector<std::size_t> parse_horizons(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    const std::string tok = s.substr(pos, comma - pos);
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty() || v < 1) throw ArgumentError("invalid horizon list: " + s);
    out.push_back(static_cast<std::size_t>(v));
    pos = comma + 1;
  }
  return out;
}

inline std::string metric_csv_header(const std::vector<std::size_t>& horizons) {
  std::string h = "e1_one_step_rmse";
  for (std::size_t hz : horizons) h += ",c_rmse_" + std::to_string(hz);
  return h + ",trajectories,diverged";
}

inline std::string metric_csv_row(const MetricReport& r, const std::vector<std::size_t>& horizons) {
  std::string s = fmt_double(r.one_step_rmse);
  for (std::size_t hz : horizons) s += "," + fmt_double(r.c_rmse.at(hz));
  return s + "," + std::to_string(r.trajectories) + "," + std::to_string(r.diverged);
}

/// Per-bus trace: step, bus, feature, true, predicted (physical units).
inline std::string trace_csv(const RolloutResult& r, const PreparedTrajectory& t) {
  static const char* names[6] = {"P", "Q", "ReV", "ImV", "ReI", "ImI"};
  std::string out = "step,bus,feature,true,predicted\n";
  for (std::size_t j = 0; j < r.states.dim(0); ++j)
    for (std::size_t b = 0; b < t.n; ++b)
      for (std::size_t f = 0; f < 6; ++f)
        out += std::to_string(r.start + j) + "," + std::to_string(b) + "," + names[f] + "," +
               fmt_double(t.measured(r.start + j, b, f)) + "," + fmt_double(r.states(j, b, f)) + "\n";
  return out;
}

/// Evaluates a trained model on the test split of a dataset.
inline MetricReport evaluate_model(Model& model, const Normalizer& norm, const GraphContext& graph, const Dataset& ds,
                                   const std::vector<std::size_t>& horizons) {
  std::vector<PreparedTrajectory> test;
  for (std::size_t i : ds.indices(true))
    test.push_back(prepare_trajectory(ds, i, norm, static_cast<std::size_t>(model.config().input_steps)));
  std::vector<const PreparedTrajectory*> ptrs;
  for (const auto& t : test) ptrs.push_back(&t);
  return evaluate_predictor(model_predictor(model, graph), ptrs, norm, ds.dt(), horizons,
                            [&](const PreparedTrajectory& t) { return one_step_rmse(model, graph, t); });
}

/// Fits the ridge baseline on the training split and evaluates it on the
/// test split.
inline MetricReport evaluate_linear_baseline(const Dataset& ds, const Normalizer& norm, std::size_t input_steps,
                                             const std::vector<std::size_t>& horizons) {
  std::vector<PreparedTrajectory> train, test;
  for (std::size_t i : ds.indices(false)) train.push_back(prepare_trajectory(ds, i, norm, input_steps));
  for (std::size_t i : ds.indices(true)) test.push_back(prepare_trajectory(ds, i, norm, input_steps));
  std::vector<const PreparedTrajectory*> tr, te;
  for (const auto& t : train) tr.push_back(&t);
  for (const auto& t : test) te.push_back(&t);
  const LinearBaseline b = LinearBaseline::fit(tr);
  return evaluate_predictor(b.predictor(), te, norm, ds.dt(), horizons);
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationEntry {
  std::string name;
  ModelConfig model;
  double nu = 1.0;
};

struct AblationRow {
  AblationEntry entry;
  MetricReport report;
  std::size_t parameters = 0;
  LossBreakdown final_loss;
};

/// Grid file: {"base": model config, "train": train config,
/// "horizons": [..], "entries": [{"name", "model": overrides, "nu"}]}.
struct AblationGrid {
  TrainConfig train;
  std::vector<std::size_t> horizons{200, 700};
  std::vector<AblationEntry> entries;
};

inline AblationGrid parse_ablation_grid(const nlohmann::json& j) {
  AblationGrid g;
  try {
    const nlohmann::json base = j.value("base", nlohmann::json::object());
    if (j.contains("train")) g.train = j.at("train").get<TrainConfig>();
    if (j.contains("horizons")) g.horizons = j.at("horizons").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("entries")) {
      nlohmann::json m = base;
      if (e.contains("model")) m.update(e.at("model"));
      g.entries.push_back({e.at("name").get<std::string>(), m.get<ModelConfig>(), e.value("nu", 1.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed ablation grid: ") + e.what());
  }
  if (g.entries.empty()) throw ArgumentError("ablation grid has no entries");
  for (std::size_t h : g.horizons)
    if (h < 1) throw ArgumentError("ablation horizons must be >= 1");
  return g;
}

/// Trains and evaluates every entry with the same dataset and seed.
inline std::vector<AblationRow> ablation_run(const AblationGrid& grid, const Dataset& ds, std::uint64_t seed,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  for (const auto& e : grid.entries) {
    TrainConfig tc = grid.train;
    tc.seed = seed;
    tc.nu = e.nu;
    const TrainingData data = prepare_training(ds, e.model);
    TrainState st;
    st.model = Model(e.model, derive_seed(seed, 0x6d6f64656cULL));
    st.adam = Adam(st.model.params());
    train(st, data, tc);
    AblationRow row;
    row.entry = e;
    row.parameters = st.model.parameter_count();
    row.final_loss = st.history.back().loss;
    row.report = evaluate_model(st.model, data.normalizer, data.graph, ds, grid.horizons);
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<std::size_t>& horizons) {
  std::string out = "name,n_mlp_layers,n_gal,n_gcl,cheb_order,hidden,input_steps,nu,mp_steps,parameters," +
                    metric_csv_header(horizons) + ",final_l1,final_l2\n";
  for (const auto& r : rows) {
    const ModelConfig& m = r.entry.model;
    out += r.entry.name + "," + std::to_string(m.n_mlp_layers) + "," + std::to_string(m.n_gal) + "," +
           std::to_string(m.n_gcl) + "," + std::to_string(m.cheb_order) + "," + std::to_string(m.hidden) + "," +
           std::to_string(m.input_steps) + "," + fmt_double(r.entry.nu) + "," + std::to_string(effective_mp_steps(m)) +
           "," + std::to_string(r.parameters) + "," + metric_csv_row(r.report, horizons) + "," +
           fmt_double(r.final_loss.l1) + "," + fmt_double(r.final_loss.l2) + "\n";
  }
  return out;
}

}  // namespace gridgnn
