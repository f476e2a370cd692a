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

// Networked-microgrid transient surrogate. Each DER is an EMF E<delta behind
// a reactance with swing-type angle dynamics, angle droop and a first-order
// reactive-power/voltage droop; loads are constant impedances sized from
// their demand at 1 pu; non-load, non-DER buses carry shunt capacitor
// banks. The network is solved algebraically every step, so every emitted
// bus state satisfies S = V conj(I) to rounding.

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "gridgnn/error.hpp"
#include "gridgnn/graph.hpp"
#include "gridgnn/physics.hpp"
#include "gridgnn/tensor.hpp"
#include "gridgnn/util.hpp"

namespace gridgnn {

using ComplexVector = Eigen::VectorXcd;

struct DerParams {
  int bus = 0;
  double inertia = 0.0025;      // M
  double damping = 0.125;       // d
  double angle_droop = 2.0;     // restoring gain on the absolute angle
  double voltage_tau = 0.02;    // EMF time constant (s)
  double reactive_droop = 0.1;  // EMF change per pu reactive-power error
  double reactance = 0.15;      // internal reactance X_d
  double share = 1.0;           // fraction of the total demand dispatched
};

struct LoadParams {
  int bus = 0;
  double p0 = 0.0;
  double q0 = 0.0;
};

struct ShuntParams {
  int bus = 0;
  double susceptance = 0.0;
};

/// Data-generation protocol attached to a grid.
struct Protocol {
  double base_load_lo = 0.75;   // base loads drawn in [lo, hi] x nominal
  double base_load_hi = 1.25;
  double event_fraction = 0.10; // |dP| <= fraction * P0
  int complete_steps = 1000;
  int event_interval = 10;      // steps between events in initial responses
  int initial_chunk_events = 100;
  double load_lo = 0.6;         // initial responses keep loads in [lo, hi] x nominal
  double load_hi = 1.4;
  double test_fraction = 1.0 / 3.0;
};

struct GridSpec {
  std::string name;
  PowerGraph graph;
  std::vector<DerParams> ders;
  std::vector<LoadParams> loads;
  std::vector<ShuntParams> shunts;
  double dt = 1e-3;
  Protocol protocol;

  std::size_t n() const { return static_cast<std::size_t>(graph.n_buses); }

  void validate() {
    graph.validate();
    if (ders.empty()) throw StructuralError("grid needs at least one DER");
    if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
    std::vector<int> der_count(n(), 0), load_count(n(), 0), shunt_count(n(), 0);
    auto check_bus = [&](int b, const char* what) {
      if (b < 0 || b >= graph.n_buses) throw StructuralError(std::string(what) + " bus index out of range");
      return static_cast<std::size_t>(b);
    };
    for (const auto& d : ders) {
      ++der_count[check_bus(d.bus, "DER")];
      if (!(d.inertia > 0.0) || !(d.damping > 0.0) || !(d.voltage_tau > 0.0) || !(d.reactance > 0.0) ||
          d.angle_droop < 0.0 || d.reactive_droop < 0.0 || d.share < 0.0)
        throw StructuralError("DER at bus " + std::to_string(d.bus) + " has invalid parameters");
    }
    for (const auto& l : loads) {
      ++load_count[check_bus(l.bus, "load")];
      if (l.p0 < 0.0 || l.q0 < 0.0) throw StructuralError("load demand must be non-negative");
    }
    for (const auto& s : shunts) ++shunt_count[check_bus(s.bus, "shunt")];
    for (std::size_t i = 0; i < n(); ++i) {
      if (der_count[i] > 1 || load_count[i] > 1 || shunt_count[i] > 1)
        throw StructuralError("bus " + std::to_string(i) + " has duplicate devices");
      const BusType expect = der_count[i] ? BusType::kDer : load_count[i] ? BusType::kLoad : BusType::kEmpty;
      if (graph.bus_types[i] != expect)
        throw StructuralError("bus " + std::to_string(i) + " type code disagrees with its devices");
    }
    double share = 0.0;
    for (const auto& d : ders) share += d.share;
    if (std::abs(share - 1.0) > 1e-9) throw StructuralError("DER shares must sum to 1");
    const Protocol& p = protocol;
    if (!(p.base_load_lo > 0.0 && p.base_load_lo <= p.base_load_hi) || !(p.event_fraction >= 0.0) ||
        p.complete_steps < 1 || p.event_interval < 1 || p.initial_chunk_events < 1 ||
        !(p.load_lo <= p.base_load_lo && p.base_load_hi <= p.load_hi) || !(p.test_fraction >= 0.0 && p.test_fraction < 1.0))
      throw ArgumentError("invalid data-generation protocol");
  }

  /// Per-bus type code: 0 empty, 0.5 load, 1 DER.
  std::vector<double> betas() const {
    std::vector<double> b;
    for (auto t : graph.bus_types) b.push_back(bus_type_code(t));
    return b;
  }
};

inline void to_json(nlohmann::json& j, const GridSpec& s) {
  nlohmann::json ders = nlohmann::json::array(), loads = nlohmann::json::array(), shunts = nlohmann::json::array();
  for (const auto& d : s.ders)
    ders.push_back({{"bus", d.bus}, {"inertia", d.inertia}, {"damping", d.damping}, {"angle_droop", d.angle_droop},
                    {"voltage_tau", d.voltage_tau}, {"reactive_droop", d.reactive_droop},
                    {"reactance", d.reactance}, {"share", d.share}});
  for (const auto& l : s.loads) loads.push_back({{"bus", l.bus}, {"p0", l.p0}, {"q0", l.q0}});
  for (const auto& h : s.shunts) shunts.push_back({{"bus", h.bus}, {"susceptance", h.susceptance}});
  const Protocol& p = s.protocol;
  j = {{"name", s.name},
       {"dt", s.dt},
       {"topology", s.graph},
       {"ders", ders},
       {"loads", loads},
       {"shunts", shunts},
       {"protocol",
        {{"base_load_range", {p.base_load_lo, p.base_load_hi}},
         {"event_fraction", p.event_fraction},
         {"complete_steps", p.complete_steps},
         {"event_interval", p.event_interval},
         {"initial_chunk_events", p.initial_chunk_events},
         {"load_bounds", {p.load_lo, p.load_hi}},
         {"test_fraction", p.test_fraction}}}};
}

inline void from_json(const nlohmann::json& j, GridSpec& s) {
  try {
    s = GridSpec{};
    s.name = j.value("name", std::string("grid"));
    s.dt = j.value("dt", 1e-3);
    s.graph = j.at("topology").get<PowerGraph>();
    const DerParams dd;
    for (const auto& d : j.at("ders"))
      s.ders.push_back({d.at("bus").get<int>(), d.value("inertia", dd.inertia), d.value("damping", dd.damping),
                        d.value("angle_droop", dd.angle_droop), d.value("voltage_tau", dd.voltage_tau),
                        d.value("reactive_droop", dd.reactive_droop), d.value("reactance", dd.reactance),
                        d.value("share", dd.share)});
    for (const auto& l : j.at("loads")) s.loads.push_back({l.at("bus").get<int>(), l.at("p0").get<double>(), l.at("q0").get<double>()});
    if (j.contains("shunts"))
      for (const auto& h : j.at("shunts")) s.shunts.push_back({h.at("bus").get<int>(), h.at("susceptance").get<double>()});
    if (j.contains("protocol")) {
      const auto& p = j.at("protocol");
      Protocol& q = s.protocol;
      if (p.contains("base_load_range")) {
        q.base_load_lo = p.at("base_load_range").at(0).get<double>();
        q.base_load_hi = p.at("base_load_range").at(1).get<double>();
      }
      q.event_fraction = p.value("event_fraction", q.event_fraction);
      q.complete_steps = p.value("complete_steps", q.complete_steps);
      q.event_interval = p.value("event_interval", q.event_interval);
      q.initial_chunk_events = p.value("initial_chunk_events", q.initial_chunk_events);
      if (p.contains("load_bounds")) {
        q.load_lo = p.at("load_bounds").at(0).get<double>();
        q.load_hi = p.at("load_bounds").at(1).get<double>();
      }
      q.test_fraction = p.value("test_fraction", q.test_fraction);
    }
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed grid spec: ") + e.what());
  }
  s.validate();
}

inline std::string grid_hash(const GridSpec& s) { return hex64(fnv1a(nlohmann::json(s).dump())); }

inline GridSpec load_grid_spec(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw StructuralError("grid spec " + path + " is not valid JSON: " + e.what());
  }
  return j.get<GridSpec>();
}

// ---------------------------------------------------------------------------
// Presets

namespace detail {

/// Adds a line with series impedance r + jx to a nodal admittance matrix.
inline void add_line(PowerGraph& g, int i, int j, double r, double x) {
  const Complex y = 1.0 / Complex(r, x);
  g.edges.emplace_back(std::min(i, j), std::max(i, j));
  g.admittance(i, j) -= y;
  g.admittance(j, i) -= y;
  g.admittance(i, i) += y;
  g.admittance(j, j) += y;
}

inline void assign_bus_types(GridSpec& s) {
  s.graph.bus_types.assign(s.n(), BusType::kEmpty);
  for (const auto& l : s.loads) s.graph.bus_types[static_cast<std::size_t>(l.bus)] = BusType::kLoad;
  for (const auto& d : s.ders) s.graph.bus_types[static_cast<std::size_t>(d.bus)] = BusType::kDer;
}

}  // namespace detail

/// 9-bus meshed desk grid: 3 DERs, 4 loads, 2 capacitor-bank buses.
inline GridSpec desk9_grid() {
  GridSpec s;
  s.name = "desk9";
  s.graph.n_buses = 9;
  s.graph.admittance = ComplexMatrix::Zero(9, 9);
  const struct { int i, j; double r, x; } lines[] = {
      {0, 3, 0.010, 0.060}, {3, 4, 0.030, 0.085}, {3, 5, 0.035, 0.090}, {4, 6, 0.030, 0.080},
      {5, 8, 0.040, 0.100}, {6, 7, 0.020, 0.070}, {1, 7, 0.010, 0.055}, {7, 8, 0.030, 0.090},
      {2, 8, 0.012, 0.065}};
  for (const auto& l : lines) detail::add_line(s.graph, l.i, l.j, l.r, l.x);
  s.ders = {{0, 0.0025, 0.125, 2.0, 0.02, 0.1, 0.15, 0.4},
            {1, 0.0020, 0.100, 2.0, 0.02, 0.1, 0.15, 0.3},
            {2, 0.0030, 0.150, 2.0, 0.02, 0.1, 0.15, 0.3}};
  s.loads = {{4, 0.9, 0.30}, {5, 0.7, 0.25}, {6, 1.0, 0.35}, {8, 0.8, 0.30}};
  s.shunts = {{3, 0.4}, {7, 0.4}};
  detail::assign_bus_types(s);
  s.validate();
  return s;
}

/// 33-bus stand-in at the scale of a networked-microgrid test system: a
/// radial feeder with three tie lines, 6 DERs, 20 loads and capacitor banks
/// on the remaining buses.
inline GridSpec grid33_grid() {
  GridSpec s;
  s.name = "grid33";
  s.graph.n_buses = 33;
  s.graph.admittance = ComplexMatrix::Zero(33, 33);
  Rng rng(33);
  auto line = [&](int i, int j) { detail::add_line(s.graph, i, j, rng.uniform(0.01, 0.03), rng.uniform(0.04, 0.08)); };
  for (int b = 1; b <= 17; ++b) line(b - 1, b);   // main feeder
  line(1, 18);
  for (int b = 19; b <= 21; ++b) line(b - 1, b);  // lateral 1
  line(2, 22);
  for (int b = 23; b <= 24; ++b) line(b - 1, b);  // lateral 2
  line(5, 25);
  for (int b = 26; b <= 32; ++b) line(b - 1, b);  // lateral 3
  line(7, 20);  // tie lines
  line(11, 21);
  line(17, 32);
  std::sort(s.graph.edges.begin(), s.graph.edges.end());
  const int der_buses[] = {0, 9, 15, 21, 24, 30};
  const double shares[] = {0.25, 0.15, 0.15, 0.15, 0.1, 0.2};
  for (int k = 0; k < 6; ++k)
    s.ders.push_back({der_buses[k], rng.uniform(0.002, 0.003), 0.0, 2.0, 0.02, 0.1, 0.12, shares[k]});
  for (auto& d : s.ders) d.damping = 50.0 * d.inertia;  // same decay rate for every DER
  const int load_buses[] = {2, 3, 4, 6, 7, 8, 11, 12, 13, 16, 17, 18, 19, 20, 23, 26, 27, 28, 29, 32};
  for (int b : load_buses) s.loads.push_back({b, rng.uniform(0.35, 0.6), rng.uniform(0.12, 0.25)});
  std::vector<char> used(33, 0);
  for (const auto& d : s.ders) used[static_cast<std::size_t>(d.bus)] = 1;
  for (const auto& l : s.loads) used[static_cast<std::size_t>(l.bus)] = 1;
  for (int b = 0; b < 33; ++b)
    if (!used[static_cast<std::size_t>(b)]) s.shunts.push_back({b, 0.4});
  detail::assign_bus_types(s);
  s.validate();
  return s;
}

inline GridSpec preset_grid(const std::string& name) {
  if (name == "desk9") return desk9_grid();
  if (name == "grid33") return grid33_grid();
  throw ArgumentError("unknown grid preset: " + name);
}

// ---------------------------------------------------------------------------
// Surrogate dynamics

/// Per-bus load demand (P, Q) in pu.
struct LoadLevels {
  std::vector<double> p, q;
};

inline LoadLevels nominal_loads(const GridSpec& s, double factor = 1.0) {
  LoadLevels l{std::vector<double>(s.n(), 0.0), std::vector<double>(s.n(), 0.0)};
  for (const auto& d : s.loads) {
    l.p[static_cast<std::size_t>(d.bus)] = factor * d.p0;
    l.q[static_cast<std::size_t>(d.bus)] = factor * d.q0;
  }
  return l;
}

/// Dispatch computed from the pre-disturbance demand; fixed during a run.
struct Setpoints {
  std::vector<double> p, q;
};

inline Setpoints dispatch(const GridSpec& s, const LoadLevels& loads) {
  double p = 0.0, q = 0.0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    p += loads.p[i];
    q += loads.q[i];
  }
  for (const auto& h : s.shunts) q -= h.susceptance;
  Setpoints sp;
  for (const auto& d : s.ders) {
    sp.p.push_back(d.share * p);
    sp.q.push_back(d.share * q);
  }
  return sp;
}

/// Factorized network for a fixed set of loads:
/// (Y_lines + diag(y_load + j b_shunt + y_der)) V = y_der E.
class NetworkSolver {
 public:
  NetworkSolver(const GridSpec& spec, const LoadLevels& loads) : spec_(&spec) {
    const Eigen::Index n = spec.graph.n_buses;
    ComplexMatrix y = spec.graph.admittance;
    for (Eigen::Index i = 0; i < n; ++i)
      y(i, i) += Complex(loads.p[static_cast<std::size_t>(i)], -loads.q[static_cast<std::size_t>(i)]);
    for (const auto& h : spec.shunts) y(h.bus, h.bus) += Complex(0.0, h.susceptance);
    for (const auto& d : spec.ders) y(d.bus, d.bus) += 1.0 / Complex(0.0, d.reactance);
    lu_.compute(y);
    if (!(lu_.rcond() > 1e-13)) throw StructuralError("network matrix is singular");
  }

  /// Bus voltages and line-injection currents for the given DER EMFs.
  void solve(const std::vector<Complex>& emf, ComplexVector& v, ComplexVector& i) const {
    ComplexVector rhs = ComplexVector::Zero(spec_->graph.n_buses);
    for (std::size_t g = 0; g < spec_->ders.size(); ++g) {
      const auto& d = spec_->ders[g];
      rhs(d.bus) += emf[g] / Complex(0.0, d.reactance);
    }
    v = lu_.solve(rhs);
    i = spec_->graph.admittance * v;
  }

 private:
  const GridSpec* spec_;
  Eigen::PartialPivLU<ComplexMatrix> lu_;
};

/// Internal state layout: [delta_0..G-1, omega_0..G-1, E_0..G-1].
struct DerStateView {
  std::size_t g;
  double delta(const std::vector<double>& x, std::size_t k) const { return x[k]; }
  double omega(const std::vector<double>& x, std::size_t k) const { return x[g + k]; }
  double emf(const std::vector<double>& x, std::size_t k) const { return x[2 * g + k]; }
};

struct Evaluation {
  std::vector<double> rates;  // d/dt of the internal state
  ComplexVector v, i;
};

/// Internal-state derivative and the bus phasors at state x.
inline Evaluation evaluate(const GridSpec& spec, const NetworkSolver& net, const Setpoints& sp,
                           const std::vector<double>& x) {
  const std::size_t g = spec.ders.size();
  std::vector<Complex> emf(g);
  for (std::size_t k = 0; k < g; ++k) emf[k] = std::polar(x[2 * g + k], x[k]);
  Evaluation ev;
  net.solve(emf, ev.v, ev.i);
  ev.rates.assign(3 * g, 0.0);
  for (std::size_t k = 0; k < g; ++k) {
    const auto& d = spec.ders[k];
    const Complex vb = ev.v(d.bus);
    const Complex ig = (emf[k] - vb) / Complex(0.0, d.reactance);
    const Complex s = vb * std::conj(ig);
    ev.rates[k] = x[g + k];
    ev.rates[g + k] = (sp.p[k] - s.real() - d.damping * x[g + k] - d.angle_droop * x[k]) / d.inertia;
    ev.rates[2 * g + k] = (1.0 - x[2 * g + k] - d.reactive_droop * (s.imag() - sp.q[k])) / d.voltage_tau;
  }
  return ev;
}

/// Writes [P, Q, ReV, ImV, ReI, ImI] per bus into out (N x 6, row-major).
inline void measured_states(const ComplexVector& v, const ComplexVector& i, double* out) {
  for (Eigen::Index b = 0; b < v.size(); ++b) {
    const Complex s = v(b) * std::conj(i(b));
    double* r = out + 6 * b;
    r[0] = s.real();
    r[1] = s.imag();
    r[2] = v(b).real();
    r[3] = v(b).imag();
    r[4] = i(b).real();
    r[5] = i(b).imag();
  }
}

struct Equilibrium {
  LoadLevels loads;
  Setpoints setpoints;
  std::vector<double> internal;  // 3G
  Tensor measured;               // [N, 6]
};

/// Newton solve (finite-difference Jacobian) of the surrogate's steady state
/// for the given loads and setpoints. The default dispatch is taken from the
/// loads themselves.
inline Equilibrium solve_equilibrium(const GridSpec& spec, const LoadLevels& loads,
                                     const Setpoints* setpoints = nullptr,
                                     const std::vector<double>* start = nullptr) {
  const std::size_t g = spec.ders.size();
  if (loads.p.size() != spec.n() || loads.q.size() != spec.n())
    throw ArgumentError("loads must have one entry per bus");
  Equilibrium eq;
  eq.loads = loads;
  eq.setpoints = setpoints ? *setpoints : dispatch(spec, loads);
  const NetworkSolver net(spec, loads);

  // unknowns y = [delta, E]; omega = 0
  std::vector<double> y(2 * g, 0.0);
  for (std::size_t k = 0; k < g; ++k) y[g + k] = 1.0;
  if (start) {
    if (start->size() != 3 * g) throw ArgumentError("equilibrium start has the wrong size");
    for (std::size_t k = 0; k < g; ++k) {
      y[k] = (*start)[k];
      y[g + k] = (*start)[2 * g + k];
    }
  }
  auto full = [&](const std::vector<double>& yy) {
    std::vector<double> x(3 * g, 0.0);
    for (std::size_t k = 0; k < g; ++k) {
      x[k] = yy[k];
      x[2 * g + k] = yy[g + k];
    }
    return x;
  };
  auto residual = [&](const std::vector<double>& yy) {
    const Evaluation ev = evaluate(spec, net, eq.setpoints, full(yy));
    Vector r(static_cast<Eigen::Index>(2 * g));
    for (std::size_t k = 0; k < g; ++k) {
      r(static_cast<Eigen::Index>(k)) = ev.rates[g + k] * spec.ders[k].inertia;
      r(static_cast<Eigen::Index>(g + k)) = ev.rates[2 * g + k] * spec.ders[k].voltage_tau;
    }
    return r;
  };
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const Vector r = residual(y);
    if (!r.allFinite()) break;
    if (r.cwiseAbs().maxCoeff() < 1e-14) {
      converged = true;
      break;
    }
    Matrix jac(static_cast<Eigen::Index>(2 * g), static_cast<Eigen::Index>(2 * g));
    for (std::size_t c = 0; c < 2 * g; ++c) {
      std::vector<double> yp = y, ym = y;
      const double h = 1e-7;
      yp[c] += h;
      ym[c] -= h;
      jac.col(static_cast<Eigen::Index>(c)) = (residual(yp) - residual(ym)) / (2.0 * h);
    }
    const Vector step = jac.fullPivLu().solve(-r);
    for (std::size_t c = 0; c < 2 * g; ++c) y[c] += step(static_cast<Eigen::Index>(c));
  }
  if (!converged) throw NumericalError("equilibrium solve did not converge");
  eq.internal = full(y);
  const Evaluation ev = evaluate(spec, net, eq.setpoints, eq.internal);
  eq.measured = Tensor({spec.n(), 6});
  measured_states(ev.v, ev.i, eq.measured.data());
  return eq;
}

/// Eigenvalues of the finite-difference linearization of the internal
/// dynamics around x with loads held fixed.
inline Eigen::VectorXcd linearized_eigenvalues(const GridSpec& spec, const Equilibrium& eq) {
  const NetworkSolver net(spec, eq.loads);
  const std::size_t m = eq.internal.size();
  Matrix jac(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t c = 0; c < m; ++c) {
    std::vector<double> xp = eq.internal, xm = eq.internal;
    const double h = 1e-6;
    xp[c] += h;
    xm[c] -= h;
    const auto fp = evaluate(spec, net, eq.setpoints, xp).rates;
    const auto fm = evaluate(spec, net, eq.setpoints, xm).rates;
    for (std::size_t r = 0; r < m; ++r)
      jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (fp[r] - fm[r]) / (2.0 * h);
  }
  Eigen::EigenSolver<Matrix> es(jac);
  return es.eigenvalues();
}

// ---------------------------------------------------------------------------
// Trajectories

/// Instantaneous change (dP, dQ) of the demand at `bus`, applied between
/// steps k and k + 1.
struct Event {
  int step = 0;
  int bus = 0;
  double dp = 0.0;
  double dq = 0.0;
  friend bool operator==(const Event&, const Event&) = default;
};

enum class TrajectoryKind { kComplete, kInitial, kLinear };

inline const char* kind_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kComplete: return "complete";
    case TrajectoryKind::kInitial: return "initial";
    case TrajectoryKind::kLinear: return "linear";
  }
  return "?";
}

inline TrajectoryKind kind_from_name(const std::string& s) {
  if (s == "complete") return TrajectoryKind::kComplete;
  if (s == "initial") return TrajectoryKind::kInitial;
  if (s == "linear") return TrajectoryKind::kLinear;
  throw IoError("unknown trajectory kind: " + s);
}

struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::kComplete;
  bool test = false;
  Tensor states;  // [T + 1, N, 6] measured states X^(0..T)
  std::vector<Event> events;
  std::vector<double> base_p, base_q;

  std::size_t steps() const { return states.dim(0) - 1; }
  std::size_t n() const { return states.dim(1); }
};

/// Steps the surrogate from an equilibrium through the schedule for `steps`
/// explicit-Euler steps, recording X^(0..steps).
inline Trajectory simulate(const GridSpec& spec, const Equilibrium& initial, std::vector<Event> schedule,
                           std::size_t steps, TrajectoryKind kind = TrajectoryKind::kComplete) {
  const std::size_t n = spec.n();
  for (const auto& e : schedule) {
    if (e.step < 0 || static_cast<std::size_t>(e.step) >= steps) throw ArgumentError("event step outside the horizon");
    if (e.bus < 0 || static_cast<std::size_t>(e.bus) >= n || spec.graph.bus_types[static_cast<std::size_t>(e.bus)] == BusType::kEmpty)
      throw ArgumentError("events must target load or DER buses");
  }
  std::stable_sort(schedule.begin(), schedule.end(), [](const Event& a, const Event& b) { return a.step < b.step; });

  LoadLevels loads = initial.loads;
  auto net = std::make_unique<NetworkSolver>(spec, loads);
  std::vector<double> x = initial.internal;
  if (kind == TrajectoryKind::kComplete) {
    const auto f = evaluate(spec, *net, initial.setpoints, x).rates;
    double worst = 0.0;
    for (double v : f) worst = std::max(worst, std::abs(v));
    if (!(worst < 1e-8)) throw ArgumentError("complete responses must start from an equilibrium");
  }

  Trajectory t;
  t.kind = kind;
  t.events = schedule;
  t.base_p = loads.p;
  t.base_q = loads.q;
  t.states = Tensor({steps + 1, n, 6});
  std::size_t next_event = 0;
  for (std::size_t k = 0;; ++k) {
    const Evaluation ev = evaluate(spec, *net, initial.setpoints, x);
    measured_states(ev.v, ev.i, t.states.data() + k * n * 6);
    if (k == steps) break;
    bool changed = false;
    while (next_event < schedule.size() && static_cast<std::size_t>(schedule[next_event].step) == k) {
      const Event& e = schedule[next_event++];
      loads.p[static_cast<std::size_t>(e.bus)] += e.dp;
      loads.q[static_cast<std::size_t>(e.bus)] += e.dq;
      changed = true;
    }
    if (changed) net = std::make_unique<NetworkSolver>(spec, loads);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += spec.dt * ev.rates[i];
  }
  if (!t.states.all_finite()) throw NumericalError("simulation produced non-finite states");
  return t;
}

/// Forward-difference rates (X^(k+1) - X^(k)) / dt, shape [T, N, 6].
inline Tensor trajectory_rates(const Trajectory& t, double dt) {
  const std::size_t steps = t.steps(), n = t.n();
  Tensor r({steps, n, 6});
  const Tensor& s = t.states;
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = (s.data()[i + n * 6] - s.data()[i]) / dt;
  return r;
}

/// Extended states [T + 1, N, 10]: measured states, the scheduled demand
/// change at the disturbed bus, the all-bus disturbance flag and the bus
/// type code.
inline Tensor build_extended_states(const Trajectory& t, const std::vector<double>& betas) {
  const std::size_t steps = t.steps(), n = t.n();
  if (betas.size() != n) throw ArgumentError("one bus type code per bus required");
  Tensor e({steps + 1, n, 10});
  for (std::size_t k = 0; k <= steps; ++k)
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t f = 0; f < 6; ++f) e(k, b, f) = t.states(k, b, f);
      e(k, b, 9) = betas[b];
    }
  for (const auto& ev : t.events) {
    const auto k = static_cast<std::size_t>(ev.step);
    if (k > steps) throw ArgumentError("event outside the trajectory");
    e(k, static_cast<std::size_t>(ev.bus), 6) += ev.dp;
    e(k, static_cast<std::size_t>(ev.bus), 7) += ev.dq;
    for (std::size_t b = 0; b < n; ++b) e(k, b, 8) = 1.0;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  GridSpec grid;
  std::vector<Trajectory> trajectories;
  std::uint64_t seed = 0;
  nlohmann::json counts = nlohmann::json::object();
  std::string manifest;  // hash of the run that produced the file

  double dt() const { return grid.dt; }
  std::vector<std::size_t> indices(bool test) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
      if (trajectories[i].test == test) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> indices(bool test, TrajectoryKind kind) const {
    std::vector<std::size_t> out;
    for (std::size_t i : indices(test))
      if (trajectories[i].kind == kind) out.push_back(i);
    return out;
  }
};

namespace detail {

inline std::vector<std::size_t> eventful_buses(const GridSpec& spec) {
  std::vector<std::size_t> out;
  for (const auto& l : spec.loads)
    if (l.p0 > 0.0 || l.q0 > 0.0) out.push_back(static_cast<std::size_t>(l.bus));
  if (out.empty()) throw StructuralError("grid has no load to disturb");
  return out;
}

inline LoadLevels random_base_loads(const GridSpec& spec, Rng& rng) {
  LoadLevels l = nominal_loads(spec, 0.0);
  for (const auto& d : spec.loads) {
    const double f = rng.uniform(spec.protocol.base_load_lo, spec.protocol.base_load_hi);
    l.p[static_cast<std::size_t>(d.bus)] = f * d.p0;
    l.q[static_cast<std::size_t>(d.bus)] = f * d.q0;
  }
  return l;
}

inline const LoadParams& load_at(const GridSpec& spec, std::size_t bus) {
  for (const auto& l : spec.loads)
    if (static_cast<std::size_t>(l.bus) == bus) return l;
  throw StructuralError("no load at bus " + std::to_string(bus));
}

inline void mark_test_split(std::vector<Trajectory>& ts, std::size_t first, double fraction) {
  const std::size_t count = ts.size() - first;
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(count) * fraction + 1e-9));
  for (std::size_t i = ts.size() - n_test; i < ts.size(); ++i) ts[i].test = true;
}

}  // namespace detail

/// Complete responses: random base loads, one random event at step 0.
/// Initial responses: events every `event_interval` steps, chunked into
/// trajectories of at most `initial_chunk_events` events. The last
/// `test_fraction` of each kind forms the test split.
inline Dataset make_dataset(const GridSpec& spec, std::size_t n_complete, std::size_t n_initial_events,
                            std::uint64_t seed) {
  Dataset ds;
  ds.grid = spec;
  ds.seed = seed;
  ds.counts = {{"complete", n_complete}, {"initial_events", n_initial_events}};
  const Protocol& p = spec.protocol;
  const auto buses = detail::eventful_buses(spec);

  for (std::size_t c = 0; c < n_complete; ++c) {
    Rng rng(derive_seed(seed, c));
    const Equilibrium eq = solve_equilibrium(spec, detail::random_base_loads(spec, rng));
    const std::size_t bus = buses[rng.index(buses.size())];
    const LoadParams& l = detail::load_at(spec, bus);
    const Event e{0, static_cast<int>(bus), rng.uniform(-1.0, 1.0) * p.event_fraction * l.p0,
                  rng.uniform(-1.0, 1.0) * p.event_fraction * l.q0};
    ds.trajectories.push_back(simulate(spec, eq, {e}, static_cast<std::size_t>(p.complete_steps)));
  }
  detail::mark_test_split(ds.trajectories, 0, p.test_fraction);

  const std::size_t first_initial = ds.trajectories.size();
  const auto chunk = static_cast<std::size_t>(p.initial_chunk_events);
  for (std::size_t done = 0, j = 0; done < n_initial_events; done += chunk, ++j) {
    const std::size_t events = std::min(chunk, n_initial_events - done);
    Rng rng(derive_seed(seed, (1ULL << 32) + j));
    const Equilibrium eq = solve_equilibrium(spec, detail::random_base_loads(spec, rng));
    LoadLevels level = eq.loads;
    std::vector<Event> schedule;
    for (std::size_t e = 0; e < events; ++e) {
      const std::size_t bus = buses[rng.index(buses.size())];
      const LoadParams& l = detail::load_at(spec, bus);
      double dp = rng.uniform(-1.0, 1.0) * p.event_fraction * l.p0;
      double dq = rng.uniform(-1.0, 1.0) * p.event_fraction * l.q0;
      const double np = level.p[bus] + dp, nq = level.q[bus] + dq;
      if (np < p.load_lo * l.p0 || np > p.load_hi * l.p0) dp = -dp;
      if (nq < p.load_lo * l.q0 || nq > p.load_hi * l.q0) dq = -dq;
      level.p[bus] += dp;
      level.q[bus] += dq;
      schedule.push_back({static_cast<int>(e) * p.event_interval, static_cast<int>(bus), dp, dq});
    }
    ds.trajectories.push_back(simulate(spec, eq, schedule, events * static_cast<std::size_t>(p.event_interval),
                                       TrajectoryKind::kInitial));
  }
  detail::mark_test_split(ds.trajectories, first_initial, p.test_fraction);
  return ds;
}

/// Purely linear benchmark data on the grid's graph: each bus carries a
/// damped 2-state oscillator, coupled through the weighted graph Laplacian
/// and observed through a fixed full-rank 6 x 2 map plus an offset.
/// Integrated with explicit Euler, so the forward-difference rates are an
/// exact affine function of the current measured state.
inline Dataset make_linear_dataset(const GridSpec& spec, std::size_t n_trajectories, std::size_t steps,
                                   std::uint64_t seed) {
  const std::size_t n = spec.n();
  const AdjacencyMatrix adj = build_adjacency(spec.graph, tune_scaling_k(spec.graph));
  const Matrix lap = Matrix(adj.weights.rowwise().sum().asDiagonal()) - adj.weights;
  const Eigen::Index m = static_cast<Eigen::Index>(2 * n);
  Matrix a = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    a(2 * i, 2 * i) = a(2 * i + 1, 2 * i + 1) = -3.0;
    a(2 * i, 2 * i + 1) = 40.0;
    a(2 * i + 1, 2 * i) = -40.0;
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j)
      for (Eigen::Index c = 0; c < 2; ++c) a(2 * i + c, 2 * j + c) -= 5.0 * lap(i, j);
  }
  Rng rng(seed);
  Matrix h(6, 2);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) h(i, j) = rng.uniform(-1.0, 1.0);
  const double offset[6] = {0.5, 0.2, 1.0, 0.0, 0.5, 0.1};

  Dataset ds;
  ds.grid = spec;
  ds.seed = seed;
  ds.counts = {{"linear", n_trajectories}};
  for (std::size_t t = 0; t < n_trajectories; ++t) {
    Rng r(derive_seed(seed, t));
    Vector z(m);
    for (Eigen::Index i = 0; i < m; ++i) z(i) = 0.1 * r.normal();
    Trajectory tr;
    tr.kind = TrajectoryKind::kLinear;
    tr.states = Tensor({steps + 1, n, 6});
    tr.base_p.assign(n, 0.0);
    tr.base_q.assign(n, 0.0);
    for (std::size_t k = 0; k <= steps; ++k) {
      for (std::size_t b = 0; b < n; ++b) {
        const Vector y = h * z.segment(static_cast<Eigen::Index>(2 * b), 2);
        for (std::size_t f = 0; f < 6; ++f) tr.states(k, b, f) = offset[f] + y(static_cast<Eigen::Index>(f));
      }
      z += spec.dt * (a * z);
    }
    ds.trajectories.push_back(std::move(tr));
  }
  detail::mark_test_split(ds.trajectories, 0, spec.protocol.test_fraction);
  return ds;
}

inline constexpr const char* kDatasetMagic = "GGNNDATA";

inline std::string dataset_bytes(const Dataset& ds) {
  nlohmann::json trajs = nlohmann::json::array();
  std::vector<double> payload;
  for (const auto& t : ds.trajectories) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : t.events) events.push_back({e.step, e.bus, e.dp, e.dq});
    trajs.push_back({{"kind", kind_name(t.kind)},
                     {"split", t.test ? "test" : "train"},
                     {"steps", t.steps()},
                     {"offset", payload.size()},
                     {"base_p", t.base_p},
                     {"base_q", t.base_q},
                     {"events", events}});
    payload.insert(payload.end(), t.states.values().begin(), t.states.values().end());
  }
  const nlohmann::json header = {{"format", "gridgnn-dataset"},
                                 {"version", kVersion},
                                 {"grid", ds.grid},
                                 {"grid_hash", grid_hash(ds.grid)},
                                 {"dt", ds.dt()},
                                 {"n_buses", ds.grid.n()},
                                 {"features", {"P", "Q", "ReV", "ImV", "ReI", "ImI"}},
                                 {"layout", "trajectory, step, bus, feature"},
                                 {"seed", ds.seed},
                                 {"counts", ds.counts},
                                 {"normalizer", nullptr},
                                 {"manifest", ds.manifest},
                                 {"trajectories", trajs}};
  return container::pack(kDatasetMagic, header.dump(), payload);
}

inline void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, dataset_bytes(ds)); }

inline Dataset load_dataset(const std::string& path) {
  const auto u = container::unpack(read_file(path), kDatasetMagic, "dataset " + path);
  Dataset ds;
  try {
    const auto h = nlohmann::json::parse(u.header);
    ds.grid = h.at("grid").get<GridSpec>();
    ds.seed = h.at("seed").get<std::uint64_t>();
    ds.counts = h.at("counts");
    ds.manifest = h.value("manifest", std::string());
    const std::size_t n = ds.grid.n();
    for (const auto& tj : h.at("trajectories")) {
      Trajectory t;
      t.kind = kind_from_name(tj.at("kind").get<std::string>());
      t.test = tj.at("split").get<std::string>() == "test";
      const auto steps = tj.at("steps").get<std::size_t>();
      const auto offset = tj.at("offset").get<std::size_t>();
      const std::size_t len = (steps + 1) * n * 6;
      if (offset + len > u.payload.size()) throw IoError("dataset " + path + ": payload truncated");
      t.states = Tensor({steps + 1, n, 6},
                        std::vector<double>(u.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                            u.payload.begin() + static_cast<std::ptrdiff_t>(offset + len)));
      t.base_p = tj.at("base_p").get<std::vector<double>>();
      t.base_q = tj.at("base_q").get<std::vector<double>>();
      for (const auto& e : tj.at("events"))
        t.events.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>(), e.at(3).get<double>()});
      ds.trajectories.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset " + path + ": malformed header: " + e.what());
  }
  return ds;
}

/// CSV of one trajectory's extended states.
inline std::string trajectory_csv(const Trajectory& t, const std::vector<double>& betas) {
  const Tensor e = build_extended_states(t, betas);
  std::string out = "step,bus,P,Q,ReV,ImV,ReI,ImI,dP,dQ,gamma,beta\n";
  for (std::size_t k = 0; k < e.dim(0); ++k)
    for (std::size_t b = 0; b < e.dim(1); ++b) {
      out += std::to_string(k) + "," + std::to_string(b);
      for (std::size_t f = 0; f < 10; ++f) out += "," + fmt_double(e(k, b, f));
      out += "\n";
    }
  return out;
}

}  // namespace gridgnn
