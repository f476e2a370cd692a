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

// Shared fixtures for the unit and acceptance suites: random connected
// graphs and central finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "gridgnn/graph.hpp"
#include "gridgnn/tensor.hpp"
#include "gridgnn/util.hpp"

namespace gridgnn::testing {

/// Random connected graph: a random spanning tree plus extra edges with
/// probability `extra_p`; off-diagonal admittance -y_ij on edges, diagonal
/// the negated row sum (a proper nodal admittance matrix).
inline PowerGraph random_graph(std::size_t n, Rng& rng, double extra_p = 0.3) {
  PowerGraph g;
  g.n_buses = static_cast<int>(n);
  g.admittance = ComplexMatrix::Zero(g.n_buses, g.n_buses);
  g.bus_types.assign(n, BusType::kEmpty);
  auto connect = [&](int i, int j) {
    const Complex y(rng.uniform(0.2, 3.0), rng.uniform(-8.0, -0.5));
    g.edges.emplace_back(std::min(i, j), std::max(i, j));
    g.admittance(i, j) -= y;
    g.admittance(j, i) -= y;
    g.admittance(i, i) += y;
    g.admittance(j, j) += y;
  };
  for (std::size_t v = 1; v < n; ++v) connect(static_cast<int>(v), static_cast<int>(rng.index(v)));
  std::sort(g.edges.begin(), g.edges.end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (!g.has_edge(static_cast<int>(i), static_cast<int>(j)) && rng.uniform() < extra_p) {
        connect(static_cast<int>(i), static_cast<int>(j));
        std::sort(g.edges.begin(), g.edges.end());
      }
  for (std::size_t i = 0; i < n; ++i) g.bus_types[i] = static_cast<BusType>(rng.index(3));
  g.validate();
  return g;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Relative error |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite difference of f with respect to entry i of x.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

}  // namespace gridgnn::testing
