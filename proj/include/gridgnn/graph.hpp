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

// Graph representation of a microgrid: admittance-derived edge weights,
// degree matrix, normalized and scaled Laplacians, and the full graph
// Fourier basis (dense eigendecomposition, used as a test oracle).

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridgnn/error.hpp"

namespace gridgnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

enum class BusType { kEmpty, kLoad, kDer };

/// Bus type index used as the last extended-state feature.
constexpr double bus_type_code(BusType t) {
  switch (t) {
    case BusType::kEmpty: return 0.0;
    case BusType::kLoad: return 0.5;
    case BusType::kDer: return 1.0;
  }
  return 0.0;
}

inline BusType bus_type_from_code(double code) {
  if (code == 0.0) return BusType::kEmpty;
  if (code == 0.5) return BusType::kLoad;
  if (code == 1.0) return BusType::kDer;
  throw ArgumentError("bus type code must be 0, 0.5 or 1, got " + std::to_string(code));
}

/// Undirected bus graph plus its complex admittance matrix.
/// Edges are stored once, as (i, j) with i < j.
struct PowerGraph {
  int n_buses = 0;
  std::vector<std::pair<int, int>> edges;
  ComplexMatrix admittance;
  std::vector<BusType> bus_types;

  bool has_edge(int i, int j) const {
    if (i > j) std::swap(i, j);
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(i, j));
  }

  /// Sorts and validates. Throws StructuralError on asymmetric admittance,
  /// self-loops, duplicate or out-of-range edges.
  void validate() {
    if (n_buses <= 0) throw StructuralError("graph must have at least one bus");
    if (admittance.rows() != n_buses || admittance.cols() != n_buses)
      throw StructuralError("admittance must be n_buses x n_buses");
    if (static_cast<int>(bus_types.size()) != n_buses)
      throw StructuralError("bus_types must have n_buses entries");
    for (auto& [i, j] : edges) {
      if (i < 0 || j < 0 || i >= n_buses || j >= n_buses)
        throw StructuralError("edge index out of range");
      if (i == j) throw StructuralError("self-loop at bus " + std::to_string(i));
      if (i > j) std::swap(i, j);
    }
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      throw StructuralError("duplicate edge");
    const double scale = std::max(1.0, admittance.cwiseAbs().maxCoeff());
    for (int i = 0; i < n_buses; ++i)
      for (int j = i + 1; j < n_buses; ++j)
        if (std::abs(admittance(i, j) - admittance(j, i)) > 1e-12 * scale)
          throw StructuralError("admittance is not symmetric at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
  }

  std::vector<std::vector<int>> neighbors() const {
    std::vector<std::vector<int>> nb(static_cast<std::size_t>(n_buses));
    for (auto [i, j] : edges) {
      nb[static_cast<std::size_t>(i)].push_back(j);
      nb[static_cast<std::size_t>(j)].push_back(i);
    }
    for (auto& v : nb) std::sort(v.begin(), v.end());
    return nb;
  }
};

// JSON: {"n_buses", "edges": [[i,j],...], "admittance": [[re,im] x N*N row-major],
//        "bus_types": [beta,...]}
inline void to_json(nlohmann::json& j, const PowerGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : g.edges) edges.push_back({a, b});
  nlohmann::json adm = nlohmann::json::array();
  for (int r = 0; r < g.n_buses; ++r)
    for (int c = 0; c < g.n_buses; ++c)
      adm.push_back({g.admittance(r, c).real(), g.admittance(r, c).imag()});
  nlohmann::json types = nlohmann::json::array();
  for (auto t : g.bus_types) types.push_back(bus_type_code(t));
  j = {{"n_buses", g.n_buses}, {"edges", edges}, {"admittance", adm}, {"bus_types", types}};
}

inline void from_json(const nlohmann::json& j, PowerGraph& g) {
  try {
    g.n_buses = j.at("n_buses").get<int>();
    if (g.n_buses <= 0) throw StructuralError("n_buses must be positive");
    g.edges.clear();
    for (const auto& e : j.at("edges")) {
      if (e.size() != 2) throw StructuralError("edge must be a pair");
      g.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    const auto& adm = j.at("admittance");
    const auto n = static_cast<std::size_t>(g.n_buses);
    if (adm.size() != n * n) throw StructuralError("admittance must have n_buses^2 entries");
    g.admittance.resize(g.n_buses, g.n_buses);
    for (std::size_t k = 0; k < n * n; ++k) {
      const auto& z = adm[k];
      if (z.size() != 2) throw StructuralError("admittance entries are [re, im] pairs");
      g.admittance(static_cast<int>(k / n), static_cast<int>(k % n)) =
          Complex(z[0].get<double>(), z[1].get<double>());
    }
    g.bus_types.clear();
    for (const auto& t : j.at("bus_types")) g.bus_types.push_back(bus_type_from_code(t.get<double>()));
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed grid topology: ") + e.what());
  }
  g.validate();
}

struct AdjacencyMatrix {
  Matrix weights;
  double scaling_k = 1.0;
};

struct LaplacianBundle {
  Vector degree;  // diagonal of D
  Matrix laplacian;
  double lambda_max = 2.0;
  Matrix scaled_laplacian;
};

/// w_ij = exp(-k |Y_ij|^2) on edges, 0 elsewhere.
inline AdjacencyMatrix build_adjacency(PowerGraph graph, double scaling_k) {
  if (!(scaling_k > 0.0) || !std::isfinite(scaling_k))
    throw ArgumentError("scaling_k must be positive");
  graph.validate();
  AdjacencyMatrix adj;
  adj.scaling_k = scaling_k;
  adj.weights = Matrix::Zero(graph.n_buses, graph.n_buses);
  for (auto [i, j] : graph.edges) {
    const double w = std::exp(-scaling_k * std::norm(graph.admittance(i, j)));
    adj.weights(i, j) = w;
    adj.weights(j, i) = w;
  }
  return adj;
}

/// Chooses k so that the mean edge weight is 0.5. Bisection on the mean
/// weight, which is monotone decreasing in k. Returns 1 when every edge has
/// zero admittance magnitude.
inline double tune_scaling_k(const PowerGraph& graph) {
  std::vector<double> mag2;
  mag2.reserve(graph.edges.size());
  for (auto [i, j] : graph.edges) mag2.push_back(std::norm(graph.admittance(i, j)));
  if (mag2.empty() || std::all_of(mag2.begin(), mag2.end(), [](double v) { return v == 0.0; }))
    return 1.0;
  auto mean_weight = [&](double k) {
    double s = 0.0;
    for (double m : mag2) s += std::exp(-k * m);
    return s / static_cast<double>(mag2.size());
  };
  double lo = 0.0;
  double hi = 1.0 / *std::max_element(mag2.begin(), mag2.end());
  // Unreachable target (more than half the edges have |Y| = 0): the
  // bracket stops growing and the largest tried k is returned.
  while (mean_weight(hi) > 0.5 && hi < 1e300) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_weight(mid) > 0.5 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration. Stops when the eigen-residual |Mv - lambda v| falls below
/// rel_tol * lambda.
inline double power_iteration_lambda_max(const Matrix& m, double rel_tol = 1e-10,
                                         int max_iter = 10000) {
  const Eigen::Index n = m.rows();
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v(i) = 1.0 + 0.37 * static_cast<double>(i % 7) * ((i % 2) ? -1.0 : 1.0);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = m * v;
    lambda = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;
    const double residual = (w - lambda * v).norm();
    v = w / wn;
    if (residual <= rel_tol * std::abs(lambda)) break;
  }
  return lambda;
}

/// Degree, L = I - D^-1/2 A D^-1/2, lambda_max (power iteration) and
/// L~ = (2 / lambda_max) L - I.
inline LaplacianBundle laplacian_bundle(const AdjacencyMatrix& adj) {
  const Eigen::Index n = adj.weights.rows();
  LaplacianBundle b;
  b.degree = adj.weights.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(b.degree(i) > 0.0))
      throw StructuralError("isolated node " + std::to_string(i) + ": degree is zero");
  const Vector inv_sqrt = b.degree.cwiseSqrt().cwiseInverse();
  b.laplacian = Matrix::Identity(n, n) - inv_sqrt.asDiagonal() * adj.weights * inv_sqrt.asDiagonal();
  b.laplacian = 0.5 * (b.laplacian + b.laplacian.transpose());
  b.lambda_max = power_iteration_lambda_max(b.laplacian);
  b.scaled_laplacian = (2.0 / b.lambda_max) * b.laplacian - Matrix::Identity(n, n);
  return b;
}

struct FourierBasis {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // columns
};

/// Full symmetric eigendecomposition L = Q diag(lambda) Q^T.
inline FourierBasis graph_fourier_basis(const LaplacianBundle& bundle, int cap = 64) {
  if (bundle.laplacian.rows() > cap)
    throw ArgumentError("graph_fourier_basis: N = " + std::to_string(bundle.laplacian.rows()) +
                        " exceeds cap " + std::to_string(cap));
  Eigen::SelfAdjointEigenSolver<Matrix> es(bundle.laplacian);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

/// Edge set as a dense boolean mask (true on (i,j) and (j,i)).
inline std::vector<char> edge_mask(const PowerGraph& g) {
  const auto n = static_cast<std::size_t>(g.n_buses);
  std::vector<char> mask(n * n, 0);
  for (auto [i, j] : g.edges) {
    mask[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] = 1;
    mask[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)] = 1;
  }
  return mask;
}

}  // namespace gridgnn
