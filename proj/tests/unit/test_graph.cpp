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


#include <cmath>

#include <gtest/gtest.h>

#include "gridgnn/graph.hpp"
#include "support.hpp"

namespace gridgnn {
namespace {

PowerGraph two_node(Complex y) {
  PowerGraph g;
  g.n_buses = 2;
  g.edges = {{0, 1}};
  g.admittance = ComplexMatrix::Zero(2, 2);
  g.admittance(0, 1) = g.admittance(1, 0) = -y;
  g.admittance(0, 0) = g.admittance(1, 1) = y;
  g.bus_types = {BusType::kDer, BusType::kLoad};
  g.validate();
  return g;
}

PowerGraph path3(Complex y01, Complex y12) {
  PowerGraph g;
  g.n_buses = 3;
  g.edges = {{0, 1}, {1, 2}};
  g.admittance = ComplexMatrix::Zero(3, 3);
  g.admittance(0, 1) = g.admittance(1, 0) = y01;
  g.admittance(1, 2) = g.admittance(2, 1) = y12;
  g.bus_types = {BusType::kDer, BusType::kEmpty, BusType::kLoad};
  g.validate();
  return g;
}

TEST(BuildAdjacency, ZeroAdmittanceEdgeHasUnitWeight) {
  const auto adj = build_adjacency(two_node(Complex(0, 0)), 1.0);
  EXPECT_EQ(adj.weights(0, 1), 1.0);
  EXPECT_EQ(adj.weights(1, 0), 1.0);
}

TEST(BuildAdjacency, NonEdgeIsZero) {
  const auto adj = build_adjacency(path3(Complex(1, 0), Complex(0, 2)), 0.3);
  EXPECT_EQ(adj.weights(0, 2), 0.0);
  EXPECT_EQ(adj.weights(2, 0), 0.0);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(adj.weights(i, i), 0.0);
}

TEST(BuildAdjacency, HalfWeightAtLn2) {
  // k |Y|^2 = ln 2 with |Y|^2 = 4
  const auto adj = build_adjacency(two_node(Complex(0, 2)), std::log(2.0) / 4.0);
  EXPECT_NEAR(adj.weights(0, 1), 0.5, 1e-15);
}

TEST(BuildAdjacency, RejectsNonPositiveK) {
  const auto g = two_node(Complex(1, 1));
  EXPECT_THROW(build_adjacency(g, 0.0), ArgumentError);
  EXPECT_THROW(build_adjacency(g, -1.0), ArgumentError);
}

TEST(BuildAdjacency, RejectsAsymmetricAdmittance) {
  auto g = two_node(Complex(1, 1));
  g.admittance(0, 1) = Complex(-2, 0);
  EXPECT_THROW(build_adjacency(g, 1.0), StructuralError);
}

TEST(BuildAdjacency, PropertiesOnRandomGraphs) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_graph(2 + rng.index(20), rng);
    const auto adj = build_adjacency(g, rng.uniform(0.01, 2.0));
    for (int i = 0; i < g.n_buses; ++i)
      for (int j = 0; j < g.n_buses; ++j) {
        const double w = adj.weights(i, j);
        EXPECT_EQ(w, adj.weights(j, i));
        EXPECT_GE(w, 0.0);
        EXPECT_LE(w, 1.0);
        if (i == j) {
          EXPECT_EQ(w, 0.0);
        }
        EXPECT_EQ(w > 0.0, g.has_edge(i, j));
      }
  }
}

TEST(TuneScalingK, IdenticalUnitMagnitudes) {
  EXPECT_NEAR(tune_scaling_k(path3(Complex(1, 0), Complex(0, -1))), std::log(2.0), 1e-12);
}

TEST(TuneScalingK, AllZeroFallsBackToOne) {
  EXPECT_EQ(tune_scaling_k(path3(Complex(0, 0), Complex(0, 0))), 1.0);
}

TEST(TuneScalingK, TwoMagnitudesMatchesBisectionOracle) {
  // root of (e^-k + e^-3k)/2 = 0.5, computed independently with Brent's method
  const double k = tune_scaling_k(path3(Complex(1, 0), Complex(0, std::sqrt(3.0))));
  EXPECT_NEAR(k, 0.38224508584003564, 1e-10);
}

TEST(TuneScalingK, MeanWeightIsHalfOnRandomGraphs) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_graph(2 + rng.index(20), rng);
    const auto adj = build_adjacency(g, tune_scaling_k(g));
    double s = 0.0;
    for (auto [i, j] : g.edges) s += adj.weights(i, j);
    EXPECT_NEAR(s / static_cast<double>(g.edges.size()), 0.5, 1e-6);
  }
}

TEST(LaplacianBundle, TwoNodeGraph) {
  const auto lb = laplacian_bundle(build_adjacency(two_node(Complex(0.3, -1.0)), 0.7));
  EXPECT_NEAR(lb.laplacian(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(lb.laplacian(0, 1), -1.0, 1e-15);
  EXPECT_NEAR(lb.lambda_max, 2.0, 1e-10);
  EXPECT_NEAR(lb.scaled_laplacian(0, 0), 0.0, 1e-10);
  EXPECT_NEAR(lb.scaled_laplacian(0, 1), -1.0, 1e-10);
}

TEST(LaplacianBundle, IsolatedNodeIsStructuralError) {
  PowerGraph g;
  g.n_buses = 3;
  g.admittance = ComplexMatrix::Zero(3, 3);
  g.bus_types.assign(3, BusType::kEmpty);
  EXPECT_THROW(laplacian_bundle(build_adjacency(g, 1.0)), StructuralError);
}

TEST(LaplacianBundle, PathLambdaMaxMatchesDenseOracle) {
  const auto lb = laplacian_bundle(build_adjacency(path3(Complex(0, 0), Complex(0, 0)), 1.0));
  Eigen::SelfAdjointEigenSolver<Matrix> es(lb.laplacian);
  EXPECT_NEAR(lb.lambda_max, es.eigenvalues().maxCoeff(), 1e-9);
  EXPECT_NEAR(lb.lambda_max, 2.0, 1e-9);
}

TEST(LaplacianBundle, PowerIterationAndSpectrumOnRandomGraphs) {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const auto g = testing::random_graph(2 + rng.index(31), rng);
    const auto lb = laplacian_bundle(build_adjacency(g, tune_scaling_k(g)));
    Eigen::SelfAdjointEigenSolver<Matrix> es(lb.laplacian);
    EXPECT_NEAR(lb.lambda_max, es.eigenvalues().maxCoeff(), 1e-8) << "trial " << trial;
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    EXPECT_LE(es.eigenvalues().maxCoeff(), 2.0 + 1e-9);
    EXPECT_LT((lb.laplacian - lb.laplacian.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Matrix> ss(lb.scaled_laplacian);
    EXPECT_GE(ss.eigenvalues().minCoeff(), -1.0 - 1e-9);
    EXPECT_LE(ss.eigenvalues().maxCoeff(), 1.0 + 1e-9);
  }
}

TEST(GraphFourierBasis, TwoNodeEigenvalues) {
  const auto fb = graph_fourier_basis(laplacian_bundle(build_adjacency(two_node(Complex(1, 0)), 1.0)));
  EXPECT_NEAR(fb.eigenvalues(0), 0.0, 1e-12);
  EXPECT_NEAR(fb.eigenvalues(1), 2.0, 1e-12);
}

TEST(GraphFourierBasis, ReconstructsRandomGraphLaplacian) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = testing::random_graph(6, rng);
    const auto lb = laplacian_bundle(build_adjacency(g, tune_scaling_k(g)));
    const auto fb = graph_fourier_basis(lb);
    const Matrix& q = fb.eigenvectors;
    EXPECT_LT((q * fb.eigenvalues.asDiagonal() * q.transpose() - lb.laplacian).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((q.transpose() * q - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(fb.eigenvalues(0), 0.0, 1e-9);
    for (int i = 1; i < 6; ++i) EXPECT_LE(fb.eigenvalues(i - 1), fb.eigenvalues(i));
  }
}

TEST(GraphFourierBasis, CapExceededIsArgumentError) {
  Rng rng(15);
  const auto g = testing::random_graph(10, rng);
  const auto lb = laplacian_bundle(build_adjacency(g, 1.0));
  EXPECT_THROW(graph_fourier_basis(lb, 8), ArgumentError);
}

TEST(PowerGraphJson, RoundTrip) {
  Rng rng(16);
  const auto g = testing::random_graph(7, rng);
  const nlohmann::json j = g;
  const auto h = j.get<PowerGraph>();
  EXPECT_EQ(h.n_buses, g.n_buses);
  EXPECT_EQ(h.edges, g.edges);
  EXPECT_EQ(h.bus_types, g.bus_types);
  EXPECT_EQ((h.admittance - g.admittance).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PowerGraphJson, MalformedIsStructuralError) {
  const auto j = nlohmann::json::parse(R"({"n_buses": 2, "edges": [[0, 0]],
    "admittance": [[0,0],[0,0],[0,0],[0,0]], "bus_types": [0, 0]})");
  EXPECT_THROW(j.get<PowerGraph>(), StructuralError);
  const auto k = nlohmann::json::parse(R"({"n_buses": 2, "edges": []})");
  EXPECT_THROW(k.get<PowerGraph>(), StructuralError);
}

}  // namespace
}  // namespace gridgnn
