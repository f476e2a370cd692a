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

// Tape ops over batches of node-feature matrices. A batch of B snapshots on
// an N-node graph is stored as a rank-2 tensor [B*N, D] (snapshot-major);
// per-snapshot N x N operators are rank-3 tensors [B, N, N].

#include <cmath>
#include <vector>

#include "gridgnn/tensor.hpp"

namespace gridgnn {

namespace detail {

inline std::size_t batch_of(const Var& h, std::size_t n, const char* op) {
  if (h.value().rank() != 2 || h.shape()[0] % n != 0)
    throw ArgumentError(std::string(op) + ": node features must be [B*N, D] with N = " + std::to_string(n));
  return h.shape()[0] / n;
}

}  // namespace detail

/// out[b, u, v] = src[b*N + u] + dst[b*N + v] + bias
inline Var pairwise_sum(Var src, Var dst, Var bias, std::size_t n) {
  if (src.size() != dst.size() || src.size() % n != 0 || bias.size() != 1)
    throw ArgumentError("pairwise_sum: bad shapes");
  const std::size_t b = src.size() / n;
  const Tensor& s = src.value();
  const Tensor& d = dst.value();
  const double c = bias.value()[0];
  Tensor y({b, n, n});
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = 0; v < n; ++v) y(k, u, v) = s[k * n + u] + d[k * n + v] + c;
  return src.tape->record(std::move(y), {src, dst, bias}, [src, dst, bias, b, n](const Tensor& g, GradBuffer& gb) {
    Tensor* gs = gb.slot(src.id);
    Tensor* gd = gb.slot(dst.id);
    Tensor* gc = gb.slot(bias.id);
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
          const double x = g(k, u, v);
          if (gs) (*gs)[k * n + u] += x;
          if (gd) (*gd)[k * n + v] += x;
          if (gc) (*gc)[0] += x;
        }
  });
}

/// Row-wise softmax restricted to the neighbor set given by `mask`
/// (row-major N x N); entries outside the mask are exactly zero.
inline Var neighbor_softmax(Var logits, const std::vector<char>& mask) {
  const Tensor& x = logits.value();
  if (x.rank() != 3 || x.dim(1) != x.dim(2) || mask.size() != x.dim(1) * x.dim(2))
    throw ArgumentError("neighbor_softmax: logits must be [B, N, N] matching the mask");
  const std::size_t b = x.dim(0), n = x.dim(1);
  for (std::size_t u = 0; u < n; ++u) {
    bool any = false;
    for (std::size_t v = 0; v < n; ++v) any = any || mask[u * n + v];
    if (!any) throw StructuralError("node " + std::to_string(u) + " has an empty neighbor set");
  }
  Tensor y({b, n, n});
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t u = 0; u < n; ++u) {
      double mx = -INFINITY;
      for (std::size_t v = 0; v < n; ++v)
        if (mask[u * n + v]) mx = std::max(mx, x(k, u, v));
      double z = 0.0;
      for (std::size_t v = 0; v < n; ++v)
        if (mask[u * n + v]) z += (y(k, u, v) = std::exp(x(k, u, v) - mx));
      for (std::size_t v = 0; v < n; ++v) y(k, u, v) /= z;
    }
  Tensor yc = y;
  return logits.tape->record(std::move(y), {logits}, [logits, yc = std::move(yc), mask, b, n](const Tensor& g, GradBuffer& gb) {
    Tensor* gx = gb.slot(logits.id);
    if (!gx) return;
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t u = 0; u < n; ++u) {
        double dot = 0.0;
        for (std::size_t v = 0; v < n; ++v) dot += g(k, u, v) * yc(k, u, v);
        for (std::size_t v = 0; v < n; ++v)
          if (mask[u * n + v]) (*gx)(k, u, v) += yc(k, u, v) * (g(k, u, v) - dot);
      }
  });
}

/// Applies a per-snapshot operator to node features: out_b = op_b h_b.
/// `op` is [B, N, N] or a shared [N, N]; `h` is [B*N, D].
inline Var graph_matmul(Var op, Var h) {
  const Tensor& a = op.value();
  const bool shared = a.rank() == 2;
  if (!(shared || a.rank() == 3) || a.dim(a.rank() - 1) != a.dim(a.rank() - 2))
    throw ArgumentError("graph_matmul: operator must be [N,N] or [B,N,N]");
  const std::size_t n = a.dim(a.rank() - 1);
  const std::size_t b = detail::batch_of(h, n, "graph_matmul");
  if (!shared && a.dim(0) != b) throw ArgumentError("graph_matmul: batch size mismatch");
  const std::size_t d = h.shape()[1];
  Tensor y({b * n, d});
  for (std::size_t k = 0; k < b; ++k)
    as_matrix(y, n, d, k * n * d).noalias() =
        as_matrix(a, n, n, shared ? 0 : k * n * n) * as_matrix(h.value(), n, d, k * n * d);
  return op.tape->record(std::move(y), {op, h}, [op, h, shared, b, n, d](const Tensor& g, GradBuffer& gb) {
    const Tensor& a = op.value();
    if (Tensor* gh = gb.slot(h.id))
      for (std::size_t k = 0; k < b; ++k)
        as_matrix(*gh, n, d, k * n * d).noalias() +=
            as_matrix(a, n, n, shared ? 0 : k * n * n).transpose() * as_matrix(g, n, d, k * n * d);
    if (Tensor* ga = gb.slot(op.id))
      for (std::size_t k = 0; k < b; ++k)
        as_matrix(*ga, n, n, shared ? 0 : k * n * n).noalias() +=
            as_matrix(g, n, d, k * n * d) * as_matrix(h.value(), n, d, k * n * d).transpose();
  });
}

/// Scaled Laplacian (2 / lambda_max) (I - D^-1/2 A D^-1/2) - I of each
/// snapshot's (possibly non-symmetric) adjacency A [B, N, N], with D the row
/// sums of A.
inline Var scaled_laplacian_of(Var adjacency, double lambda_max) {
  const Tensor& a = adjacency.value();
  if (a.rank() != 3 || a.dim(1) != a.dim(2)) throw ArgumentError("scaled_laplacian_of: expected [B, N, N]");
  if (!(lambda_max > 0.0)) throw ArgumentError("scaled_laplacian_of: lambda_max must be positive");
  const std::size_t b = a.dim(0), n = a.dim(1);
  const double c = 2.0 / lambda_max;
  Tensor s({b, n});
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t u = 0; u < n; ++u) {
      double deg = 0.0;
      for (std::size_t v = 0; v < n; ++v) deg += a(k, u, v);
      if (!std::isfinite(deg)) throw NumericalError("scaled_laplacian_of: non-finite degree at node " + std::to_string(u));
      if (!(deg > 0.0)) throw StructuralError("scaled_laplacian_of: node " + std::to_string(u) + " has zero degree");
      s(k, u) = 1.0 / std::sqrt(deg);
    }
  Tensor y({b, n, n});
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = 0; v < n; ++v)
        y(k, u, v) = c * ((u == v ? 1.0 : 0.0) - s(k, u) * a(k, u, v) * s(k, v)) - (u == v ? 1.0 : 0.0);
  return adjacency.tape->record(std::move(y), {adjacency}, [adjacency, s = std::move(s), b, n, c](const Tensor& g, GradBuffer& gb) {
    Tensor* ga = gb.slot(adjacency.id);
    if (!ga) return;
    const Tensor& a = adjacency.value();
    std::vector<double> ds(n);
    for (std::size_t k = 0; k < b; ++k) {
      std::fill(ds.begin(), ds.end(), 0.0);
      for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
          const double gn = -c * g(k, u, v);  // d/d normalized(u,v)
          (*ga)(k, u, v) += gn * s(k, u) * s(k, v);
          ds[u] += gn * a(k, u, v) * s(k, v);
          ds[v] += gn * s(k, u) * a(k, u, v);
        }
      for (std::size_t u = 0; u < n; ++u) {
        // s = deg^-1/2  =>  ds/ddeg = -s^3 / 2
        const double su = s(k, u);
        const double dd = ds[u] * (-0.5 * su * su * su);
        for (std::size_t v = 0; v < n; ++v) (*ga)(k, u, v) += dd;
      }
    }
  });
}

/// Broadcasts a constant [N, N] matrix to [B, N, N].
inline Tensor tile_batch(const Tensor& m, std::size_t b) {
  const std::size_t n = m.dim(0);
  Tensor y({b, n, n});
  for (std::size_t k = 0; k < b; ++k) std::copy(m.values().begin(), m.values().end(), y.data() + k * n * n);
  return y;
}

}  // namespace gridgnn
