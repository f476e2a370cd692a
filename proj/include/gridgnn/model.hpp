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

// Encoder -> graph attention stack -> physics-infused adjacency ->
// Chebyshev graph convolution stack -> decoder. Predicts per-bus rates of
// change of the six measurable states from a C-step window of extended
// states.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridgnn/activations.hpp"
#include "gridgnn/graph.hpp"
#include "gridgnn/graph_ops.hpp"
#include "gridgnn/tensor.hpp"
#include "gridgnn/util.hpp"

namespace gridgnn {

inline constexpr std::size_t kStateDim = 10;   // [P,Q,ReV,ImV,ReI,ImI,dP,dQ,gamma,beta]
inline constexpr std::size_t kMeasuredDim = 6; // [P,Q,ReV,ImV,ReI,ImI]

struct ModelConfig {
  int n_mlp_layers = 3;  // N_M
  int n_gal = 5;         // N_A
  int n_gcl = 5;         // N_C
  int cheb_order = 5;    // K
  int hidden = 128;      // D
  int input_steps = 3;   // C
  int heads = 4;         // m
  double attention_slope = 0.2;
  double output_gain = 0.01;  // scale of the decoder's final weight init

  static ModelConfig nominal() { return {}; }

  void validate() const {
    if (n_mlp_layers < 1) throw ArgumentError("n_mlp_layers must be >= 1");
    if (n_gal < 0 || n_gcl < 0 || n_gal + n_gcl < 1)
      throw ArgumentError("need n_gal >= 0, n_gcl >= 0 and n_gal + n_gcl >= 1");
    if (n_gcl > 0 && cheb_order < 1) throw ArgumentError("cheb_order must be >= 1 when n_gcl > 0");
    if (input_steps < 1) throw ArgumentError("input_steps must be >= 1");
    if (heads < 1) throw ArgumentError("heads must be >= 1");
    if (hidden < 1) throw ArgumentError("hidden must be >= 1");
    if (!(output_gain > 0.0)) throw ArgumentError("output_gain must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_mlp_layers", c.n_mlp_layers}, {"n_gal", c.n_gal},       {"n_gcl", c.n_gcl},
       {"cheb_order", c.cheb_order},     {"hidden", c.hidden},     {"input_steps", c.input_steps},
       {"heads", c.heads},               {"attention_slope", c.attention_slope}, {"output_gain", c.output_gain}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_mlp_layers = j.value("n_mlp_layers", d.n_mlp_layers);
  c.n_gal = j.value("n_gal", d.n_gal);
  c.n_gcl = j.value("n_gcl", d.n_gcl);
  c.cheb_order = j.value("cheb_order", d.cheb_order);
  c.hidden = j.value("hidden", d.hidden);
  c.input_steps = j.value("input_steps", d.input_steps);
  c.heads = j.value("heads", d.heads);
  c.attention_slope = j.value("attention_slope", d.attention_slope);
  c.output_gain = j.value("output_gain", d.output_gain);
  c.validate();
}

/// N_A + K N_C.
inline int effective_mp_steps(const ModelConfig& c) {
  return c.n_gal + (c.n_gcl > 0 ? c.cheb_order * c.n_gcl : 0);
}

/// Scalar count of a fully-connected stack with the given layer widths.
/// Hidden layers with activation carry W, BN scale/shift and a PReLU slope
/// (the bias is redundant before BN); linear layers carry W and b.
inline std::size_t fcnn_parameter_count(const std::vector<int>& widths, bool hidden_activation) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<std::size_t>(widths[l]);
    const auto out = static_cast<std::size_t>(widths[l + 1]);
    const bool last = l + 2 == widths.size();
    n += in * out + ((hidden_activation && !last) ? 2 * out + 1 : out);
  }
  return n;
}

/// Graph data the model needs at every forward pass.
struct GraphContext {
  std::size_t n = 0;
  std::vector<char> mask;     // edge set, N x N
  Tensor adjacency;           // admittance-derived A [N, N]
  Tensor scaled_laplacian;    // L~ of A (used when there are no attention layers)
  double scaling_k = 1.0;

  /// scaling_k <= 0 selects the tuned value.
  static GraphContext from(const PowerGraph& graph, double scaling_k = 0.0) {
    GraphContext ctx;
    ctx.n = static_cast<std::size_t>(graph.n_buses);
    ctx.scaling_k = scaling_k > 0.0 ? scaling_k : tune_scaling_k(graph);
    const AdjacencyMatrix adj = build_adjacency(graph, ctx.scaling_k);
    const LaplacianBundle lb = laplacian_bundle(adj);
    ctx.mask = edge_mask(graph);
    ctx.adjacency = Tensor({ctx.n, ctx.n});
    ctx.scaled_laplacian = Tensor({ctx.n, ctx.n});
    for (std::size_t i = 0; i < ctx.n; ++i)
      for (std::size_t j = 0; j < ctx.n; ++j) {
        ctx.adjacency(i, j) = adj.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        ctx.scaled_laplacian(i, j) = lb.scaled_laplacian(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    return ctx;
  }
};

/// 0.5 (A_alpha + A). Entries of A_alpha outside A's support are rejected.
inline Matrix physics_infused_adjacency(const Matrix& attention, const Matrix& adjacency) {
  if (attention.rows() != adjacency.rows() || attention.cols() != adjacency.cols())
    throw ArgumentError("physics_infused_adjacency: shape mismatch");
  for (Eigen::Index i = 0; i < attention.rows(); ++i)
    for (Eigen::Index j = 0; j < attention.cols(); ++j)
      if (adjacency(i, j) == 0.0 && attention(i, j) != 0.0)
        throw StructuralError("physics_infused_adjacency: attention weight outside the graph edge set");
  return 0.5 * (attention + adjacency);
}

struct GalOutput {
  Var h;
  Var attention;  // [B, N, N], head-averaged
};

class Model {
 public:
  Model() = default;

  explicit Model(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.hidden;
    const int in = static_cast<int>(kStateDim) * cfg_.input_steps;

    std::vector<int> enc{in};
    for (int l = 0; l < cfg_.n_mlp_layers; ++l) enc.push_back(d);
    add_fcnn("encoder", enc, rng);

    for (int j = 0; j < cfg_.n_gal; ++j) {
      const std::string p = "gal." + std::to_string(j);
      add_glorot(p + ".theta", d, d, rng);
      for (int k = 0; k < cfg_.heads; ++k) {
        const std::string h = p + ".head." + std::to_string(k);
        add_glorot(h + ".src", d, 1, rng, 2 * d);
        add_glorot(h + ".dst", d, 1, rng, 2 * d);
        params_.add(h + ".bias", Tensor({1}, 0.0));
      }
      add_activation(p, d);
    }

    for (int j = 0; j < cfg_.n_gcl; ++j) {
      const std::string p = "gcl." + std::to_string(j);
      for (int k = 0; k <= cfg_.cheb_order; ++k) add_glorot(p + ".theta." + std::to_string(k), d, d, rng);
      add_activation(p, d);
    }

    std::vector<int> dec;
    for (int l = 0; l < cfg_.n_mlp_layers; ++l) dec.push_back(d);
    dec.push_back(static_cast<int>(kMeasuredDim));
    add_fcnn("decoder", dec, rng, cfg_.output_gain);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::map<std::string, BNState>& bn_states() { return bn_; }
  const std::map<std::string, BNState>& bn_states() const { return bn_; }

  std::size_t parameter_count() const { return params_.scalar_count(); }

  /// Per-node input width 10 C.
  std::size_t input_width() const { return kStateDim * static_cast<std::size_t>(cfg_.input_steps); }

  /// inputs [B*N, 10 C] -> predicted rates [B*N, 6].
  Var forward(Tape& tape, const Tensor& inputs, const GraphContext& g, Mode mode) {
    if (inputs.rank() != 2 || inputs.cols() != input_width() || inputs.rows() % g.n != 0)
      throw ArgumentError("model input must be [B*N, " + std::to_string(input_width()) + "], got " +
                          shape_str(inputs.shape()));
    Var h = encode(tape, tape.constant(inputs), mode);
    std::optional<Var> attention;
    for (int j = 0; j < cfg_.n_gal; ++j) {
      GalOutput o = gal_forward(tape, h, g, j, mode);
      h = o.h;
      attention = o.attention;
    }
    if (cfg_.n_gcl > 0) {
      Var lap = attention ? scaled_laplacian_of(physics_infused(tape, *attention, g), 2.0)
                          : tape.constant(g.scaled_laplacian);
      for (int j = 0; j < cfg_.n_gcl; ++j) h = chebconv_forward(tape, h, lap, j, mode);
    }
    return decode(tape, h, mode);
  }

  Var encode(Tape& tape, Var x, Mode mode) { return fcnn(tape, "encoder", x, mode); }

  Var decode(Tape& tape, Var h, Mode mode) { return fcnn(tape, "decoder", h, mode); }

  /// One attention layer. Per head k the score of edge (u, v) is
  /// LeakyReLU(a_k . [z_u ; z_v] + b_k) with z = h Theta; scores are
  /// normalized over each node's neighbor set and averaged over heads.
  /// The update adds the node's own transformed features to the aggregated
  /// message before BN + PReLU: h' = sigma((A_alpha + I) h Theta).
  GalOutput gal_forward(Tape& tape, Var h, const GraphContext& g, int layer, Mode mode) {
    const std::string p = "gal." + std::to_string(layer);
    Var z = matmul(h, param(tape, p + ".theta"));
    Var att = attention_adjacency(tape, z, g, layer);
    Var msg = add(graph_matmul(att, z), z);
    return {activation(tape, p, msg, mode), att};
  }

  /// Head-averaged attention adjacency of layer `layer` given z = h Theta.
  Var attention_adjacency(Tape& tape, Var z, const GraphContext& g, int layer) {
    const std::string p = "gal." + std::to_string(layer);
    std::optional<Var> acc;
    for (int k = 0; k < cfg_.heads; ++k) {
      const std::string hp = p + ".head." + std::to_string(k);
      Var src = matmul(z, param(tape, hp + ".src"));
      Var dst = matmul(z, param(tape, hp + ".dst"));
      Var logits = leaky_relu(pairwise_sum(src, dst, param(tape, hp + ".bias"), g.n), cfg_.attention_slope);
      Var alpha = neighbor_softmax(logits, g.mask);
      acc = acc ? add(*acc, alpha) : alpha;
    }
    return cfg_.heads == 1 ? *acc : scalar_mul(*acc, 1.0 / cfg_.heads);
  }

  /// 0.5 (A_alpha + A) on every snapshot of the batch.
  Var physics_infused(Tape& tape, Var attention, const GraphContext& g) {
    Var a = tape.constant(tile_batch(g.adjacency, attention.value().dim(0)));
    return scalar_mul(add(attention, a), 0.5);
  }

  /// sum_k T_k(L~) h Theta_k, with T_0 h = h, T_1 h = L~ h,
  /// T_k h = 2 L~ T_{k-1} h - T_{k-2} h.
  Var chebconv_preactivation(Tape& tape, Var h, Var lap, int layer) {
    if (cfg_.cheb_order < 1) throw ArgumentError("chebconv: cheb_order must be >= 1");
    const std::string p = "gcl." + std::to_string(layer) + ".theta.";
    Var t_prev = h;
    Var t_cur = graph_matmul(lap, h);
    Var out = add(matmul(t_prev, param(tape, p + "0")), matmul(t_cur, param(tape, p + "1")));
    for (int k = 2; k <= cfg_.cheb_order; ++k) {
      Var t_next = sub(scalar_mul(graph_matmul(lap, t_cur), 2.0), t_prev);
      out = add(out, matmul(t_next, param(tape, p + std::to_string(k))));
      t_prev = t_cur;
      t_cur = t_next;
    }
    return out;
  }

  Var chebconv_forward(Tape& tape, Var h, Var lap, int layer, Mode mode) {
    return activation(tape, "gcl." + std::to_string(layer), chebconv_preactivation(tape, h, lap, layer), mode);
  }

  Var param(Tape& tape, const std::string& name) const { return tape.parameter(params_.at(name)); }

 private:
  void add_glorot(const std::string& name, int fan_in, int fan_out, Rng& rng, int fan_in_eff = 0,
                  double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>((fan_in_eff ? fan_in_eff : fan_in) + fan_out));
    Tensor w({static_cast<std::size_t>(fan_in), static_cast<std::size_t>(fan_out)});
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    params_.add(name, std::move(w));
  }

  void add_activation(const std::string& prefix, int width) {
    const auto w = static_cast<std::size_t>(width);
    params_.add(prefix + ".bn.gamma", Tensor({w}, 1.0));
    params_.add(prefix + ".bn.beta", Tensor({w}, 0.0));
    params_.add(prefix + ".prelu", Tensor({1}, 0.25));
    bn_.emplace(prefix + ".bn", BNState(w));
  }

  // The final (linear) layer's weights are scaled by `last_gain`.
  void add_fcnn(const std::string& prefix, const std::vector<int>& widths, Rng& rng, double last_gain = 1.0) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::string p = prefix + "." + std::to_string(l);
      add_glorot(p + ".weight", widths[l], widths[l + 1], rng, 0, l + 2 == widths.size() ? last_gain : 1.0);
      if (l + 2 == widths.size())
        params_.add(p + ".bias", Tensor({static_cast<std::size_t>(widths[l + 1])}, 0.0));
      else
        add_activation(p, widths[l + 1]);
    }
  }

  Var activation(Tape& tape, const std::string& prefix, Var x, Mode mode) {
    Var y = batch_norm(x, bn_.at(prefix + ".bn"), mode, param(tape, prefix + ".bn.gamma"),
                       param(tape, prefix + ".bn.beta"));
    return prelu(y, param(tape, prefix + ".prelu"));
  }

  Var fcnn(Tape& tape, const std::string& prefix, Var x, Mode mode) {
    for (int l = 0; l < cfg_.n_mlp_layers; ++l) {
      const std::string p = prefix + "." + std::to_string(l);
      x = matmul(x, param(tape, p + ".weight"));
      if (l + 1 == cfg_.n_mlp_layers)
        x = add_row(x, param(tape, p + ".bias"));
      else
        x = activation(tape, p, x, mode);
    }
    return x;
  }

  ModelConfig cfg_;
  ParameterSet params_;
  std::map<std::string, BNState> bn_;
};

/// Flattens one snapshot window [N, 10, C] into model input rows
/// [N, 10 C] (current step first, oldest last).
inline Tensor flatten_window(const Tensor& window) {
  if (window.rank() != 3 || window.dim(1) != kStateDim)
    throw ArgumentError("snapshot window must be [N, 10, C], got " + shape_str(window.shape()));
  const std::size_t n = window.dim(0), c = window.dim(2);
  Tensor rows({n, kStateDim * c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < kStateDim; ++f)
      for (std::size_t s = 0; s < c; ++s) rows(i, s * kStateDim + f) = window(i, f, s);
  return rows;
}

/// Convenience single-window evaluation. Returns [N, 6].
inline Tensor model_forward(Model& model, const Tensor& window, const GraphContext& g, Mode mode = Mode::kEval) {
  if (window.dim(2) != static_cast<std::size_t>(model.config().input_steps))
    throw ArgumentError("window has " + std::to_string(window.dim(2)) + " steps, model expects " +
                        std::to_string(model.config().input_steps));
  Tape tape;
  return model.forward(tape, flatten_window(window), g, mode).value();
}

}  // namespace gridgnn
