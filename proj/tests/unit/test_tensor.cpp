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
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "gridgnn/activations.hpp"
#include "gridgnn/graph_ops.hpp"
#include "gridgnn/tensor.hpp"
#include "support.hpp"

namespace gridgnn {
namespace {

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Norm-wise relative error between the analytic gradient of
/// sum(op(inputs) * R) and central finite differences (h = 1e-6), maximized
/// over inputs.
double gradient_error(const OpFn& op, std::vector<Tensor> inputs, Rng& rng) {
  ParameterSet ps;
  for (std::size_t i = 0; i < inputs.size(); ++i) ps.add("x" + std::to_string(i), inputs[i]);
  Tensor weights;
  auto loss = [&](GradientMap* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : ps.items()) vars.push_back(tape.parameter(p));
    Var out = op(tape, vars);
    if (weights.empty()) weights = testing::random_tensor(out.shape(), rng);
    Var l = sum(hadamard(out, tape.constant(weights)));
    if (grads) *grads = tape.backward(l);
    return l.value()[0];
  };
  GradientMap grads;
  loss(&grads);
  double worst = 0.0;
  for (auto& p : ps.items()) {
    const Tensor& g = grads.at(p.name);
    double num = 0.0, den_a = 0.0, den_f = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double fd = testing::central_difference([&] { return loss(nullptr); }, p.value[i]);
      num += (g[i] - fd) * (g[i] - fd);
      den_a += g[i] * g[i];
      den_f += fd * fd;
    }
    const double den = std::max({std::sqrt(den_a), std::sqrt(den_f), 1e-12});
    worst = std::max(worst, std::sqrt(num) / den);
  }
  return worst;
}

void expect_gradients(const char* name, const OpFn& op,
                      const std::function<std::vector<Tensor>(Rng&)>& make_inputs, int trials = 100) {
  Rng rng(std::hash<std::string>{}(name) & 0xffff);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) worst = std::max(worst, gradient_error(op, make_inputs(rng), rng));
  EXPECT_LT(worst, 1e-5) << name;
}

Tensor rnd(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return testing::random_tensor(std::move(s), rng, lo, hi);
}

TEST(TensorOps, MatmulIdentity) {
  Tape tape;
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Var y = matmul(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), tape.constant(m));
  EXPECT_EQ(y.value(), m);
}

TEST(TensorOps, ExpOfZeroIsOne) {
  Tape tape;
  const Var y = exp(tape.constant(Tensor({2, 3}, 0.0)));
  for (double v : y.value().values()) EXPECT_EQ(v, 1.0);
}

TEST(TensorOps, SumOfSquaresGradient) {
  ParameterSet ps;
  ps.add("a", Tensor({2}, std::vector<double>{1.0, 2.0}));
  Tape tape;
  const Var a = tape.parameter(ps.at("a"));
  const auto g = tape.backward(sum(hadamard(a, a)));
  EXPECT_NEAR(g.at("a")[0], 2.0, 1e-12);
  EXPECT_NEAR(g.at("a")[1], 4.0, 1e-12);
}

TEST(TensorOps, ShapeMismatchIsArgumentError) {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({3, 2}));
  EXPECT_THROW(add(a, b), ArgumentError);
  EXPECT_THROW(sub(a, b), ArgumentError);
  EXPECT_THROW(hadamard(a, b), ArgumentError);
  EXPECT_THROW(matmul(a, a), ArgumentError);
  EXPECT_THROW(reshape(a, {5}), ArgumentError);
  EXPECT_THROW(concat_last_axis({a, b}), ArgumentError);
}

TEST(TensorOps, InvalidTensorShapes) {
  EXPECT_THROW(Tensor({1, 2, 3, 4}), ArgumentError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ArgumentError);
}

TEST(Backward, NonScalarRootIsArgumentError) {
  Tape tape;
  EXPECT_THROW(tape.backward(tape.constant(Tensor({2}))), ArgumentError);
}

TEST(Backward, UnreachedParameterGetsZero) {
  ParameterSet ps;
  ps.add("p", Tensor({3}, 1.5));
  ps.add("q", Tensor({3}, 2.0));
  Tape tape;
  const Var p = tape.parameter(ps.at("p"));
  tape.parameter(ps.at("q"));
  const auto g = tape.backward(sum(square(p)));
  for (double v : g.at("q").values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearFormMatchesOuterProduct) {
  Rng rng(3);
  ParameterSet ps;
  ps.add("W", rnd({3, 4}, rng));
  const Tensor x = rnd({4, 2}, rng);
  Tape tape;
  const auto g = tape.backward(sum(matmul(tape.parameter(ps.at("W")), tape.constant(x))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g.at("W")(i, j), x(j, 0) + x(j, 1), 1e-14);
  EXPECT_LT(gradient_error([&](Tape& t, const std::vector<Var>& v) { return matmul(v[0], t.constant(x)); },
                           {ps.at("W").value}, rng),
            1e-6);
}

TEST(Backward, TwoPathsAccumulate) {
  ParameterSet ps;
  ps.add("p", Tensor({2}, std::vector<double>{0.5, -1.5}));
  Tape tape;
  const Var a = tape.parameter(ps.at("p"));
  const Var b = tape.parameter(ps.at("p"));  // recorded twice
  const auto g = tape.backward(sum(add(scalar_mul(a, 3.0), square(b))));
  EXPECT_NEAR(g.at("p")[0], 3.0 + 1.0, 1e-14);
  EXPECT_NEAR(g.at("p")[1], 3.0 - 3.0, 1e-14);
}

TEST(Backward, ReplayGivesIdenticalGradients) {
  Rng rng(4);
  ParameterSet ps;
  ps.add("W", rnd({4, 4}, rng));
  Tape tape;
  const Var w = tape.parameter(ps.at("W"));
  const Var l = sum(exp(matmul(w, w)));
  const auto g1 = tape.backward(l);
  const auto g2 = tape.backward(l);
  EXPECT_EQ(g1.at("W"), g2.at("W"));
}

TEST(Tape, FiniteCheckRaisesNumericalError) {
  Tape tape;
  tape.set_check_finite(true);
  EXPECT_THROW(exp(tape.constant(Tensor({1}, 1000.0))), NumericalError);
}

TEST(Gradients, ElementwiseAndReductionOps) {
  expect_gradients("add", [](Tape&, const auto& v) { return add(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 4}, r), rnd({3, 4}, r)}; });
  expect_gradients("sub", [](Tape&, const auto& v) { return sub(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({2, 3, 2}, r), rnd({2, 3, 2}, r)}; });
  expect_gradients("hadamard", [](Tape&, const auto& v) { return hadamard(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 4}, r), rnd({3, 4}, r)}; });
  expect_gradients("scalar_mul", [](Tape&, const auto& v) { return scalar_mul(v[0], -1.7); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({5}, r)}; });
  expect_gradients("exp", [](Tape&, const auto& v) { return exp(v[0]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 3}, r)}; });
  expect_gradients("square", [](Tape&, const auto& v) { return square(v[0]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 3}, r)}; });
  expect_gradients("sum", [](Tape&, const auto& v) { return sum(square(v[0])); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({4, 2}, r)}; });
  expect_gradients("mean", [](Tape&, const auto& v) { return mean(exp(v[0])); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({4, 2}, r)}; });
}

TEST(Gradients, StructuralOps) {
  expect_gradients("matmul", [](Tape&, const auto& v) { return matmul(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 4}, r), rnd({4, 2}, r)}; });
  expect_gradients("concat", [](Tape&, const auto& v) { return concat_last_axis({v[0], v[1], v[0]}); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 2}, r), rnd({3, 4}, r)}; });
  expect_gradients("reshape", [](Tape&, const auto& v) { return square(reshape(v[0], {2, 3, 2})); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({4, 3}, r)}; });
  expect_gradients("slice_cols", [](Tape&, const auto& v) { return slice_cols(v[0], 1, 2); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 4}, r)}; });
  expect_gradients("add_row", [](Tape&, const auto& v) { return add_row(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 4}, r), rnd({4}, r)}; });
  expect_gradients("mul_row", [](Tape&, const auto& v) { return mul_row(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({3, 4}, r), rnd({4}, r)}; });
}

TEST(Gradients, Activations) {
  expect_gradients("leaky_relu", [](Tape&, const auto& v) { return leaky_relu(v[0]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({4, 5}, r)}; });
  expect_gradients("prelu", [](Tape&, const auto& v) { return prelu(v[0], v[1]); },
                   [](Rng& r) { return std::vector<Tensor>{rnd({4, 5}, r), Tensor({1}, r.uniform(0.05, 0.9))}; });
  BNState state(3);
  expect_gradients(
      "batch_norm_train",
      [&](Tape&, const auto& v) { return batch_norm(v[0], state, Mode::kTrain, v[1], v[2]); },
      [](Rng& r) { return std::vector<Tensor>{rnd({6, 3}, r), rnd({3}, r), rnd({3}, r)}; });
  BNState eval_state(3);
  expect_gradients(
      "batch_norm_eval",
      [&](Tape&, const auto& v) { return batch_norm(v[0], eval_state, Mode::kEval, v[1], v[2]); },
      [](Rng& r) { return std::vector<Tensor>{rnd({6, 3}, r), rnd({3}, r), rnd({3}, r)}; });
}

TEST(Gradients, GraphOps) {
  const std::size_t n = 5, b = 2;
  Rng grng(21);
  const auto g = testing::random_graph(n, grng);
  const auto mask = edge_mask(g);
  expect_gradients("pairwise_sum", [&](Tape&, const auto& v) { return pairwise_sum(v[0], v[1], v[2], n); },
                   [&](Rng& r) { return std::vector<Tensor>{rnd({b * n, 1}, r), rnd({b * n, 1}, r), rnd({1}, r)}; });
  expect_gradients("neighbor_softmax", [&](Tape&, const auto& v) { return neighbor_softmax(v[0], mask); },
                   [&](Rng& r) { return std::vector<Tensor>{rnd({b, n, n}, r, -2.0, 2.0)}; });
  expect_gradients("graph_matmul_batched", [&](Tape&, const auto& v) { return graph_matmul(v[0], v[1]); },
                   [&](Rng& r) { return std::vector<Tensor>{rnd({b, n, n}, r), rnd({b * n, 3}, r)}; });
  expect_gradients("graph_matmul_shared", [&](Tape&, const auto& v) { return graph_matmul(v[0], v[1]); },
                   [&](Rng& r) { return std::vector<Tensor>{rnd({n, n}, r), rnd({b * n, 3}, r)}; });
  expect_gradients("scaled_laplacian_of", [&](Tape&, const auto& v) { return scaled_laplacian_of(v[0], 2.0); },
                   [&](Rng& r) { return std::vector<Tensor>{rnd({b, n, n}, r, 0.1, 1.0)}; });
}

TEST(Activations, LeakyReluValues) {
  Tape tape;
  const Var y = leaky_relu(tape.constant(Tensor({3}, std::vector<double>{1.0, -1.0, 0.0})), 0.2);
  EXPECT_EQ(y.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.value()[1], -0.2);
  EXPECT_EQ(y.value()[2], 0.0);
  EXPECT_THROW(leaky_relu(tape.constant(Tensor({1})), 1.5), ArgumentError);
}

TEST(Activations, PreluValuesAndThetaGradient) {
  ParameterSet ps;
  ps.add("theta", Tensor({1}, 0.25));
  Tape tape;
  const Var y = prelu(tape.constant(Tensor({2}, std::vector<double>{2.0, -2.0})), tape.parameter(ps.at("theta")));
  EXPECT_EQ(y.value()[0], 2.0);
  EXPECT_EQ(y.value()[1], -0.5);
  const auto g = tape.backward(sum(y));
  EXPECT_NEAR(g.at("theta")[0], -2.0, 1e-14);
  const double fd = testing::central_difference(
      [&] {
        Tape t;
        return sum(prelu(t.constant(Tensor({1}, -2.0)), t.parameter(ps.at("theta")))).value()[0];
      },
      ps.at("theta").value[0]);
  EXPECT_NEAR(fd, -2.0, 1e-8);
}

TEST(BatchNorm, ConstantColumnNormalizesToZero) {
  Tape tape;
  BNState st(1);
  const Var y = batch_norm(tape.constant(Tensor({4, 1}, 3.0)), st, Mode::kTrain, tape.constant(Tensor({1}, 1.0)),
                           tape.constant(Tensor({1}, 0.0)));
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, PlusMinusOneColumn) {
  Tape tape;
  BNState st(1);
  const Var y = batch_norm(tape.constant(Tensor({2, 1}, std::vector<double>{-1.0, 1.0})), st, Mode::kTrain,
                           tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 0.0)));
  EXPECT_NEAR(y.value()[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(y.value()[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  // running stats: mean 0.9*0 + 0.1*0, var 0.9*1 + 0.1*(unbiased 2)
  EXPECT_NEAR(st.running_mean[0], 0.0, 1e-15);
  EXPECT_NEAR(st.running_var[0], 1.1, 1e-15);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  Rng rng(5);
  Tape tape;
  BNState st(4);
  st.eps = 0.0;
  const Tensor x = rnd({3, 4}, rng);
  const Var y = batch_norm(tape.constant(x), st, Mode::kEval, tape.constant(Tensor({4}, 1.0)),
                           tape.constant(Tensor({4}, 0.0)));
  EXPECT_EQ(y.value(), x);
}

TEST(BatchNorm, TrainModeNeedsTwoRows) {
  Tape tape;
  BNState st(2);
  EXPECT_THROW(batch_norm(tape.constant(Tensor({1, 2})), st, Mode::kTrain, tape.constant(Tensor({2}, 1.0)),
                          tape.constant(Tensor({2}, 0.0))),
               ArgumentError);
}

TEST(Determinism, ForwardIsBitIdentical) {
  auto run = [] {
    Rng rng(99);
    ParameterSet ps;
    ps.add("W", rnd({6, 6}, rng));
    Tape tape;
    Var w = tape.parameter(ps.at("W"));
    return exp(matmul(w, scalar_mul(w, 0.3))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(ParameterSet, DuplicateNameIsArgumentError) {
  ParameterSet ps;
  ps.add("a", Tensor({1}));
  EXPECT_THROW(ps.add("a", Tensor({1})), ArgumentError);
  EXPECT_THROW(ps.at("b"), ArgumentError);
}

}  // namespace
}  // namespace gridgnn
