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
#include <complex>

#include <gtest/gtest.h>

#include "gridgnn/normalizer.hpp"
#include "gridgnn/physics.hpp"
#include "support.hpp"

namespace gridgnn {
namespace {

TEST(KirchhoffResidual, ConsistentFlowIsZero) {
  EXPECT_EQ(kirchhoff_residual({1, 0, 1, 0, 1, 0}), 0.0);
  // S = V conj(I) = 1 * conj(-i) = i
  EXPECT_EQ(kirchhoff_residual({0, 1, 1, 0, 0, -1}), 0.0);
}

TEST(KirchhoffResidual, PowerMismatch) {
  EXPECT_NEAR(kirchhoff_residual({0.9, 0, 1, 0, 1, 0}), 0.01, 1e-15);
}

TEST(KirchhoffResidual, MatchesComplexArithmetic) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(6);
    for (double& v : s) v = rng.uniform(-2, 2);
    const std::complex<double> v(s[2], s[3]), i(s[4], s[5]), p(s[0], s[1]);
    EXPECT_NEAR(kirchhoff_residual(s), std::norm(p - v * std::conj(i)), 1e-12);
  }
}

TEST(KirchhoffResidual, InvariantUnderCommonPhaseRotation) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(6);
    for (double& v : s) v = rng.uniform(-2, 2);
    const std::complex<double> rot = std::polar(1.0, rng.uniform(-M_PI, M_PI));
    const std::complex<double> v = std::complex<double>(s[2], s[3]) * rot, i = std::complex<double>(s[4], s[5]) * rot;
    std::vector<double> r = {s[0], s[1], v.real(), v.imag(), i.real(), i.imag()};
    EXPECT_NEAR(kirchhoff_residual(s), kirchhoff_residual(r), 1e-12);
  }
}

TEST(KirchhoffResidual, WrongSizeThrows) { EXPECT_THROW(kirchhoff_residual(std::vector<double>{1, 2}), ArgumentError); }

TEST(PredictionLoss, Examples) {
  Tensor a({1, 6}, 0.0), b({1, 6}, 1.0);
  EXPECT_EQ(prediction_loss({a}, {a}), 0.0);
  EXPECT_DOUBLE_EQ(prediction_loss({a}, {b}), 6.0);
  Tensor c({1, 6}, 2.0);
  EXPECT_DOUBLE_EQ(prediction_loss({a}, {c}), 4.0 * prediction_loss({a}, {b}));
}

TEST(PredictionLoss, MismatchThrows) {
  EXPECT_THROW(prediction_loss({Tensor({1, 6})}, {}), ArgumentError);
  EXPECT_THROW(prediction_loss({Tensor({1, 6})}, {Tensor({2, 6})}), ArgumentError);
}

TEST(PredictionLoss, NonNegativeZeroIffEqual) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Tensor a = testing::random_tensor({3, 6}, rng), b = testing::random_tensor({3, 6}, rng);
    EXPECT_GT(prediction_loss({a}, {b}), 0.0);
    EXPECT_EQ(prediction_loss({a, b}, {a, b}), 0.0);
  }
}

TEST(KirchhoffLoss, SumsResiduals) {
  Tensor consistent = Tensor::matrix(1, 6, {1, 0, 1, 0, 1, 0});
  EXPECT_EQ(kirchhoff_loss({consistent}), 0.0);
  Tensor off = Tensor::matrix(2, 6, {0.9, 0, 1, 0, 1, 0, 0.9, 0, 1, 0, 1, 0});
  EXPECT_NEAR(kirchhoff_loss({off}), 0.02, 1e-15);
  EXPECT_NEAR(kirchhoff_loss({off, off}), 0.04, 1e-15);
}

TEST(KirchhoffLoss, TapeOpMatchesValueAndGradient) {
  Rng rng(6);
  Tensor s = testing::random_tensor({4, 6}, rng);
  Tape tape;
  Parameter p{"s", s};
  Var v = tape.parameter(p);
  Var l = kirchhoff_loss(v);
  EXPECT_NEAR(l.value()[0], kirchhoff_loss(std::vector<Tensor>{s}), 1e-14);
  const auto grads = tape.backward(l);
  const Tensor& g = grads.at("s");
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto f = [&] { return kirchhoff_loss(std::vector<Tensor>{s}); };
    EXPECT_NEAR(g[i], testing::central_difference(f, s.data()[i]), 1e-7);
  }
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(1, 2, 1).total, 3.0);
  EXPECT_EQ(total_loss(0.7, 123.0, 0.0).total, 0.7);
  EXPECT_EQ(total_loss(0, 0, 1).total, 0.0);
  EXPECT_THROW(total_loss(1, 1, -1), ArgumentError);
  EXPECT_THROW(total_loss(NAN, 1, 1), NumericalError);
}

TEST(IntegrateState, Examples) {
  Tensor x({2, 6}, 1.0), zero({2, 6}, 0.0), two({2, 6}, 2.0);
  const Tensor same = integrate_state(x, zero, 1e-3);
  for (double v : same.values()) EXPECT_EQ(v, 1.0);
  const Tensor y = integrate_state(x, two, 0.001);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.002);
  EXPECT_THROW(integrate_state(x, two, 0.0), ArgumentError);
  EXPECT_THROW(integrate_state(x, Tensor({1, 6}), 1e-3), ArgumentError);
}

Normalizer example_normalizer() {
  std::vector<double> smin(10), smax(10), rmin(6), rmax(6);
  for (int f = 0; f < 10; ++f) {
    smin[f] = -1.0 - f;
    smax[f] = 2.0 + f;
  }
  smax[9] = smin[9];  // constant feature
  for (int f = 0; f < 6; ++f) {
    rmin[f] = -10.0 * (f + 1);
    rmax[f] = 5.0 * (f + 1);
  }
  return Normalizer(smin, smax, rmin, rmax);
}

TEST(Normalizer, MinMapsToZeroMaxToOne) {
  const Normalizer n = example_normalizer();
  for (std::size_t f = 0; f < 9; ++f) {
    EXPECT_EQ(n.apply_state(f, n.state_min()[f]), 0.0);
    EXPECT_EQ(n.apply_state(f, n.state_max()[f]), 1.0);
  }
  for (std::size_t f = 0; f < 6; ++f) {
    EXPECT_EQ(n.apply_rate(f, n.rate_min()[f]), 0.0);
    EXPECT_EQ(n.apply_rate(f, n.rate_max()[f]), 1.0);
  }
}

TEST(Normalizer, ConstantFeatureMapsToHalf) {
  const Normalizer n = example_normalizer();
  EXPECT_EQ(n.apply_state(9, -10.0), 0.5);
  EXPECT_EQ(n.apply_state(9, 3.0), 0.5);
}

TEST(Normalizer, RoundTrip) {
  Rng rng(8);
  const Tensor states = testing::random_tensor({40, 10}, rng, -3, 3);
  const Tensor rates = testing::random_tensor({40, 6}, rng, -50, 50);
  const Normalizer n = Normalizer::fit({&states}, {&rates});
  const Tensor back = n.invert_states(n.apply_states(states));
  const Tensor rback = n.invert_rates(n.apply_rates(rates));
  for (std::size_t i = 0; i < states.size(); ++i) EXPECT_NEAR(back[i], states[i], 1e-12);
  for (std::size_t i = 0; i < rates.size(); ++i) EXPECT_NEAR(rback[i], rates[i], 1e-12);
  const Tensor a = n.apply_states(states);
  for (double v : a.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Normalizer, AffineFormMatchesInvert) {
  const Normalizer n = example_normalizer();
  for (std::size_t f = 0; f < 6; ++f)
    EXPECT_NEAR(n.invert_rate(f, 0.3), n.rate_offset(f) + n.rate_slope(f) * 0.3, 1e-12);
}

TEST(Normalizer, Errors) {
  EXPECT_THROW(Normalizer::fit({}, {}), ArgumentError);
  Tensor wrong({3, 5});
  Tensor rates({3, 6});
  EXPECT_THROW(Normalizer::fit({&wrong}, {&rates}), ArgumentError);
  EXPECT_THROW(example_normalizer().apply_rates(Tensor({2, 10})), ArgumentError);
  EXPECT_THROW(Normalizer(std::vector<double>(10, 1.0), std::vector<double>(10, 0.0), std::vector<double>(6, 0.0),
                          std::vector<double>(6, 1.0)),
               ArgumentError);
}

TEST(Normalizer, JsonRoundTrip) {
  const Normalizer n = example_normalizer();
  const Normalizer m = nlohmann::json(n).get<Normalizer>();
  EXPECT_EQ(m.state_min(), n.state_min());
  EXPECT_EQ(m.rate_max(), n.rate_max());
}

}  // namespace
}  // namespace gridgnn
