// Copyright 2026 The STCN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "stcn/ode.hpp"

namespace stcn
{
namespace
{

using Vec = std::vector<double>;

Vec decay(double, const Vec & h)
{
  Vec out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = -h[i];
  return out;
}

SolverConfig fixed(Method m, double step)
{
  SolverConfig c;
  c.method = m;
  c.step_size = step;
  c.force_fixed = true;
  return c;
}

TEST(Integrate, ZeroDynamicsKeepsInitialValue)
{
  auto zero = [](double, const Vec & h) { return Vec(h.size(), 0.0); };
  const Vec h0{1.5, -2.0, 0.25};
  for (auto m : kAllMethods) {
    SolverConfig c;
    c.method = m;
    c.step_size = 0.07;
    const auto sol = integrate(zero, h0, Vec{0.1, 0.5, 1.3}, c);
    ASSERT_EQ(sol.states.size(), 3u) << method_name(m);
    for (const auto & s : sol.states) EXPECT_EQ(s, h0) << method_name(m);
  }
}

TEST(Integrate, EulerSingleStep)
{
  const auto sol = integrate(decay, Vec{1.0}, Vec{0.1}, fixed(Method::Euler, 0.1));
  EXPECT_NEAR(sol.states[0][0], 0.9, 1e-15);
  EXPECT_EQ(sol.stats.accepted, 1u);
}

TEST(Integrate, Rk4MatchesExponential)
{
  const auto sol = integrate(decay, Vec{1.0}, Vec{1.0}, fixed(Method::Rk4, 0.1));
  EXPECT_NEAR(sol.states[0][0], std::exp(-1.0), 1e-6);
  EXPECT_EQ(sol.stats.evaluations, 40u);
}

TEST(Integrate, FixedStepLandsOnIrregularTimes)
{
  const Vec times{0.03, 0.1, 0.35, 0.99};
  for (auto m : {Method::Euler, Method::Rk4, Method::AdamsExplicit, Method::AdamsImplicit}) {
    const auto sol = integrate(decay, Vec{1.0}, times, fixed(m, 0.01));
    const double tol = m == Method::Euler ? 5e-3 : 1e-8;
    for (std::size_t i = 0; i < times.size(); ++i) {
      EXPECT_NEAR(sol.states[i][0], std::exp(-times[i]), tol) << method_name(m) << " t=" << times[i];
    }
  }
}

TEST(Integrate, InitialTimeReturnsInitialValue)
{
  for (auto m : {Method::Rk4, Method::Dopri5}) {
    SolverConfig c;
    c.method = m;
    const auto sol = integrate(decay, Vec{2.0}, Vec{0.0, 0.5}, c);
    EXPECT_EQ(sol.states[0][0], 2.0);
    EXPECT_NEAR(sol.states[1][0], 2.0 * std::exp(-0.5), 1e-3);
  }
}

TEST(Integrate, RejectsBadTimes)
{
  SolverConfig c;
  EXPECT_THROW(integrate(decay, Vec{1.0}, Vec{0.5, 0.5}, c), std::invalid_argument);
  EXPECT_THROW(integrate(decay, Vec{1.0}, Vec{0.5, 0.2}, c), std::invalid_argument);
  EXPECT_THROW(integrate(decay, Vec{1.0}, Vec{-0.1, 0.2}, c), std::invalid_argument);
  c.method = Method::Rk4;
  c.step_size = 0.0;
  EXPECT_THROW(integrate(decay, Vec{1.0}, Vec{0.5}, c), std::invalid_argument);
  c.method = Method::Dopri5;
  c.rtol = 0.0;
  EXPECT_THROW(integrate(decay, Vec{1.0}, Vec{0.5}, c), std::invalid_argument);
}

TEST(Integrate, NonFiniteStateIsAnError)
{
  auto bad = [](double t, const Vec & h) { return Vec{t > 0.2 ? std::nan("") : -h[0]}; };
  for (auto m : kAllMethods) {
    SolverConfig c;
    c.method = m;
    c.step_size = 0.05;
    EXPECT_THROW(integrate(bad, Vec{1.0}, Vec{1.0}, c), NumericalError) << method_name(m);
  }
}

TEST(Integrate, StepBudget)
{
  SolverConfig c;
  c.method = Method::Dopri5;
  c.rtol = 1e-12;
  c.atol = 1e-12;
  c.max_steps = 5;
  auto fast = [](double t, const Vec & h) { return Vec{std::cos(50.0 * t) * 50.0 - h[0]}; };
  try {
    integrate(fast, Vec{1.0}, Vec{10.0}, c);
    FAIL() << "expected budget error";
  } catch (const StepBudgetError & e) {
    EXPECT_NE(std::string(e.what()).find("stiffness/step budget"), std::string::npos);
  }
}

TEST(Order, MatchesNominalOrders)
{
  struct Case { Method m; double expect, tol; };
  for (const auto & [m, expect, tol] : {
         Case{Method::Euler, 1.0, 0.15}, Case{Method::Fehlberg2, 2.0, 0.3},
         Case{Method::Bosh3, 3.0, 0.3}, Case{Method::Rk4, 4.0, 0.3},
         Case{Method::AdamsExplicit, 4.0, 0.3}, Case{Method::AdamsImplicit, 4.0, 0.3}}) {
    const auto fit = convergence_order(m);
    EXPECT_NEAR(fit.slope, expect, tol) << method_name(m);
  }
}

TEST(Order, DopriPropagatesFifthOrderSolution)
{
  EXPECT_NEAR(convergence_order(Method::Dopri5).slope, 5.0, 0.4);
}

TEST(Order, ErrorDecreasesAsStepHalves)
{
  for (auto m : kAllMethods) {
    const auto fit = convergence_order(m, {0.2, 0.1, 0.05, 0.025}, 1.0);
    for (std::size_t i = 1; i < fit.errors.size(); ++i) {
      EXPECT_LT(fit.errors[i], fit.errors[i - 1]) << method_name(m) << " step " << fit.steps[i];
    }
  }
}

TEST(Adaptive, ToleranceContract)
{
  for (auto m : {Method::Dopri5, Method::Bosh3, Method::Fehlberg2}) {
    for (double rtol : {1e-3, 1e-6}) {
      SolverConfig c;
      c.method = m;
      c.rtol = rtol;
      c.atol = rtol * 1e-3;
      c.max_steps = 100000;
      Vec times;
      for (int i = 1; i <= 20; ++i) times.push_back(0.05 * i);
      const auto sol = integrate(decay, Vec{1.0}, times, c);
      for (std::size_t i = 0; i < times.size(); ++i) {
        EXPECT_LE(std::abs(sol.states[i][0] - std::exp(-times[i])), 100.0 * rtol)
          << method_name(m) << " rtol=" << rtol << " t=" << times[i];
      }
    }
  }
}

TEST(Adaptive, TighterToleranceTakesMoreSteps)
{
  auto osc = [](double, const Vec & h) { return Vec{h[1], -h[0]}; };
  SolverConfig loose, tight;
  tight.rtol = tight.atol = 1e-9;
  const auto a = integrate(osc, Vec{1.0, 0.0}, Vec{6.0}, loose);
  const auto b = integrate(osc, Vec{1.0, 0.0}, Vec{6.0}, tight);
  EXPECT_GT(b.stats.accepted, a.stats.accepted);
  EXPECT_NEAR(b.states[0][0], std::cos(6.0), 1e-7);
  EXPECT_NEAR(b.states[0][1], -std::sin(6.0), 1e-7);
}

TEST(Dense, DopriContinuousExtensionRowsSumToWeights)
{
  const auto & tb = detail::tableau(Method::Dopri5);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (double p : detail::kDopriDense[i]) s += p;
    EXPECT_NEAR(s, tb.b[i], 1e-14) << "row " << i;
  }
}

TEST(Dense, InterpolantAccuracyBetweenSteps)
{
  // Few large steps, many requested times.
  auto osc = [](double, const Vec & h) { return Vec{h[1], -h[0]}; };
  Vec times;
  for (int i = 1; i <= 200; ++i) times.push_back(0.03 * i);
  for (auto [m, tol] : {std::pair{Method::Dopri5, 5e-6}, {Method::Bosh3, 5e-5}, {Method::Fehlberg2, 5e-4}}) {
    SolverConfig c;
    c.method = m;
    c.rtol = 1e-7;
    c.atol = 1e-9;
    c.max_steps = 100000;
    const auto sol = integrate(osc, Vec{1.0, 0.0}, times, c);
    if (m == Method::Dopri5) {
      EXPECT_LT(sol.stats.accepted, times.size() / 4);
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
      EXPECT_NEAR(sol.states[i][0], std::cos(times[i]), tol) << method_name(m) << " t=" << times[i];
    }
  }
}

TEST(Properties, TimeReversal)
{
  // Backward pass integrates g(t, h) = -f(T - t, h).
  const double T = 1.0;
  auto f = [](double t, const Vec & h) { return Vec{-h[0] + std::sin(3.0 * t), 0.5 * h[0] - h[1]}; };
  auto g = [&](double t, const Vec & h) {
    auto v = f(T - t, h);
    for (auto & x : v) x = -x;
    return v;
  };
  const Vec h0{0.7, -0.3};
  const auto fwd = integrate(f, h0, Vec{T}, fixed(Method::Rk4, 1e-3));
  const auto back = integrate(g, fwd.states[0], Vec{T}, fixed(Method::Rk4, 1e-3));
  EXPECT_NEAR(back.states[0][0], h0[0], 1e-5);
  EXPECT_NEAR(back.states[0][1], h0[1], 1e-5);
}

TEST(Properties, Deterministic)
{
  Rng rng(5);
  DynamicsNet net{{4, 8}};
  ParameterSet p;
  net.init(p, rng, 1.0);
  auto run = [&] {
    Graph g;
    Binder b(g, p);
    const Var h0 = g.constant(Tensor::matrix(1, 4, {0.1, 0.2, -0.3, 0.4}));
    SolverConfig c;
    return latent_trajectory(net, b, h0, frame_times(10, 5.0), c).value();
  };
  EXPECT_EQ(run(), run());
}

struct NetFixture : ::testing::Test
{
  void SetUp() override
  {
    Rng rng(11);
    net.init(params, rng, 1.0);
    params.set("h0", normal_tensor({2, 3}, rng, 0.5));
  }

  DynamicsNet net{{3, 5}};
  ParameterSet params;
};

TEST_F(NetFixture, GraphAndValueSolversAgree)
{
  auto values_f = [&](double t, const Vec & h) {
    Graph g;
    Binder b(g, params);
    return net(b, g.constant(Tensor({2, 3}, h)), t).value().values();
  };
  for (auto m : kAllMethods) {
    SolverConfig c;
    c.method = m;
    c.step_size = 0.05;
    const Vec times{0.1, 0.4, 0.45, 1.0};
    const auto ref = integrate(values_f, params.get("h0").values(), times, c);
    Graph g;
    Binder b(g, params);
    const auto traj = latent_trajectory(net, b, b("h0"), times, c).value();
    ASSERT_EQ(traj.shape(), (Shape{4, 2, 3}));
    for (std::size_t k = 0; k < times.size(); ++k) {
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(traj[k * 6 + i], ref.states[k][i], 1e-12) << method_name(m);
      }
    }
  }
}

TEST_F(NetFixture, GradientThroughSolverMatchesFiniteDifferences)
{
  const Tensor w = Tensor::filled({4, 2, 3}, 1.0);
  for (auto m : {Method::Rk4, Method::AdamsImplicit, Method::Euler}) {
    const SolverConfig c = fixed(m, 0.05);
    auto build = [&](Graph & g, Binder & b) {
      auto traj = latent_trajectory(net, b, b("h0"), Vec{0.1, 0.3, 0.6, 0.8}, c);
      return sum(square(traj) * g.constant(w));
    };
    const auto res = check::check_gradients(params, build, 1e-6);
    EXPECT_LT(res.max_rel_error, 1e-6) << method_name(m) << " worst " << res.worst;
  }
}

TEST_F(NetFixture, GradientThroughAdaptiveSolver)
{
  // Step-size control is data-dependent but piecewise constant; a loose
  // tolerance keeps the pattern of steps fixed under small perturbations.
  SolverConfig c;
  c.rtol = 1e-4;
  auto build = [&](Graph &, Binder & b) {
    return sum(square(latent_trajectory(net, b, b("h0"), Vec{0.5, 1.0}, c)));
  };
  const auto res = check::check_gradients(params, build, 1e-7);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST_F(NetFixture, ZeroDynamicsRowsEqualInitialValue)
{
  ParameterSet p = params;
  for (const auto & name : {"dec.ode.w3", "dec.ode.b3"}) {
    for (auto & x : p.get_mutable(name).mutable_data()) x = 0.0;
  }
  Graph g;
  Binder b(g, p);
  const auto traj = latent_trajectory(net, b, b("h0"), frame_times(100, 25.0), SolverConfig{}).value();
  ASSERT_EQ(traj.shape(), (Shape{100, 2, 3}));
  for (std::size_t k = 0; k < 100; ++k) {
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(traj[k * 6 + i], p.get("h0")[i]);
  }
}

TEST_F(NetFixture, DenseOutputIsLipschitzInTime)
{
  Graph g;
  Binder b(g, params);
  const double delta = 1e-3;
  Vec times;
  for (int i = 0; i < 400; ++i) times.push_back(0.01 + delta * i);
  SolverStats stats;
  const auto traj = latent_trajectory(net, b, b("h0"), times, SolverConfig{}, &stats).value();
  ASSERT_GT(stats.max_derivative_norm, 0.0);
  for (std::size_t k = 1; k < times.size(); ++k) {
    double d = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      const double x = traj[k * 6 + i] - traj[(k - 1) * 6 + i];
      d += x * x;
    }
    EXPECT_LE(std::sqrt(d), stats.max_derivative_norm * delta * 1.01) << "k=" << k;
  }
}

TEST(FrameTimes, UniformGrid)
{
  const auto t = frame_times(4, 25.0);
  EXPECT_EQ(t, (Vec{0.04, 0.08, 0.12, 0.16}));
  EXPECT_EQ(frame_times(100, 25.0).size(), 100u);
}

TEST(Methods, NameRoundTrip)
{
  for (auto m : kAllMethods) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("bdf"), std::invalid_argument);
}

}  // namespace
}  // namespace stcn
