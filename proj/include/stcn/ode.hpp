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

#ifndef STCN__ODE_HPP_
#define STCN__ODE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stcn/graph.hpp"
#include "stcn/parameters.hpp"
#include "stcn/random.hpp"

namespace stcn
{

/**
 * @file ode.hpp
 * @brief Explicit ODE integrators for dh/dt = f(h, t).
 *
 * Fixed-step methods subdivide every interval between requested times into
 * equal steps no longer than the configured step, so they land on the
 * requested times exactly. Adaptive methods control a mixed
 * absolute/relative RMS error and produce requested times by dense output
 * (the Dormand-Prince quartic interpolant for Dopri5, cubic Hermite for the
 * lower-order pairs).
 *
 * The integrators are generic over the state type through StateAlgebra, so
 * the same code runs on plain vectors and on graph variables; in the latter
 * case the whole solve is recorded and can be differentiated step by step.
 */

enum class Method { Euler, Rk4, AdamsExplicit, AdamsImplicit, Fehlberg2, Bosh3, Dopri5 };

inline constexpr std::array<Method, 7> kAllMethods = {
  Method::Euler,     Method::Rk4,   Method::AdamsExplicit, Method::AdamsImplicit,
  Method::Fehlberg2, Method::Bosh3, Method::Dopri5};

inline std::string method_name(Method m)
{
  switch (m) {
    case Method::Euler: return "euler";
    case Method::Rk4: return "rk4";
    case Method::AdamsExplicit: return "adams_explicit";
    case Method::AdamsImplicit: return "adams_implicit";
    case Method::Fehlberg2: return "fehlberg2";
    case Method::Bosh3: return "bosh3";
    case Method::Dopri5: return "dopri5";
  }
  return "?";
}

inline Method parse_method(const std::string & s)
{
  for (auto m : kAllMethods) {
    if (method_name(m) == s) return m;
  }
  throw std::invalid_argument("unknown ODE method '" + s + "'");
}

/// Nominal order of the propagated solution (Dopri5 is listed by its embedded order 4).
inline int method_order(Method m)
{
  switch (m) {
    case Method::Euler: return 1;
    case Method::Rk4: return 4;
    case Method::AdamsExplicit: return 4;
    case Method::AdamsImplicit: return 4;
    case Method::Fehlberg2: return 2;
    case Method::Bosh3: return 3;
    case Method::Dopri5: return 4;
  }
  return 0;
}

inline bool is_adaptive(Method m)
{
  return m == Method::Fehlberg2 || m == Method::Bosh3 || m == Method::Dopri5;
}

struct SolverConfig
{
  Method method = Method::Dopri5;
  double step_size = 0.05;       // fixed-step methods
  double rtol = 1e-3;             // adaptive methods
  double atol = 1e-6;
  std::size_t max_steps = 10000;
  bool force_fixed = false;       // run an adaptive tableau at fixed steps

  bool adaptive() const { return is_adaptive(method) && !force_fixed; }

  void validate() const
  {
    if (!adaptive() && !(step_size > 0.0)) throw std::invalid_argument("step_size must be > 0");
    if (adaptive() && !(rtol > 0.0 && atol > 0.0)) {
      throw std::invalid_argument("rtol and atol must be > 0");
    }
  }
};

class StepBudgetError : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

struct SolverStats
{
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
  double max_derivative_norm = 0.0;  // sup ||f(h, t)|| over all evaluations
};

template <class S>
struct Solution
{
  std::vector<S> states;
  SolverStats stats;
};

template <class S>
struct StateAlgebra;

template <>
struct StateAlgebra<std::vector<double>>
{
  using S = std::vector<double>;

  static S lincomb(const std::vector<const S *> & parts, const std::vector<double> & coeffs)
  {
    S out(parts.front()->size(), 0.0);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (coeffs[p] == 0.0) continue;
      const S & x = *parts[p];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[p] * x[i];
    }
    return out;
  }

  static std::span<const double> values(const S & s) { return s; }
};

template <>
struct StateAlgebra<Var>
{
  static Var lincomb(const std::vector<const Var *> & parts, const std::vector<double> & coeffs)
  {
    std::vector<Var> vs;
    std::vector<double> cs;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (coeffs[i] == 0.0 && i != 0) continue;
      vs.push_back(*parts[i]);
      cs.push_back(coeffs[i]);
    }
    return stcn::lincomb(vs, std::move(cs));
  }

  static std::span<const double> values(const Var & v) { return v.value().data(); }
};

namespace detail
{

struct Tableau
{
  std::vector<double> c;
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  std::vector<double> b_low;  // embedded lower-order weights (empty: none)
  int error_order = 0;        // order of the embedded estimate
  bool fsal = false;
};

inline const Tableau & tableau(Method m)
{
  static const Tableau euler{{0.0}, {{}}, {1.0}, {}, 0, false};
  static const Tableau rk4{
    {0.0, 0.5, 0.5, 1.0},
    {{}, {0.5}, {0.0, 0.5}, {0.0, 0.0, 1.0}},
    {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6},
    {},
    0,
    false};
  static const Tableau fehlberg2{
    {0.0, 0.5, 1.0},
    {{}, {0.5}, {1.0 / 256, 255.0 / 256}},
    {1.0 / 512, 255.0 / 256, 1.0 / 512},
    {1.0 / 256, 255.0 / 256, 0.0},
    1,
    false};
  static const Tableau bosh3{
    {0.0, 0.5, 0.75, 1.0},
    {{}, {0.5}, {0.0, 0.75}, {2.0 / 9, 1.0 / 3, 4.0 / 9}},
    {2.0 / 9, 1.0 / 3, 4.0 / 9, 0.0},
    {7.0 / 24, 1.0 / 4, 1.0 / 3, 1.0 / 8},
    2,
    true};
  static const Tableau dopri5{
    {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0},
    {{},
     {1.0 / 5},
     {3.0 / 40, 9.0 / 40},
     {44.0 / 45, -56.0 / 15, 32.0 / 9},
     {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
     {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
     {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0},
    {5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200, 187.0 / 2100,
     1.0 / 40},
    4,
    true};
  switch (m) {
    case Method::Euler: return euler;
    case Method::Rk4: return rk4;
    case Method::Fehlberg2: return fehlberg2;
    case Method::Bosh3: return bosh3;
    case Method::Dopri5: return dopri5;
    default: return rk4;
  }
}

// Dopri5 continuous extension: y(t + th*h) = y0 + h * sum_i k_i * sum_j P[i][j] th^(j+1).
inline constexpr double kDopriDense[7][4] = {
  {1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432},
  {0.0, 0.0, 0.0, 0.0},
  {0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933,
   87487479700.0 / 32700410799},
  {0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072},
  {0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408,
   701980252875.0 / 199316789632},
  {0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
  {0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423}};

inline double rms_scaled(
  std::span<const double> err, std::span<const double> y0, std::span<const double> y1,
  double rtol, double atol)
{
  double s = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    s += (err[i] / sc) * (err[i] / sc);
  }
  return std::sqrt(s / static_cast<double>(std::max<std::size_t>(err.size(), 1)));
}

template <class S, class F>
class Integrator
{
  using A = StateAlgebra<S>;

public:
  Integrator(F & f, const SolverConfig & cfg) : f_(f), cfg_(cfg) {}

  Solution<S> run(const S & h0, std::span<const double> times)
  {
    cfg_.validate();
    if (times.empty()) return {};
    if (times.front() < 0.0) throw std::invalid_argument("times must start at or after t0 = 0");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) throw std::invalid_argument("times must be strictly ascending");
    }
    check_finite(h0);
    Solution<S> sol;
    sol.states.reserve(times.size());
    if (cfg_.adaptive()) {
      run_adaptive(h0, times, sol);
    } else {
      run_fixed(h0, times, sol);
    }
    sol.stats = stats_;
    return sol;
  }

private:
  S eval(double t, const S & h)
  {
    S k = f_(t, h);
    ++stats_.evaluations;
    const auto v = A::values(k);
    double n = 0.0;
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericalError("non-finite derivative at t = " + std::to_string(t));
      n += x * x;
    }
    stats_.max_derivative_norm = std::max(stats_.max_derivative_norm, std::sqrt(n));
    return k;
  }

  void check_finite(const S & h) const
  {
    for (double x : A::values(h)) {
      if (!std::isfinite(x)) throw NumericalError("non-finite ODE state");
    }
  }

  S comb(const S & base, double scale, const std::vector<S> & ks, const std::vector<double> & w)
  {
    std::vector<const S *> parts{&base};
    std::vector<double> coeffs{1.0};
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) continue;
      parts.push_back(&ks[i]);
      coeffs.push_back(scale * w[i]);
    }
    if (parts.size() == 1) return base;
    return A::lincomb(parts, coeffs);
  }

  struct Step
  {
    S y;
    std::vector<S> k;
  };

  // One explicit Runge-Kutta step; k0 is f(t, y) when already known.
  Step rk_step(const Tableau & tb, double t, const S & y, double h, const std::optional<S> & k0)
  {
    Step st{y, {}};
    const std::size_t stages = tb.c.size();
    st.k.reserve(stages);
    for (std::size_t i = 0; i < stages; ++i) {
      if (i == 0) {
        st.k.push_back(k0 ? *k0 : eval(t, y));
        continue;
      }
      if (tb.fsal && i == stages - 1) {
        st.y = comb(y, h, st.k, tb.b);
        st.k.push_back(eval(t + h, st.y));
        return st;
      }
      const S yi = comb(y, h, st.k, tb.a[i]);
      st.k.push_back(eval(t + tb.c[i] * h, yi));
    }
    st.y = comb(y, h, st.k, tb.b);
    return st;
  }

  void run_fixed(const S & h0, std::span<const double> times, Solution<S> & sol)
  {
    double t = 0.0;
    S y = h0;
    std::vector<S> history;  // f at previous uniform steps, newest last
    double history_h = 0.0;

    for (double target : times) {
      const double span = target - t;
      if (span <= 0.0) {
        sol.states.push_back(y);
        continue;
      }
      const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(span / cfg_.step_size - 1e-9)));
      const double h = span / static_cast<double>(n);
      for (std::size_t s = 0; s < n; ++s) {
        y = fixed_step(t, y, h, history, history_h);
        t = (s + 1 == n) ? target : t + h;
        check_finite(y);
        ++stats_.accepted;
      }
      sol.states.push_back(y);
    }
  }

  S fixed_step(double t, const S & y, double h, std::vector<S> & hist, double & hist_h)
  {
    const Method m = cfg_.method;
    if (m != Method::AdamsExplicit && m != Method::AdamsImplicit) {
      return rk_step(tableau(m), t, y, h, std::nullopt).y;
    }
    if (hist.empty() || std::abs(h - hist_h) > 1e-12 * std::abs(h)) {
      hist.clear();
      hist_h = h;
    }
    S fn = eval(t, y);
    if (hist.size() < 3) {
      // Fifth-order Runge-Kutta start until four derivative values are available.
      Step st = rk_step(tableau(Method::Dopri5), t, y, h, fn);
      hist.push_back(std::move(fn));
      return st.y;
    }
    // hist holds f_{n-3}, f_{n-2}, f_{n-1}
    std::vector<const S *> parts{&y, &fn, &hist[2], &hist[1], &hist[0]};
    const double c = h / 24.0;
    S pred = A::lincomb(parts, {1.0, 55.0 * c, -59.0 * c, 37.0 * c, -9.0 * c});
    S out = pred;
    if (m == Method::AdamsImplicit) {
      for (int it = 0; it < 2; ++it) {
        S fp = eval(t + h, out);
        std::vector<const S *> cp{&y, &fp, &fn, &hist[2], &hist[1]};
        out = A::lincomb(cp, {1.0, 9.0 * c, 19.0 * c, -5.0 * c, 1.0 * c});
      }
    }
    hist.erase(hist.begin());
    hist.push_back(std::move(fn));
    return out;
  }

  double initial_step(double t0, const S & y0, const S & f0, int order)
  {
    const auto y = A::values(y0);
    const auto f = A::values(f0);
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double sc = cfg_.atol + std::abs(y[i]) * cfg_.rtol;
      d0 += (y[i] / sc) * (y[i] / sc);
      d1 += (f[i] / sc) * (f[i] / sc);
    }
    const double nn = static_cast<double>(std::max<std::size_t>(y.size(), 1));
    d0 = std::sqrt(d0 / nn);
    d1 = std::sqrt(d1 / nn);
    const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    std::vector<double> y1(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) y1[i] = y[i] + h0 * f[i];
    // Probe from a constant so the probe carries no gradient path.
    const std::vector<double> f1 = probe(t0 + h0, y1, y0);
    double d2 = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double sc = cfg_.atol + std::abs(y[i]) * cfg_.rtol;
      d2 += ((f1[i] - f[i]) / sc) * ((f1[i] - f[i]) / sc);
    }
    d2 = std::sqrt(d2 / nn) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / (order + 1));
    return std::min(100.0 * h0, h1);
  }

  std::vector<double> probe(double t, const std::vector<double> & y, const S & like)
  {
    if constexpr (std::is_same_v<S, std::vector<double>>) {
      (void)like;
      const S k = f_(t, y);
      ++stats_.evaluations;
      return k;
    } else {
      const Var v = like.graph()->constant(Tensor(like.shape(), y));
      ++stats_.evaluations;
      return f_(t, v).value().values();
    }
  }

  S dense(const Tableau & tb, Method m, const S & y0, const S & y1, const Step & st, double h, double theta)
  {
    if (m == Method::Dopri5) {
      std::vector<double> w(7);
      for (std::size_t i = 0; i < 7; ++i) {
        double th = theta, s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          s += kDopriDense[i][j] * th;
          th *= theta;
        }
        w[i] = s;
      }
      return comb(y0, h, st.k, w);
    }
    // Cubic Hermite on (y0, f0, y1, f1).
    (void)tb;
    const double t2 = theta * theta, t3 = t2 * theta;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + theta;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    std::vector<const S *> parts{&y0, &st.k.front(), &y1, &st.k.back()};
    return A::lincomb(parts, {h00, h10 * h, h01, h11 * h});
  }

  void run_adaptive(const S & h0, std::span<const double> times, Solution<S> & sol)
  {
    const Method m = cfg_.method;
    const Tableau & tb = tableau(m);
    const double t_end = times.back();
    double t = 0.0;
    S y = h0;
    S fy = eval(t, y);
    std::size_t next = 0;
    while (next < times.size() && times[next] <= t) {
      sol.states.push_back(y);
      ++next;
    }
    double h = initial_step(t, y, fy, tb.error_order + 1);
    std::size_t attempts = 0;
    const double exponent = -1.0 / (tb.error_order + 1);

    while (next < times.size()) {
      if (++attempts > cfg_.max_steps) {
        throw StepBudgetError(
          "stiffness/step budget: exceeded " + std::to_string(cfg_.max_steps) + " steps at t = " +
          std::to_string(t));
      }
      const bool last = t + h >= t_end - 1e-12 * std::max(1.0, std::abs(t_end));
      if (last) h = t_end - t;
      Step st = rk_step(tb, t, y, h, fy);
      if (!tb.fsal) st.k.push_back(eval(t + h, st.y));  // f at the new point for Hermite/next step

      std::vector<double> err(A::values(y).size(), 0.0);
      for (std::size_t i = 0; i < tb.b.size(); ++i) {
        const double w = h * (tb.b[i] - tb.b_low[i]);
        if (w == 0.0) continue;
        const auto k = A::values(st.k[i]);
        for (std::size_t j = 0; j < err.size(); ++j) err[j] += w * k[j];
      }
      const double e = rms_scaled(err, A::values(y), A::values(st.y), cfg_.rtol, cfg_.atol);
      if (!std::isfinite(e)) throw NumericalError("non-finite error estimate at t = " + std::to_string(t));
      const double factor = e == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(e, exponent), 0.2, 10.0);
      if (e > 1.0) {
        ++stats_.rejected;
        h *= std::min(factor, 1.0);
        continue;
      }
      ++stats_.accepted;
      check_finite(st.y);
      const double t_new = last ? t_end : t + h;
      while (next < times.size() && times[next] <= t_new) {
        if (times[next] == t_new) {
          sol.states.push_back(st.y);
        } else {
          sol.states.push_back(dense(tb, m, y, st.y, st, h, (times[next] - t) / h));
        }
        ++next;
      }
      t = t_new;
      y = st.y;
      fy = st.k.back();
      h *= factor;
    }
  }

  F & f_;
  SolverConfig cfg_;
  SolverStats stats_;
};

}  // namespace detail

/**
 * Integrate dh/dt = f(t, h) from t0 = 0 with initial value h0 and return the
 * state at every requested time.
 */
template <class S, class F>
Solution<S> integrate(F && f, const S & h0, std::span<const double> times, const SolverConfig & cfg)
{
  detail::Integrator<S, std::remove_reference_t<F>> integ(f, cfg);
  return integ.run(h0, times);
}

template <class F>
Solution<std::vector<double>> integrate(
  F && f, const std::vector<double> & h0, const std::vector<double> & times, const SolverConfig & cfg)
{
  return integrate<std::vector<double>>(f, h0, std::span<const double>(times), cfg);
}

// ---------------------------------------------------------------------------
// Empirical order of convergence.

struct OrderFit
{
  Method method;
  std::vector<double> steps;
  std::vector<double> errors;
  double slope = 0.0;
};

/**
 * Least-squares slope of log(relative global error at t = horizon) against
 * log(step) on dh/dt = -h, h(0) = 1.
 *
 * The default horizon leaves each multistep method well past its start-up
 * steps at the coarsest step; on [0, 1] a step of 0.2 gives only two Adams
 * steps and the fit is dominated by the start-up transient.
 */
inline OrderFit convergence_order(
  Method method, std::vector<double> steps = {0.2, 0.1, 0.05, 0.025}, double horizon = 4.0)
{
  OrderFit fit{method, steps, {}, 0.0};
  auto f = [](double, const std::vector<double> & h) { return std::vector<double>{-h[0]}; };
  for (double s : steps) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.step_size = s;
    cfg.force_fixed = true;
    const auto sol = integrate(f, std::vector<double>{1.0}, std::vector<double>{horizon}, cfg);
    const double exact = std::exp(-horizon);
    fit.errors.push_back(std::abs(sol.states.back()[0] - exact) / exact);
  }
  double mx = 0, my = 0;
  const double n = static_cast<double>(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    mx += std::log(steps[i]) / n;
    my += std::log(fit.errors[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double dx = std::log(steps[i]) - mx;
    sxy += dx * (std::log(fit.errors[i]) - my);
    sxx += dx * dx;
  }
  fit.slope = sxy / sxx;
  return fit;
}

// ---------------------------------------------------------------------------
// Learned dynamics.

struct DynamicsConfig
{
  std::size_t latent_dim = 32;
  std::size_t hidden = 64;
};

/**
 * @brief f_theta(h, t): two tanh hidden layers with time appended to the input.
 *
 * Appending t to the input is realized as a per-unit time weight added to the
 * first-layer bias, which is the same affine map.
 */
struct DynamicsNet
{
  DynamicsConfig config;
  std::string prefix = "dec.ode.";

  void init(ParameterSet & params, Rng & rng, double out_scale = 0.1) const
  {
    const auto d = config.latent_dim, hd = config.hidden;
    params.set(prefix + "w1", normal_tensor({d, hd}, rng, 1.0 / std::sqrt(double(d + 1))));
    params.set(prefix + "wt", normal_tensor({hd}, rng, 1.0 / std::sqrt(double(d + 1))));
    params.set(prefix + "b1", Tensor({hd}));
    params.set(prefix + "w2", normal_tensor({hd, hd}, rng, 1.0 / std::sqrt(double(hd))));
    params.set(prefix + "b2", Tensor({hd}));
    params.set(prefix + "w3", normal_tensor({hd, d}, rng, out_scale / std::sqrt(double(hd))));
    params.set(prefix + "b3", Tensor({d}));
  }

  /// h: [rows x latent_dim]
  Var operator()(Binder & b, const Var & h, double t) const
  {
    auto bias1 = lincomb({b(prefix + "b1"), b(prefix + "wt")}, {1.0, t});
    auto a1 = tanh(matmul(h, b(prefix + "w1")) + bias1);
    auto a2 = tanh(matmul(a1, b(prefix + "w2")) + b(prefix + "b2"));
    return matmul(a2, b(prefix + "w3")) + b(prefix + "b3");
  }
};

/// Uniform frame timestamps t_k = k / frame_rate, k = 1..count.
inline std::vector<double> frame_times(std::size_t count, double frame_rate)
{
  std::vector<double> t(count);
  for (std::size_t k = 0; k < count; ++k) t[k] = static_cast<double>(k + 1) / frame_rate;
  return t;
}

/**
 * Latent trajectory h(t_1..t_H) for a batch of initial values h0 [rows x d],
 * recorded in h0's graph. Returns [H x rows x d].
 */
inline Var latent_trajectory(
  const DynamicsNet & net, Binder & b, const Var & h0, std::span<const double> times,
  const SolverConfig & cfg, SolverStats * stats = nullptr)
{
  auto f = [&](double t, const Var & h) { return net(b, h, t); };
  auto sol = integrate<Var>(f, h0, times, cfg);
  if (stats) *stats = sol.stats;
  return stack(sol.states);
}

}  // namespace stcn

#endif  // STCN__ODE_HPP_
