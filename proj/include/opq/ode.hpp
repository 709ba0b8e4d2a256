#pragma once

// Adaptive Dormand-Prince 5(4): the stepper and its embedded error estimate
// come from Boost.Odeint, the step size from a PI controller (Hairer, Norsett
// & Wanner, "Solving ODEs I", IV.2). PI control keeps the step sequence, and
// so theta(T; p_i), smooth in p_i, which root polishing near folds needs.
// The driver lands exactly on each requested output time.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include <boost/numeric/odeint/stepper/runge_kutta_dopri5.hpp>

#include "opq/error.hpp"

namespace opq::ode {

struct Options {
  double rtol = 1e-10;
  double atol = 1e-12;
  long max_steps = 50'000'000;
};

/// Integrates y' = f(t, y) from grid.front() through every time in `grid`
/// (strictly increasing) and calls observer(index, t, y) at each of them,
/// including the initial point. Throws Error(StepUnderflow) with the time
/// reached when the controller cannot make progress.
template <std::size_t N, class Rhs, class Observer>
void integrate(Rhs&& f, std::array<double, N> y, std::span<const double> grid, const Options& opt,
               Observer&& observer) {
  using State = std::array<double, N>;
  if (grid.empty()) return;

  double t = grid.front();
  observer(std::size_t{0}, t, y);
  if (grid.size() == 1) return;

  auto sys = [&f](const State& x, State& dxdt, double time) { f(time, x, dxdt); };
  boost::numeric::odeint::runge_kutta_dopri5<State> rk;
  State dydt, ynew, dnew, yerr;
  sys(y, dydt, t);

  const double span_total = grid.back() - grid.front();
  double h;
  {
    // Starting step from the initial slope.
    double ny = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sc = opt.atol + opt.rtol * std::abs(y[i]);
      ny += (y[i] / sc) * (y[i] / sc);
      nf += (dydt[i] / sc) * (dydt[i] / sc);
    }
    ny = std::sqrt(ny / N);
    nf = std::sqrt(nf / N);
    h = (ny < 1e-5 || nf < 1e-5) ? 1e-6 : 0.01 * ny / nf;
    h = std::min(h, 0.1 * span_total);
  }

  constexpr double beta = 0.04;
  constexpr double expo1 = 0.2 - 0.75 * beta;
  constexpr double safety = 0.9;
  double err_old = 1e-4;
  long steps = 0;

  for (std::size_t gi = 1; gi < grid.size(); ++gi) {
    const double t_target = grid[gi];
    bool reject_prev = false;
    while (t < t_target) {
      if (++steps > opt.max_steps) throw Error(ErrorKind::StepUnderflow, "step budget exhausted", t);
      const double h_floor =
          64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t), span_total);
      double hs = h;
      const bool last = t + hs >= t_target || t_target - (t + hs) < h_floor;
      if (last) hs = t_target - t;
      if (hs < h_floor && !last) throw Error(ErrorKind::StepUnderflow, "step size underflow", t);

      rk.do_step(sys, y, dydt, t, ynew, dnew, hs, yerr);
      double err = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
        err += (yerr[i] / sc) * (yerr[i] / sc);
      }
      err = std::sqrt(err / N);
      if (!std::isfinite(err)) {
        h = 0.1 * hs;
        reject_prev = true;
        if (h < h_floor) throw Error(ErrorKind::StepUnderflow, "non-finite derivative", t);
        continue;
      }

      const double fac11 = std::pow(std::max(err, 1e-300), expo1);
      const double fac = std::clamp(fac11 / std::pow(err_old, beta) / safety, 0.2, 10.0);
      if (err <= 1.0) {
        double hnew = hs / fac;
        err_old = std::max(err, 1e-4);
        t = last ? t_target : t + hs;
        y = ynew;
        dydt = dnew;
        if (reject_prev) hnew = std::min(hnew, hs);
        reject_prev = false;
        // A clipped landing step says nothing about the natural step size.
        h = last ? std::max(h, hnew) : hnew;
      } else {
        h = hs / std::min(10.0, fac11 / safety);
        reject_prev = true;
        if (h < h_floor) throw Error(ErrorKind::StepUnderflow, "step size underflow", t);
      }
    }
    observer(gi, t, y);
  }
}

}  // namespace opq::ode
