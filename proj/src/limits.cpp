#include "opq/limits.hpp"

#include <cmath>

#include "opq/error.hpp"
#include "opq/system.hpp"

namespace opq {

namespace {

void require_positive(double tau, double T) {
  if (!(tau > 0.0) || !(T > 0.0)) {
    throw Error(ErrorKind::InvalidSpec, "wrapped Gaussian needs tau > 0 and T > 0");
  }
}

double near_pole(double theta) {
  return std::abs(theta - kPi * std::round(theta / kPi));
}

}  // namespace

double rabi_p_plus(const RabiLimitInputs& in, double theta) {
  const double s = std::sin(theta);
  return s * s / (2.0 * in.delta_tau());
}

double rabi_time_approx(const RabiLimitInputs& in) {
  const double d = in.delta;
  return (in.theta_f - in.theta_i) / d -
         (std::cos(2.0 * in.theta_f) - std::cos(2.0 * in.theta_i)) / (4.0 * d * d * in.tau);
}

double rabi_action_A(const RabiLimitInputs& in) {
  const double dt = in.delta_tau();
  return -(in.theta_f - in.theta_i) / (4.0 * dt) +
         (std::sin(2.0 * in.theta_f) - std::sin(2.0 * in.theta_i)) / (8.0 * dt);
}

double rabi_action_C(const RabiLimitInputs& in) {
  for (double th : {in.theta_i, in.theta_f}) {
    if (near_pole(th) < 1e-6) {
      throw Error(ErrorKind::PoleDivergence, "counter-drive action diverges at a pole", th);
    }
  }
  const double cot_i = std::cos(in.theta_i) / std::sin(in.theta_i);
  const double cot_f = std::cos(in.theta_f) / std::sin(in.theta_f);
  return -std::abs(2.0 * in.delta_tau() * (cot_i - cot_f));
}

std::vector<double> wrapped_gaussian(double theta_i, double tau, double T,
                                     const std::vector<double>& theta_grid, int n_windings) {
  require_positive(tau, T);
  const double var = T / tau;
  const double norm = 1.0 / std::sqrt(2.0 * kPi * var);
  std::vector<double> out;
  out.reserve(theta_grid.size());
  for (double th : theta_grid) {
    double sum = 0.0;
    for (int n = -n_windings; n <= n_windings; ++n) {
      const double d = th - theta_i + 2.0 * kPi * n;
      sum += std::exp(-d * d / (2.0 * var));
    }
    out.push_back(norm * sum);
  }
  return out;
}

double wrapped_gaussian_cdf(double theta_i, double tau, double T, double theta, int n_windings) {
  require_positive(tau, T);
  const double sigma = std::sqrt(T / tau);
  const double th = wrap_angle(theta);
  const double th0 = wrap_angle(theta_i);
  auto phi = [&](double x) { return 0.5 * std::erfc(-x / (sigma * std::sqrt(2.0))); };
  double sum = 0.0;
  for (int n = -n_windings; n <= n_windings; ++n) {
    const double shift = 2.0 * kPi * n - th0;
    sum += phi(th + shift) - phi(shift);
  }
  return sum;
}

}  // namespace opq
