#pragma once

// Closed-form limits used as oracles: the strong-drive (large delta tau)
// expansions of the driven system and the wrapped-Gaussian terminal
// distribution of equal-strength measurements.

#include <vector>

namespace opq {

struct RabiLimitInputs {
  double delta = 1.0;
  double tau = 1.0;
  double theta_i = 0.0;
  double theta_f = 0.0;

  double delta_tau() const { return delta * tau; }
  /// The expansions assume delta tau >> 1; below 10 callers should warn.
  bool in_asymptotic_regime() const { return delta_tau() >= 10.0; }
};

/// Leading momentum of the drive-following branch, sin^2(theta) / (2 delta tau).
double rabi_p_plus(const RabiLimitInputs& in, double theta);

/// Duration of the E = 0 drive-following path to first order in 1 / (delta tau).
double rabi_time_approx(const RabiLimitInputs& in);

/// Action of the E = 0 drive-following path to leading order.
double rabi_action_A(const RabiLimitInputs& in);

/// Action of a counter-drive traversal, signed so that it is never positive.
/// Throws PoleDivergence when an endpoint lies within 1e-6 of a multiple of pi.
double rabi_action_C(const RabiLimitInputs& in);

/// Density on [0, 2 pi) of theta(T) for equal-strength measurements, a
/// Gaussian of variance T / tau wrapped over windings -n..n.
std::vector<double> wrapped_gaussian(double theta_i, double tau, double T,
                                     const std::vector<double>& theta_grid, int n_windings = 5);

/// Cumulative distribution on [0, 2 pi) of the same law, evaluated at a
/// wrapped angle.
double wrapped_gaussian_cdf(double theta_i, double tau, double T, double theta,
                            int n_windings = 5);

}  // namespace opq
