#pragma once

// Monitored-qubit systems reduced to the great-circle angle theta and its
// conjugate momentum p. Both systems share the stochastic Hamiltonian
//
//   H(theta, p) = (p^2 - 1) a(theta) + p b(theta)
//
// and differ only in the coefficient functions a and b. Times are in
// microseconds, rates (and H) in MHz = rad/us.

#include <array>
#include <numbers>

#include <nlohmann/json_fwd.hpp>

namespace opq {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class SystemKind { TwoObservable, DrivenZ };

/// Physical parameters of one monitored qubit.
///
/// TwoObservable: simultaneous x and z measurement with characteristic
/// times tau_x, tau_z; theta is the polar angle in the xz-plane
/// (x = sin theta, z = cos theta).
///
/// DrivenZ: z measurement with characteristic time tau plus a Rabi drive
/// of angular frequency delta about x; theta is the angle in the yz-plane
/// (y = sin theta, z = cos theta).
struct SystemSpec {
  SystemKind kind = SystemKind::TwoObservable;
  double tau_x = 1.0;
  double tau_z = 1.0;
  double tau = 1.0;
  double delta = 0.0;

  static SystemSpec two_observable(double tau_x, double tau_z);
  static SystemSpec driven_z(double tau, double delta);

  /// Throws Error(InvalidSpec) unless all times are positive and delta >= 0.
  void validate() const;

  /// Shortest characteristic measurement time of the system.
  double min_tau() const;

  bool operator==(const SystemSpec&) const = default;
};

struct PhasePoint {
  double theta = 0.0;  // unwrapped
  double p = 0.0;
};

struct PhaseVelocity {
  double dtheta_dt = 0.0;
  double dp_dt = 0.0;
};

/// Optimal readouts. For DrivenZ only r_z is meaningful and r_x is zero.
struct Readouts {
  double r_x = 0.0;
  double r_z = 0.0;
};

struct BlochState {
  double x = 0.0;
  double y = 0.0;
  double z = 1.0;

  double norm2() const { return x * x + y * y + z * z; }
};

struct BlochVelocity {
  double dx_dt = 0.0;
  double dy_dt = 0.0;
  double dz_dt = 0.0;
};

/// a, b and their first two theta derivatives at one angle.
struct Coefficients {
  double a = 0.0, da = 0.0, d2a = 0.0;
  double b = 0.0, db = 0.0, d2b = 0.0;
};

Coefficients coefficients(const SystemSpec& spec, double theta);

double coeff_a(const SystemSpec& spec, double theta);
double coeff_b(const SystemSpec& spec, double theta);

double hamiltonian(const SystemSpec& spec, PhasePoint point);

/// Hamilton's equations with analytic coefficient derivatives:
/// theta' = 2 p a + b,  p' = -(p^2 - 1) a' - p b'.
PhaseVelocity hamilton_rhs(const SystemSpec& spec, PhasePoint point);

/// Action rate along an optimal path, -(1 + p^2) a(theta) <= 0.
double sdot(const SystemSpec& spec, PhasePoint point);

/// Readouts that make the un-reduced Hamiltonian stationary in r.
Readouts optimal_readouts(const SystemSpec& spec, PhasePoint point);

/// Un-reduced Hamiltonian p * F(theta, r) + G(theta, r) before the readouts
/// are optimized out. Equals hamiltonian() when given optimal_readouts().
double raw_hamiltonian(const SystemSpec& spec, PhasePoint point, Readouts readouts);

/// Gradient of raw_hamiltonian with respect to (r_x, r_z).
std::array<double, 2> raw_hamiltonian_readout_gradient(const SystemSpec& spec,
                                                       PhasePoint point,
                                                       Readouts readouts);

/// Bayesian (Stratonovich-form) Bloch equations driven by given readouts.
BlochVelocity bloch_rhs(const SystemSpec& spec, const BlochState& state,
                        Readouts readouts);

/// Point on the system's great circle for angle theta.
BlochState bloch_from_theta(const SystemSpec& spec, double theta);

/// Great-circle angle of a Bloch vector in [-pi, pi].
double theta_from_bloch(const SystemSpec& spec, const BlochState& state);

/// Driven system fixed point (atan(tau delta), -tau delta), principal branch.
PhasePoint driven_fixed_point(const SystemSpec& spec);

/// Driven system separatrix energy -tau delta^2 / 2.
double driven_separatrix_energy(const SystemSpec& spec);

/// Maps an angle onto [0, 2 pi).
double wrap_angle(double theta);

/// Signed difference a - b mapped onto (-pi, pi].
double angle_difference(double a, double b);

void to_json(nlohmann::json& j, const SystemSpec& spec);
/// Strict: rejects unknown keys and missing parameters.
void from_json(const nlohmann::json& j, SystemSpec& spec);

}  // namespace opq
