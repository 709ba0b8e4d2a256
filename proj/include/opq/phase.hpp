#pragma once

// Phase-space structure of the reduced Hamiltonian: momentum branches,
// island geometry, periods, traversal times and energy scans.

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "opq/system.hpp"

namespace opq {

/// 4a^2 + 4aE + b^2; the square of dtheta/dt at energy E.
double discriminant(const SystemSpec& spec, double theta, double E);

struct MomentumBranches {
  double p_plus = 0.0;   // dtheta/dt = +sqrt(D)
  double p_minus = 0.0;  // dtheta/dt = -sqrt(D)
};

/// Both roots of H(theta, p) = E. Throws SingularCoefficient where a = 0
/// and NoRealBranch where the discriminant is negative.
MomentumBranches p_branches(const SystemSpec& spec, double theta, double E);

/// Forward-moving root p_+ written without the 1/a cancellation, so it stays
/// finite through a = 0 when b > 0. Throws NoRealBranch for D < 0.
double p_forward(const SystemSpec& spec, double theta, double E);

struct IslandSpec {
  double E_c = 0.0;               // separatrix
  double E_m = 0.0;               // island center
  double center_theta = 0.0;      // in [0, pi)
  double hyperbolic_theta = 0.0;  // in [0, pi)
};

/// Table-1 island energies; nullopt for a driven system or equal strengths.
std::optional<IslandSpec> island_spec(const SystemSpec& spec);

/// Island center (elliptic point) closest to theta on the unwrapped line.
/// Throws NotInIsland when there are no islands or theta sits on a
/// hyperbolic point.
double island_center_near(const SystemSpec& spec, double theta);

/// Half-width of the island orbit of energy E, measured from the center.
double island_half_width(const SystemSpec& spec, double E);

/// Turning angles (min, max) of the orbit of energy E around the island
/// center nearest to center_hint. Throws OutOfIslandRange outside [E_m, E_c].
std::pair<double, double> turning_points(const SystemSpec& spec, double E,
                                         double center_hint);

/// Period of the closed island orbit of energy E. Throws OutOfIslandRange
/// unless E_m < E < E_c and QuadratureFailure if the quadrature does not
/// converge (very close to the separatrix).
double island_period(const SystemSpec& spec, double E);

/// Angular frequency of small oscillations about the elliptic point.
double island_linear_frequency(const SystemSpec& spec);

/// Time for the optimal path of energy E to move from theta_i to theta_f.
/// Throws ForbiddenRegion (detail = offending angle) if the discriminant
/// goes negative between the endpoints.
double traversal_time(const SystemSpec& spec, double theta_i, double theta_f, double E);

struct TimeAction {
  double T = 0.0;
  double S = 0.0;
};

/// Traversal time and action E T - integral of p dtheta along the branch
/// moving from theta_i to theta_f at energy E.
TimeAction traversal_action(const SystemSpec& spec, double theta_i, double theta_f,
                            double E);

struct ScanRow {
  double E = 0.0;
  double T_2pi = 0.0;
  double S = 0.0;
};

/// One forward revolution (theta_i -> theta_i + 2 pi) for each energy.
std::vector<ScanRow> scan_T2pi_and_S(const SystemSpec& spec, const std::vector<double>& E_grid,
                                     double theta_i = 0.0);

struct PeriodRow {
  double E = 0.0;
  double period = 0.0;
};

/// Energies log-spaced toward E_c (n points strictly inside (E_m, E_c)).
std::vector<double> island_energy_grid(const SystemSpec& spec, std::size_t n);

std::vector<PeriodRow> scan_periods(const SystemSpec& spec, const std::vector<double>& E_grid);

struct FieldSample {
  double theta = 0.0;
  double p = 0.0;
  double E = 0.0;
  double sdot = 0.0;
};

/// Row-major (theta outer) grid of H and the action rate.
std::vector<FieldSample> sample_field(const SystemSpec& spec, double theta_min,
                                      double theta_max, std::size_t n_theta, double p_min,
                                      double p_max, std::size_t n_p);

void write_scan_csv(const std::vector<ScanRow>& rows, const std::filesystem::path& file);
void write_periods_csv(const std::vector<PeriodRow>& rows, const std::filesystem::path& file);
void write_sdot_csv(const std::vector<FieldSample>& field, const std::filesystem::path& file);

}  // namespace opq
