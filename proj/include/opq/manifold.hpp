#pragma once

// Lagrange-manifold evolution, fold (caustic) detection and the multipath
// boundary-value problem theta(T; p_i) = theta_f (mod 2 pi).

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opq/classifier.hpp"
#include "opq/optimal_path.hpp"
#include "opq/system.hpp"

namespace opq {

enum class Execution { Serial, Parallel };

struct ManifoldPoint {
  double p_i = 0.0;
  double theta = 0.0;
  double p = 0.0;
  double S = 0.0;
  double dtheta_dpi = 0.0;  // from the variational equations
};

struct ManifoldSnapshot {
  SystemSpec system;
  double theta_i = 0.0;
  double t = 0.0;
  std::vector<ManifoldPoint> points;       // p_i strictly increasing
  std::vector<std::size_t> fold_markers;   // interior indices where dtheta/dp_i flips sign
  std::size_t unresolved_segments = 0;     // hit the p_i resolution floor
};

struct RefinementOptions {
  std::size_t initial_points = 512;
  double max_gap = 0.05;    // Euclidean gap in the (theta, p) plane
  double max_turn = 0.2;    // polyline turning angle, rad
  std::size_t max_points = 400'000;
  double rtol = 1e-10;
  double atol = 1e-12;
  Execution execution = Execution::Parallel;
};

/// Samples the image at time t of the vertical line {(theta_i, p_i)} for
/// p_i in [p_lo, p_hi], refining until neighbouring points are close and
/// the polyline is smooth. Throws RefinementBudgetExceeded.
ManifoldSnapshot evolve_manifold(const SystemSpec& spec, double theta_i, double p_lo,
                                 double p_hi, double t, const RefinementOptions& opts = {});

/// Central finite difference of theta_f over p_i at an interior index
/// (one-sided at the ends). At t = 0 the manifold is vertical and the
/// result is +0.
double jacobian_dthetaf_dpi(const ManifoldSnapshot& snap, std::size_t index);

inline constexpr double kVanVleckCap = 1e12;

/// |dp_i/dtheta_f|; +infinity at fold markers or above the cap.
double van_vleck(const ManifoldSnapshot& snap, std::size_t index);

/// Momentum range of the island orbits through theta_i (the two separatrix
/// crossings), shrunk by a relative margin so no orbit leaves the island.
std::pair<double, double> island_momentum_range(const SystemSpec& spec, double theta_i,
                                                double margin = 1e-10);

/// Default p_i search range: the island range for the two-observable system,
/// the ascending region-A range for the driven one.
std::pair<double, double> default_search_range(const SystemSpec& spec, double theta_i);

/// Half the period of the innermost island orbit touched by the vertical
/// initial manifold. Throws NotInIsland.
double caustic_onset(const SystemSpec& spec, double theta_i);

/// First time the evolved manifold folds, by bisection over t on the sign
/// of min dtheta/dp_i. Throws NotInIsland.
double caustic_onset_bisection(const SystemSpec& spec, double theta_i,
                               const RefinementOptions& opts = {}, double t_tol = 1e-5);

enum class BranchKind { MLP, LLP, SP, Unclassified };
const char* to_string(BranchKind kind);

struct Branch {
  double p_i = 0.0;
  long winding = 0;
  double S = 0.0;
  double theta_T = 0.0;  // unwrapped
  double residual = 0.0; // |theta_T - (theta_f + 2 pi winding)|
  BranchKind kind = BranchKind::Unclassified;
  std::optional<VariationReport> variation;
  double weight = 0.0;          // softmax over all branches
  double weight_mlp_only = 0.0; // softmax with LLP and SP branches excluded
  bool negligible = false;
  OptimalPath path;
};

struct MultipathSolution {
  SystemSpec system;
  double theta_i = 0.0;
  double theta_f = 0.0;  // in [0, 2 pi)
  double T = 0.0;
  double p_lo = 0.0;
  double p_hi = 0.0;
  std::vector<Branch> branches;  // p_i increasing
};

struct MultipathOptions {
  std::optional<std::pair<double, double>> p_range;  // default_search_range if unset
  long max_winding = 8;
  double theta_tol = 1e-8;
  double weight_floor = 1e-12;
  std::size_t path_samples = 4001;
  RefinementOptions refinement;
};

/// All p_i with theta(T; p_i) = theta_f + 2 pi n, |n| <= max_winding, each
/// integrated, classified and weighted. Throws NoSolution or AmbiguousBracket.
MultipathSolution find_multipaths(const SystemSpec& spec, double theta_i, double theta_f,
                                  double T, const MultipathOptions& opts = {});

/// Softmax of branch actions with a max shift; non-MLP branches are left out
/// of the normalization (weight 0) unless include_llp is set.
std::vector<double> branch_weights(const MultipathSolution& solution, bool include_llp);

struct FinalState {
  double theta_T = 0.0;  // unwrapped
  double p_i = 0.0;
  double S = 0.0;
};

/// Root of p(T; p_i) = 0 with the largest action. Throws NoSolution.
FinalState most_likely_final(const SystemSpec& spec, double theta_i, double T,
                             std::optional<std::pair<double, double>> p_range = {},
                             const RefinementOptions& opts = {});

void write_snapshot_csv(const ManifoldSnapshot& snap, const std::filesystem::path& file);
nlohmann::json solution_json(const MultipathSolution& solution);
/// Writes <dir>/multipath.json and one branch_<k>.csv per branch.
void write_solution(const MultipathSolution& solution, const std::filesystem::path& dir,
                    const nlohmann::json& config);

}  // namespace opq
