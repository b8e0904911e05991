#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "demandforge/programs.hpp"

namespace demandforge {

struct SolverConfig {
  double inner_tol = 1e-8;   // KKT residual
  double outer_tol = 1e-6;   // scaled constraint residual
  int max_inner = 10000;
  int max_outer = 200;
  double armijo_c = 1e-4;
  double armijo_shrink = 0.5;
  double max_step = 1.0;
  double probability_floor = 1e-300;
  // Mirror iterations before switching to Newton steps in softmax
  // coordinates; Newton is skipped above newton_max_dim free coordinates.
  int newton_after = 0;
  std::size_t newton_max_dim = 500;
  double huber_width = 1e-3;
  double damping = 1.0;           // flow averaging scale for the equilibrium oracle
  double jacobian_step = 1e-5;    // relative finite-difference step on multipliers
  std::ostream* log = nullptr;    // iteration log, CSV
  std::ostream* outer_log = nullptr;

  // Throws std::invalid_argument on non-positive tolerances or caps.
  void validate() const;
};

// Point returned by the inner solver.
struct SolutionState {
  std::vector<double> x;
  double objective = 0.0;
  double kkt_residual = 0.0;              // max over blocks, per-traveller units
  double lagrangian_gradient_norm = 0.0;  // raw gradient minus simplex duals
  double step_size = 0.0;                 // last accepted step
  int iterations = 0;
  bool converged = false;
  std::vector<double> block_duals;        // simplex multipliers, one per block
};

// Behavioural reading of the optimal multipliers.
struct DualSolution {
  double theta_dest = 0.0;
  double theta_mode = 0.0;
  std::vector<double> tau;        // per nest
  std::vector<double> beta_dest;
  std::vector<double> beta_mode;
  std::vector<std::string> multiplier_labels;
  std::vector<double> multipliers;
  std::vector<std::string> block_labels;  // lambda / mu / kappa / nu
  std::vector<double> block_duals;
};

struct KktReport {
  std::vector<double> block_residuals;
  double max_residual = 0.0;
  double lagrangian_gradient_norm = 0.0;
  std::vector<double> simplex_residuals;     // |sum_b x - mass| / max(1, mass)
  std::vector<double> constraint_residuals;  // scaled calibration residuals, if any
  double max_constraint_residual = 0.0;
  std::vector<double> block_duals;
};

// Mirror ascent with Armijo backtracking over the program's simplex blocks,
// then damped Newton in per-block softmax coordinates (finite-difference
// Hessian) when mirror ascent has not converged after newton_after steps.
// Deterministic. `start` must be positive; it is renormalized block by block.
// Hitting the iteration cap returns the last iterate with converged = false.
SolutionState solve_simplex_program(const ConvexProgram& program, const SolverConfig& config,
                                    std::optional<std::vector<double>> start = std::nullopt);

DualSolution simplex_duals(const ConvexProgram& program, const SolutionState& state);

KktReport check_kkt(const ConvexProgram& program, std::span<const double> x);
KktReport check_kkt(const CalibrationProgram& calibration, std::span<const double> multipliers,
                    std::span<const double> x);

struct CalibrationResult {
  SolutionState inner;
  DualSolution duals;
  std::optional<ModelParameters> parameters;  // for hierarchical calibrations
  std::vector<double> multipliers;
  std::vector<double> residuals;  // scaled
  double residual_norm = 0.0;     // max abs scaled residual
  int outer_iterations = 0;
  int inner_iterations = 0;       // summed over all inner solves
  bool converged = false;
  std::vector<double> residual_trace;
  std::vector<std::size_t> rank_deficient;
  std::vector<std::string> warnings;
};

// Raised when the outer residual grows for ten consecutive steps.
class CalibrationDiverged : public std::runtime_error {
 public:
  CalibrationDiverged(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

// Dual decomposition: quasi-Newton root finding on the multipliers, one inner
// solve per evaluation (warm-started).
CalibrationResult solve_calibration(const CalibrationProgram& program, const SolverConfig& config,
                                    std::optional<std::vector<double>> initial = std::nullopt);

}  // namespace demandforge
