#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "demandforge/choice.hpp"
#include "demandforge/programs.hpp"
#include "demandforge/solver.hpp"

namespace demandforge {

// --- equilibrium oracle ---------------------------------------------------

enum class AveragingRule { Msa, SelfRegulating };

struct OracleConfig {
  double tol = 1e-10;  // max |y(f) - f| / max(1, f)
  int max_iter = 200000;
  AveragingRule rule = AveragingRule::SelfRegulating;
  double sra_increase = 1.5;  // added to the step denominator when the residual grows
  double sra_decrease = 0.05; // added otherwise
};

struct EquilibriumState {
  std::vector<double> link_flows;
  std::vector<double> route_costs;
  HierProbabilities probabilities;
  TripTables trips;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Link flows reassembled from the closed-form model at the given flows.
std::vector<double> reassemble_flows(const ChoiceHierarchy& h, const FixedUtilities& v,
                                     const ModelParameters& params,
                                     std::span<const double> demand,
                                     std::span<const double> flows);

// max |y(f) - f| / max(1, f).
double fixed_point_residual(const ChoiceHierarchy& h, const FixedUtilities& v,
                            const ModelParameters& params, std::span<const double> demand,
                            std::span<const double> flows);

// Iterates cost -> probabilities -> trips -> averaged flows until the flow
// residual drops below tol. Starts from zero flows.
EquilibriumState fixed_point_oracle(const ChoiceHierarchy& h, const FixedUtilities& v,
                                    const ModelParameters& params,
                                    std::span<const double> demand,
                                    const OracleConfig& config = {});

// --- synthetic scenarios ----------------------------------------------------

struct SyntheticScenario {
  std::string name;
  std::shared_ptr<const ChoiceHierarchy> hierarchy;
  AttributeTable attributes;
  ModelParameters parameters;
  std::vector<double> demand;  // O_i
  // Mode coefficients held fixed during calibration (index, value).
  std::vector<std::pair<std::size_t, double>> fixed_mode_coefficients;
};

// Enumerates k routes per (origin, destination, mode) and builds the hierarchy.
std::shared_ptr<const ChoiceHierarchy> make_hierarchy(const ModalNetwork& network,
                                                      std::vector<int> origins,
                                                      std::vector<int> destinations,
                                                      const ModeTree& tree, std::size_t k);

// Three origins, three destinations, two hub nodes; modes car / bus / rail
// with bus and rail sharing a nest. flat = true zeroes the BPR alpha so costs
// do not depend on flow.
SyntheticScenario make_network_scenario(bool flat, std::uint64_t seed = 7);

// Link-free destination / mode scenario for the HierMNL family; the first
// mode attribute is a generalized cost with coefficient fixed at -1.
SyntheticScenario make_hier_mnl_scenario(std::size_t origins, std::size_t destinations,
                                         std::uint64_t seed);

EquilibriumState scenario_equilibrium(const SyntheticScenario& s,
                                      const OracleConfig& config = {});

// Exact hierarchy-consistent tables from the equilibrium. Throws
// std::invalid_argument if the result violates ObservationBundle invariants
// (e.g. zero demand).
ObservationBundle generate_observations(const SyntheticScenario& s,
                                        const OracleConfig& config = {});

// Multiplies each T_ijm by (1 + noise u), u uniform in [-1, 1], then resums
// T_ijM, T_ij and O_i so hierarchy sums still hold.
ObservationBundle perturb_observations(const ObservationBundle& obs, const ChoiceHierarchy& h,
                                       double noise, std::uint64_t seed);

struct RecoveryReport {
  ModelParameters truth;
  ModelParameters recovered;
  std::vector<std::string> names;
  std::vector<double> truth_values;
  std::vector<double> recovered_values;
  std::vector<double> relative_errors;
  double max_relative_error = 0.0;
  CalibrationResult calibration;
  ObservationBundle observations;
};

// generate_observations, then calibration (HierMNL for link-free scenarios,
// FirstStage otherwise), then relative parameter errors.
RecoveryReport recover_and_compare(const SyntheticScenario& s, const SolverConfig& config,
                                   const OracleConfig& oracle = {});

// Same, against a caller-supplied bundle.
RecoveryReport recover_from(const SyntheticScenario& s, const ObservationBundle& obs,
                            const SolverConfig& config);

// --- MNL likelihood cross-check --------------------------------------------

struct MnlSample {
  std::size_t alternatives = 0;
  std::vector<std::size_t> choices;                           // y^h as chosen index
  std::vector<std::vector<std::vector<double>>> attributes;   // [h][m][k]
  std::size_t attribute_count() const {
    return attributes.empty() || attributes[0].empty() ? 0 : attributes[0][0].size();
  }
};

// Draws attributes uniform in [-1, 1] and choices from the MNL with the given
// coefficients and ASCs. Deterministic for a seed.
MnlSample simulate_mnl_sample(std::size_t individuals, std::size_t alternatives,
                              std::span<const double> beta, std::span<const double> asc,
                              std::uint64_t seed, double theta = 1.0);

// sum_h sum_m y ln p, p = MNL(theta (asc + beta X)).
double log_likelihood_mnl(const MnlSample& s, std::span<const double> beta,
                          std::span<const double> asc, double theta = 1.0);

// Gradient over (asc of non-reference alternatives, beta).
std::vector<double> log_likelihood_gradient(const MnlSample& s, std::span<const double> beta,
                                            std::span<const double> asc, double theta = 1.0,
                                            std::size_t reference = 0);

struct MleResult {
  std::vector<double> asc;
  std::vector<double> beta;
  double log_likelihood = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Newton ascent with analytic Hessian and backtracking.
MleResult fit_mnl_mle(const MnlSample& s, double theta = 1.0, std::size_t reference = 0,
                      double tol = 1e-10, int max_iter = 200);

}  // namespace demandforge
