#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "demandforge/choice.hpp"

namespace demandforge {

// Sign convention: every program is a maximization. The solver ascends.

// A group of variables constrained to be positive and to sum to `mass`.
// `temperature` is the entropy weight of the block; the solver uses it to
// precondition mirror steps.
struct SimplexBlock {
  std::string label;  // e.g. "lambda[0]" - the dual symbol of its constraint
  std::size_t offset = 0;
  std::size_t size = 0;
  double mass = 1.0;
  double temperature = 1.0;
};

// Smooth concave maximization over a product of simplices.
class ConvexProgram {
 public:
  virtual ~ConvexProgram() = default;

  virtual std::string name() const = 0;
  virtual double value(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> grad) const = 0;
  // Mass flowing into each block at x; the gradient of a conditional block
  // divided by this weight is the per-traveller marginal utility. Default 1.
  virtual void block_weights(std::span<const double> x, std::span<double> weights) const;
  // Gradient divided by the owning block's weight. Programs override this
  // when the division would lose precision.
  virtual void natural_gradient(std::span<const double> x, std::span<double> out) const;
  // Textual listing of blocks and constraints.
  virtual void dump(std::ostream& out) const;
  // Copy with its nonsmooth terms widened by `factor` (a Huber width, say),
  // used to warm-start the solver; nullptr when there is nothing to widen.
  virtual std::unique_ptr<ConvexProgram> smoothed(double factor) const;

  const std::vector<SimplexBlock>& blocks() const { return blocks_; }
  std::size_t dimension() const { return dimension_; }
  // Uniform interior point.
  std::vector<double> uniform_point() const;

 protected:
  void add_block(std::string label, std::size_t size, double mass, double temperature);

  std::vector<SimplexBlock> blocks_;
  std::size_t dimension_ = 0;
};

// max sum_h [ sum_m V^h_m p^h_m - (1/theta) sum_m p^h_m ln p^h_m ], one simplex
// per individual. With one individual this is the satisfaction program whose
// optimum is the MNL.
class MultiMnlProgram : public ConvexProgram {
 public:
  // utilities[h] holds V^h for each individual.
  MultiMnlProgram(std::vector<std::vector<double>> utilities, double theta,
                  std::string name = "MaxSatisMNL");
  std::string name() const override { return name_; }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> grad) const override;

 private:
  std::vector<std::vector<double>> utilities_;
  double theta_;
  std::string name_;
};

std::unique_ptr<MultiMnlProgram> build_max_satis_mnl(std::span<const double> utilities,
                                                     double theta);

// max sum V p - (1/theta) sum_m [tau_B p_m ln p_m + (1 - tau_B) p_m ln P_B]
// over one simplex; tau == 0 allowed.
class MaxSatisNlProgram : public ConvexProgram {
 public:
  MaxSatisNlProgram(std::vector<double> utilities, double theta, ModeTree tree);
  std::string name() const override { return "MaxSatisNL"; }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> grad) const override;

 private:
  std::vector<double> nest_totals(std::span<const double> x) const;

  std::vector<double> utilities_;
  double theta_;
  ModeTree tree_;
};

std::unique_ptr<MaxSatisNlProgram> build_max_satis_nl(std::span<const double> utilities,
                                                      double theta, const ModeTree& tree);

// Entropy weights of the hierarchical program: 1/theta_j, 1/theta_m,
// tau_M/theta_m per nest, 1/theta_r.
struct EntropyWeights {
  double dest = 1.0;
  double nest = 1.0;
  std::vector<double> within;
  double route = 1.0;

  static EntropyWeights from_parameters(const ModelParameters& p);
};

// Optional link-count term: - sigma * sum_a huber(f_a - fbar_a).
struct LinkCountPenalty {
  double sigma = 0.0;
  double huber_width = 1e-3;
  std::vector<double> observed;
};

double huber(double r, double width);
double huber_derivative(double r, double width);

// Variables: p_{j/i} (block lambda_i), p_{M/ij} (mu_ij), p_{m/M} (kappa_ijM),
// p_{r/ijm} (nu_ijm). Objective:
//   - w_dest  sum O p_j ln p_j
//   - w_nest  sum O p_j p_M ln p_M
//   - w_M     sum O p_j p_M p_m ln p_m          (per nest M)
//   - w_route sum O p_j p_M p_m p_r ln(p_r / PS)
//   + sum O p_j V_ij + sum O p_j p_M p_m V_ijm
//   - Beckmann(f) - sigma sum huber(f - fbar)
// with f the affine image of route flows. This is the SecondStage shape and
// the inner problem of the calibration programs.
class HierarchicalProgram : public ConvexProgram {
 public:
  HierarchicalProgram(std::shared_ptr<const ChoiceHierarchy> hierarchy,
                      std::vector<double> demand, FixedUtilities utilities,
                      EntropyWeights weights, LinkCountPenalty penalty = {},
                      std::string name = "SecondStage");

  std::string name() const override { return name_; }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> grad) const override;
  void block_weights(std::span<const double> x, std::span<double> weights) const override;
  void natural_gradient(std::span<const double> x, std::span<double> out) const override;
  void dump(std::ostream& out) const override;
  std::unique_ptr<ConvexProgram> smoothed(double factor) const override;

  const ChoiceHierarchy& hierarchy() const { return *hierarchy_; }
  std::shared_ptr<const ChoiceHierarchy> hierarchy_ptr() const { return hierarchy_; }
  const std::vector<double>& demand() const { return demand_; }
  const EntropyWeights& weights() const { return weights_; }
  const FixedUtilities& utilities() const { return utilities_; }
  const LinkCountPenalty& penalty() const { return penalty_; }

  // Variable offsets.
  std::size_t dest_index(std::size_t od) const { return od; }
  std::size_t nest_index(std::size_t odn) const { return nest_offset_ + odn; }
  std::size_t mode_index(std::size_t odm) const;
  std::size_t route_index(std::size_t r) const { return route_offset_ + r; }

  // Reads conditional probabilities out of x.
  HierProbabilities probabilities(std::span<const double> x) const;
  // Packs closed-form probabilities into a point of this program.
  std::vector<double> pack(const HierProbabilities& p) const;
  // Trip tables and link flows at x.
  TripTables trips(std::span<const double> x) const;

  // Entropy of each level at x, as they appear in the calibration
  // constraints: destination, nest, within-nest per nest.
  double destination_entropy(std::span<const double> x) const;
  double nest_entropy(std::span<const double> x) const;
  std::vector<double> within_nest_entropy(std::span<const double> x) const;

 private:
  struct Masses {
    std::vector<double> od, odn, odm, route, flows;
  };
  Masses masses(std::span<const double> x) const;
  // Marginal link cost including the penalty term.
  std::vector<double> marginal_link_costs(std::span<const double> flows) const;

  std::shared_ptr<const ChoiceHierarchy> hierarchy_;
  std::vector<double> demand_;
  FixedUtilities utilities_;
  EntropyWeights weights_;
  LinkCountPenalty penalty_;
  std::string name_;
  std::size_t nest_offset_ = 0, mode_offset_ = 0, route_offset_ = 0;
  std::vector<std::size_t> mode_slot_;   // position of each mode in nest-sorted order
  std::vector<std::size_t> nest_start_;  // first slot of each nest
};

// Observed trip tables for calibration.
struct ObservationBundle {
  std::vector<double> origin_totals;  // O_i
  std::vector<double> od;             // T_ij    [od]
  std::vector<double> od_nest;        // T_ijM   [odn], may be empty
  std::vector<double> od_mode;        // T_ijm   [odm]
  std::vector<double> link_flows;     // fbar    [link], may be empty

  // Fills T_ijM from T_ijm when absent; returns true when it did.
  bool complete_nest_totals(const ChoiceHierarchy& h);
  // Hierarchy-consistent sums within rel_tol and strictly positive cells.
  // Throws std::invalid_argument naming the violated sum.
  void validate(const ChoiceHierarchy& h, double rel_tol = 1e-9) const;
};

// --- SecondStage and the hierarchical MNL variants -------------------------

std::unique_ptr<HierarchicalProgram> build_second_stage(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, std::vector<double> demand,
    const FixedUtilities& utilities, const ModelParameters& params);

// Hierarchy with no nests of interest and no routes: one nest holding all
// modes and one link-free route per (i,j,m). Used by the HierMNL family.
std::shared_ptr<const ChoiceHierarchy> make_destination_mode_hierarchy(
    std::size_t origins, std::size_t destinations, std::size_t modes);

// HierMNLVariant: conditional probabilities, given 1/theta_j, 1/theta_m and
// fixed utilities.
std::unique_ptr<HierarchicalProgram> build_hier_mnl_variant(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, std::vector<double> demand,
    const FixedUtilities& utilities, double theta_dest, double theta_mode);

// HierMNLVariant2: variables T_ijm with T_ij = sum_m T_ijm, one block per
// origin summing to O_i. Objective
//   -(1/theta_j') sum T_ij ln T_ij - (1/theta_m) sum T_ijm ln T_ijm
//   + sum T_ij V_ij + sum T_ijm V_ijm,   1/theta_j' = 1/theta_j - 1/theta_m.
class HierMnlTripProgram : public ConvexProgram {
 public:
  HierMnlTripProgram(std::size_t origins, std::size_t destinations, std::size_t modes,
                     std::vector<double> demand, FixedUtilities utilities, double theta_dest,
                     double theta_mode);
  std::string name() const override { return "HierMNLVariant2"; }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> grad) const override;

  double dest_coefficient() const { return dest_coef_; }
  bool negative_coefficient() const { return dest_coef_ < 0.0; }
  // T_ij at x.
  std::vector<double> od_trips(std::span<const double> x) const;

 private:
  std::size_t ni_, nj_, nm_;
  std::vector<double> demand_;
  FixedUtilities utilities_;
  double dest_coef_, mode_coef_;
};

std::unique_ptr<HierMnlTripProgram> build_hier_mnl_variant2(
    std::size_t origins, std::size_t destinations, std::size_t modes, std::vector<double> demand,
    const FixedUtilities& utilities, double theta_dest, double theta_mode);

// --- Calibration programs (nonlinear equality constraints) ----------------

// One scalar multiplier of a calibration program.
struct MultiplierSpec {
  std::string label;
  double initial = 0.0;
  bool positive = false;
};

// A program whose optimality system is found by dual decomposition: for
// fixed multipliers the Lagrangian is a ConvexProgram; the multipliers are
// adjusted until the nonlinear constraint residuals vanish.
class CalibrationProgram {
 public:
  virtual ~CalibrationProgram() = default;
  virtual std::string name() const = 0;
  const std::vector<MultiplierSpec>& multipliers() const { return multipliers_; }
  virtual std::unique_ptr<ConvexProgram> inner(std::span<const double> multipliers) const = 0;
  // Constraint residuals (model minus observed) at the inner solution.
  virtual std::vector<double> residuals(const ConvexProgram& inner,
                                        std::span<const double> x) const = 0;
  // Observed side of each constraint, used to scale residuals.
  const std::vector<double>& targets() const { return targets_; }
  virtual void dump(std::ostream& out) const;
  const std::vector<std::string>& warnings() const { return warnings_; }

 protected:
  std::vector<std::string> warnings_;
  std::vector<MultiplierSpec> multipliers_;
  std::vector<double> targets_;
};

// MaxEntropy over individuals: per-individual simplex, alternative-share
// constraints [gamma_m] (reference alternative's share implied) and
// attribute-aggregate constraints [alpha_k].
class MaxEntropyProgram : public CalibrationProgram {
 public:
  // choices[h] is the chosen alternative; attributes[h][m][k].
  MaxEntropyProgram(std::vector<std::size_t> choices,
                    std::vector<std::vector<std::vector<double>>> attributes,
                    std::size_t alternatives, double theta, std::size_t reference = 0);
  std::string name() const override { return "MaxEntropy"; }
  std::unique_ptr<ConvexProgram> inner(std::span<const double> multipliers) const override;
  std::vector<double> residuals(const ConvexProgram& inner,
                                std::span<const double> x) const override;

  // Splits a multiplier vector into ASCs (gamma, reference = 0) and alpha.
  std::vector<double> asc(std::span<const double> multipliers) const;
  std::vector<double> alpha(std::span<const double> multipliers) const;
  std::size_t alternative_count() const { return alternatives_; }

 private:
  std::vector<std::size_t> choices_;
  std::vector<std::vector<std::vector<double>>> attributes_;
  std::size_t alternatives_, attribute_count_, reference_;
  double theta_;
};

std::unique_ptr<MaxEntropyProgram> build_max_entropy_mnl(
    std::vector<std::size_t> choices, std::vector<std::vector<std::vector<double>>> attributes,
    std::size_t alternatives, double theta);

// Calibration of the hierarchical model against observed tables.
//  - HierMNL: destination / mode levels, duals 1/theta_j, 1/theta_m, beta_k,
//    beta_q.
//  - FirstStage: destination / nest / within-nest / route levels, duals
//    1/theta_j, 1/theta_m, tau_M/theta_m (multi-member nests), beta_k,
//    beta_q; theta_r given.
// Mode coefficients listed in fixed_mode_coefficients are held at the given
// value and their aggregate constraint dropped, which fixes the utility
// scale when no route level carries a unit cost coefficient.
class HierarchicalCalibration : public CalibrationProgram {
 public:
  enum class Kind { HierMnl, FirstStage };

  HierarchicalCalibration(Kind kind, std::shared_ptr<const ChoiceHierarchy> hierarchy,
                          ObservationBundle observations, AttributeTable attributes,
                          double theta_route, LinkCountPenalty penalty = {},
                          std::vector<std::pair<std::size_t, double>> fixed_mode_coefficients = {});

  std::string name() const override;
  std::unique_ptr<ConvexProgram> inner(std::span<const double> multipliers) const override;
  std::vector<double> residuals(const ConvexProgram& inner,
                                std::span<const double> x) const override;
  void dump(std::ostream& out) const override;

  // Converts multipliers into behavioural parameters per the dual labelling.
  ModelParameters parameters(std::span<const double> multipliers) const;
  // Multiplier vector that corresponds to the given parameters.
  std::vector<double> multipliers_for(const ModelParameters& params) const;

  Kind kind() const { return kind_; }
  const ChoiceHierarchy& hierarchy() const { return *hierarchy_; }
  std::shared_ptr<const ChoiceHierarchy> hierarchy_ptr() const { return hierarchy_; }
  const ObservationBundle& observations() const { return observations_; }
  const AttributeTable& attributes() const { return attributes_; }
  // Nests whose within-nest dual is a free multiplier.
  const std::vector<std::size_t>& free_nests() const { return free_nests_; }
  const LinkCountPenalty& penalty() const { return penalty_; }

 private:
  Kind kind_;
  std::shared_ptr<const ChoiceHierarchy> hierarchy_;
  ObservationBundle observations_;
  AttributeTable attributes_;
  double theta_route_;
  LinkCountPenalty penalty_;
  std::vector<std::pair<std::size_t, double>> fixed_mode_;
  std::vector<std::size_t> free_nests_;
  std::vector<std::size_t> free_mode_attrs_;
};

std::unique_ptr<HierarchicalCalibration> build_hier_mnl(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, std::vector<std::pair<std::size_t, double>> fixed_mode = {});

std::unique_ptr<HierarchicalCalibration> build_first_stage(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, double theta_route);

std::unique_ptr<HierarchicalCalibration> build_first_stage_variant(
    std::shared_ptr<const ChoiceHierarchy> hierarchy, ObservationBundle observations,
    AttributeTable attributes, double theta_route, double sigma,
    std::vector<double> observed_flows, double huber_width = 1e-3);

}  // namespace demandforge
