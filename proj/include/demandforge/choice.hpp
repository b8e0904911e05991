#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "demandforge/network.hpp"
#include "demandforge/routes.hpp"

namespace demandforge {

// Nest structure over the alternatives (modes). Alternative m belongs to nest
// nest_of[m]; tau[M] is the dissimilarity factor of nest M.
struct ModeTree {
  std::vector<int> nest_of;
  std::vector<double> tau;
  std::vector<std::string> nest_names;

  std::size_t alternative_count() const { return nest_of.size(); }
  std::size_t nest_count() const { return tau.size(); }
  std::vector<std::size_t> members(std::size_t nest) const;
  // Every alternative in exactly one nest, no empty nests, tau in [0, 1].
  void validate() const;

  // One nest holding every alternative, with the given tau.
  static ModeTree single_nest(std::size_t alternatives, double tau = 1.0);
  // One nest per alternative.
  static ModeTree singletons(std::size_t alternatives);
};

// Multinomial logit: p_m = exp(theta V_m) / sum exp(theta V_m').
std::vector<double> mnl_prob(std::span<const double> utilities, double theta);

// Satisfaction (1/theta) log sum exp(theta V), max-shifted.
double mnl_satisfaction(std::span<const double> utilities, double theta);

// Nested logit p_m = p_{B(m)} p_{m/B(m)}. Throws std::domain_error when a
// multi-member nest has tau == 0; the closed form does not exist there and
// the entropy program must be used instead.
std::vector<double> nl_prob(std::span<const double> utilities, double theta,
                            const ModeTree& tree);

// Path-size logit over routes: p_r proportional to PS_r exp(theta_r V_r).
std::vector<double> path_size_logit_prob(std::span<const double> utilities,
                                         std::span<const double> path_size, double theta_r);

// Index space of the destination / nest / mode / route hierarchy. Owns a copy
// of the network and the frozen route sets for every (origin, destination,
// mode) triple.
class ChoiceHierarchy {
 public:
  ChoiceHierarchy() = default;
  ChoiceHierarchy(ModalNetwork network, std::vector<int> origins,
                  std::vector<int> destinations, ModeTree tree, const RouteSet& routes);

  const ModalNetwork& network() const { return network_; }
  const ModeTree& tree() const { return tree_; }
  const std::vector<int>& origins() const { return origins_; }
  const std::vector<int>& destinations() const { return destinations_; }

  std::size_t origin_count() const { return origins_.size(); }
  std::size_t destination_count() const { return destinations_.size(); }
  std::size_t mode_count() const { return tree_.alternative_count(); }
  std::size_t nest_count() const { return tree_.nest_count(); }
  std::size_t od_count() const { return origins_.size() * destinations_.size(); }
  std::size_t odm_count() const { return od_count() * mode_count(); }
  std::size_t route_count() const { return routes_.size(); }
  std::size_t link_count() const { return network_.link_count(); }

  std::size_t od(std::size_t i, std::size_t j) const { return i * destinations_.size() + j; }
  std::size_t odm(std::size_t i, std::size_t j, std::size_t m) const {
    return od(i, j) * mode_count() + m;
  }
  std::size_t odn(std::size_t i, std::size_t j, std::size_t nest) const {
    return od(i, j) * nest_count() + nest;
  }
  std::size_t route_begin(std::size_t odm_index) const { return route_offsets_[odm_index]; }
  std::size_t route_end(std::size_t odm_index) const { return route_offsets_[odm_index + 1]; }

  const Route& route(std::size_t r) const { return routes_[r]; }
  double path_size(std::size_t r) const { return path_size_[r]; }
  // Route generalized costs for every route under the given link flows.
  std::vector<double> route_costs(std::span<const double> link_flows) const;

 private:
  ModalNetwork network_;
  std::vector<int> origins_;
  std::vector<int> destinations_;
  ModeTree tree_;
  std::vector<std::size_t> route_offsets_;
  std::vector<Route> routes_;
  std::vector<double> path_size_;
};

// Destination-level attributes X^k_ij and mode-level attributes X^q_ijm,
// dense over the hierarchy's (i,j) and (i,j,m) index sets.
struct AttributeTable {
  std::size_t dest_attribute_count = 0;
  std::size_t mode_attribute_count = 0;
  std::vector<double> dest;  // [od * K + k]
  std::vector<double> mode;  // [odm * Q + q]

  static AttributeTable zeros(const ChoiceHierarchy& h, std::size_t k, std::size_t q);
  double& dest_at(const ChoiceHierarchy& h, std::size_t i, std::size_t j, std::size_t k);
  double& mode_at(const ChoiceHierarchy& h, std::size_t i, std::size_t j, std::size_t m,
                  std::size_t q);
  void validate(const ChoiceHierarchy& h) const;
};

// Behavioural parameters of the hierarchical extended logit model.
struct ModelParameters {
  double theta_dest = 1.0;
  double theta_mode = 1.0;
  double theta_route = 1.0;
  std::vector<double> tau;  // per nest
  std::vector<double> beta_dest;
  std::vector<double> beta_mode;

  void validate(const ChoiceHierarchy& h) const;
};

// Fixed utilities V_ij = sum_k beta_k X^k_ij and V_ijm = sum_q beta_q X^q_ijm.
struct FixedUtilities {
  std::vector<double> dest;  // [od]
  std::vector<double> mode;  // [odm]

  static FixedUtilities from_attributes(const ChoiceHierarchy& h, const AttributeTable& x,
                                        std::span<const double> beta_dest,
                                        std::span<const double> beta_mode);
  static FixedUtilities zeros(const ChoiceHierarchy& h);
};

// All conditional probabilities of the hierarchy plus the satisfaction and
// inclusive values used on the way up.
struct HierProbabilities {
  std::vector<double> dest;              // p_{j/i}     [od]
  std::vector<double> nest;              // p_{M/ij}    [odn]
  std::vector<double> mode_in_nest;      // p_{m/M}     [odm]
  std::vector<double> route;             // p_{r/ijm}   [route]
  std::vector<double> satisfaction_od;   // S_ij        [od]
  std::vector<double> inclusive_value;   // IV_M        [odn]
  std::vector<double> satisfaction_odm;  // S_ijm       [odm]

  double mode_prob(const ChoiceHierarchy& h, std::size_t i, std::size_t j,
                   std::size_t m) const;
};

// Closed-form hierarchical extended logit: path-size logit routes, nested
// logit modes, multinomial logit destinations. Evaluated bottom-up.
HierProbabilities hier_extended_prob(const ChoiceHierarchy& h, const FixedUtilities& v,
                                     const ModelParameters& params,
                                     std::span<const double> route_costs);

struct TripTables {
  std::vector<double> od;          // T_ij    [od]
  std::vector<double> od_nest;     // T_ijM   [odn]
  std::vector<double> od_mode;     // T_ijm   [odm]
  std::vector<double> route;       // T_ijmr  [route]
  std::vector<double> link_flows;  // f^m_a   [link]
};

// Multiplies the conditional probabilities down the tree and loads route
// flows onto links.
TripTables assemble_trips(const ChoiceHierarchy& h, std::span<const double> origin_demand,
                          const HierProbabilities& p);

}  // namespace demandforge
