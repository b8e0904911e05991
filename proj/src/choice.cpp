#include "demandforge/choice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace demandforge {

namespace {

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("log-sum-exp of an empty set");
  double top = *std::max_element(z.begin(), z.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

std::vector<double> softmax(std::span<const double> z) {
  double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) p[k] = std::exp(z[k] - lse);
  return p;
}

}  // namespace

std::vector<std::size_t> ModeTree::members(std::size_t nest) const {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < nest_of.size(); ++m)
    if (nest_of[m] == static_cast<int>(nest)) out.push_back(m);
  return out;
}

void ModeTree::validate() const {
  if (nest_of.empty()) throw std::invalid_argument("mode tree has no alternatives");
  std::vector<int> size(tau.size(), 0);
  for (int n : nest_of) {
    if (n < 0 || static_cast<std::size_t>(n) >= tau.size())
      throw std::invalid_argument("alternative assigned to unknown nest " + std::to_string(n));
    ++size[static_cast<std::size_t>(n)];
  }
  for (std::size_t n = 0; n < tau.size(); ++n) {
    if (size[n] == 0) throw std::invalid_argument("nest " + std::to_string(n) + " is empty");
    if (!(tau[n] >= 0.0 && tau[n] <= 1.0))
      throw std::invalid_argument("dissimilarity factor outside [0,1] for nest " +
                                  std::to_string(n));
  }
}

ModeTree ModeTree::single_nest(std::size_t alternatives, double tau) {
  ModeTree t;
  t.nest_of.assign(alternatives, 0);
  t.tau = {tau};
  t.nest_names = {"all"};
  return t;
}

ModeTree ModeTree::singletons(std::size_t alternatives) {
  ModeTree t;
  for (std::size_t m = 0; m < alternatives; ++m) {
    t.nest_of.push_back(static_cast<int>(m));
    t.tau.push_back(1.0);
    t.nest_names.push_back("n" + std::to_string(m));
  }
  return t;
}

std::vector<double> mnl_prob(std::span<const double> utilities, double theta) {
  if (utilities.empty()) throw std::invalid_argument("mnl_prob: empty alternative set");
  if (!(theta > 0.0)) throw std::invalid_argument("mnl_prob: theta must be positive");
  std::vector<double> z(utilities.begin(), utilities.end());
  for (double& v : z) v *= theta;
  return softmax(z);
}

double mnl_satisfaction(std::span<const double> utilities, double theta) {
  if (!(theta > 0.0)) throw std::invalid_argument("mnl_satisfaction: theta must be positive");
  std::vector<double> z(utilities.begin(), utilities.end());
  for (double& v : z) v *= theta;
  return log_sum_exp(z) / theta;
}

std::vector<double> nl_prob(std::span<const double> utilities, double theta,
                            const ModeTree& tree) {
  tree.validate();
  if (utilities.size() != tree.alternative_count())
    throw std::invalid_argument("nl_prob: utility count does not match tree");
  if (!(theta > 0.0)) throw std::invalid_argument("nl_prob: theta must be positive");
  std::vector<double> p(utilities.size());
  std::vector<double> iv(tree.nest_count());
  std::vector<std::vector<double>> within(tree.nest_count());
  for (std::size_t n = 0; n < tree.nest_count(); ++n) {
    auto mem = tree.members(n);
    double tau = tree.tau[n];
    if (mem.size() == 1) {
      iv[n] = theta * utilities[mem[0]];
      within[n] = {1.0};
      continue;
    }
    if (tau == 0.0)
      throw std::domain_error("nl_prob: tau = 0 has no closed form; use the entropy formulation");
    std::vector<double> z;
    for (std::size_t m : mem) z.push_back(theta * utilities[m] / tau);
    iv[n] = tau * log_sum_exp(z);
    within[n] = softmax(z);
  }
  auto pn = softmax(iv);
  for (std::size_t n = 0; n < tree.nest_count(); ++n) {
    auto mem = tree.members(n);
    for (std::size_t k = 0; k < mem.size(); ++k) p[mem[k]] = pn[n] * within[n][k];
  }
  return p;
}

std::vector<double> path_size_logit_prob(std::span<const double> utilities,
                                         std::span<const double> path_size, double theta_r) {
  if (utilities.empty()) throw std::invalid_argument("path_size_logit_prob: no routes");
  if (path_size.size() != utilities.size())
    throw std::invalid_argument("path_size_logit_prob: size mismatch");
  if (!(theta_r > 0.0)) throw std::invalid_argument("path_size_logit_prob: theta must be positive");
  std::vector<double> z(utilities.size());
  for (std::size_t r = 0; r < z.size(); ++r) {
    if (!(path_size[r] > 0.0 && path_size[r] <= 1.0 + 1e-12))
      throw std::invalid_argument("path-size factor outside (0,1]");
    z[r] = std::log(path_size[r]) + theta_r * utilities[r];
  }
  return softmax(z);
}

ChoiceHierarchy::ChoiceHierarchy(ModalNetwork network, std::vector<int> origins,
                                 std::vector<int> destinations, ModeTree tree,
                                 const RouteSet& routes)
    : network_(std::move(network)),
      origins_(std::move(origins)),
      destinations_(std::move(destinations)),
      tree_(std::move(tree)) {
  tree_.validate();
  if (origins_.empty() || destinations_.empty())
    throw std::invalid_argument("hierarchy needs at least one origin and one destination");
  if (tree_.alternative_count() != network_.mode_count())
    throw std::invalid_argument("mode tree does not cover the network's modes");
  route_offsets_.push_back(0);
  for (int i : origins_) {
    for (int j : destinations_) {
      for (std::size_t m = 0; m < mode_count(); ++m) {
        const auto& cs = routes.at(i, j, static_cast<int>(m));
        for (std::size_t r = 0; r < cs.routes.size(); ++r) {
          if (cs.routes[r].mode != static_cast<int>(m))
            throw std::invalid_argument("route mode does not match its choice set");
          routes_.push_back(cs.routes[r]);
          path_size_.push_back(cs.path_size[r]);
        }
        route_offsets_.push_back(routes_.size());
      }
    }
  }
}

std::vector<double> ChoiceHierarchy::route_costs(std::span<const double> link_flows) const {
  std::vector<double> g(routes_.size());
  for (std::size_t r = 0; r < routes_.size(); ++r)
    g[r] = demandforge::route_cost(network_, link_flows, routes_[r]);
  return g;
}

AttributeTable AttributeTable::zeros(const ChoiceHierarchy& h, std::size_t k, std::size_t q) {
  AttributeTable t;
  t.dest_attribute_count = k;
  t.mode_attribute_count = q;
  t.dest.assign(h.od_count() * k, 0.0);
  t.mode.assign(h.odm_count() * q, 0.0);
  return t;
}

double& AttributeTable::dest_at(const ChoiceHierarchy& h, std::size_t i, std::size_t j,
                                std::size_t k) {
  return dest.at(h.od(i, j) * dest_attribute_count + k);
}

double& AttributeTable::mode_at(const ChoiceHierarchy& h, std::size_t i, std::size_t j,
                                std::size_t m, std::size_t q) {
  return mode.at(h.odm(i, j, m) * mode_attribute_count + q);
}

void AttributeTable::validate(const ChoiceHierarchy& h) const {
  if (dest.size() != h.od_count() * dest_attribute_count ||
      mode.size() != h.odm_count() * mode_attribute_count)
    throw std::invalid_argument("attribute tables are not dense over the hierarchy");
}

void ModelParameters::validate(const ChoiceHierarchy& h) const {
  if (!(theta_dest > 0.0) || !(theta_mode > 0.0) || !(theta_route > 0.0))
    throw std::invalid_argument("scale parameters must be positive");
  if (tau.size() != h.nest_count())
    throw std::invalid_argument("one dissimilarity factor per nest required");
  for (double t : tau)
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("dissimilarity factor outside [0,1]");
}

FixedUtilities FixedUtilities::from_attributes(const ChoiceHierarchy& h, const AttributeTable& x,
                                               std::span<const double> beta_dest,
                                               std::span<const double> beta_mode) {
  x.validate(h);
  if (beta_dest.size() != x.dest_attribute_count || beta_mode.size() != x.mode_attribute_count)
    throw std::invalid_argument("coefficient count does not match attribute count");
  FixedUtilities v = zeros(h);
  for (std::size_t n = 0; n < h.od_count(); ++n)
    for (std::size_t k = 0; k < beta_dest.size(); ++k)
      v.dest[n] += beta_dest[k] * x.dest[n * beta_dest.size() + k];
  for (std::size_t n = 0; n < h.odm_count(); ++n)
    for (std::size_t q = 0; q < beta_mode.size(); ++q)
      v.mode[n] += beta_mode[q] * x.mode[n * beta_mode.size() + q];
  return v;
}

FixedUtilities FixedUtilities::zeros(const ChoiceHierarchy& h) {
  return {std::vector<double>(h.od_count(), 0.0), std::vector<double>(h.odm_count(), 0.0)};
}

double HierProbabilities::mode_prob(const ChoiceHierarchy& h, std::size_t i, std::size_t j,
                                    std::size_t m) const {
  auto nest = static_cast<std::size_t>(h.tree().nest_of[m]);
  return this->nest[h.odn(i, j, nest)] * mode_in_nest[h.odm(i, j, m)];
}

HierProbabilities hier_extended_prob(const ChoiceHierarchy& h, const FixedUtilities& v,
                                     const ModelParameters& params,
                                     std::span<const double> route_costs) {
  params.validate(h);
  if (route_costs.size() != h.route_count())
    throw std::invalid_argument("route cost vector does not match route count");
  if (v.dest.size() != h.od_count() || v.mode.size() != h.odm_count())
    throw std::invalid_argument("fixed utilities do not match hierarchy");
  const auto& tree = h.tree();
  HierProbabilities p;
  p.dest.assign(h.od_count(), 0.0);
  p.nest.assign(h.od_count() * h.nest_count(), 0.0);
  p.mode_in_nest.assign(h.odm_count(), 0.0);
  p.route.assign(h.route_count(), 0.0);
  p.satisfaction_od.assign(h.od_count(), 0.0);
  p.inclusive_value.assign(h.od_count() * h.nest_count(), 0.0);
  p.satisfaction_odm.assign(h.odm_count(), 0.0);

  std::vector<std::vector<std::size_t>> members(h.nest_count());
  for (std::size_t n = 0; n < h.nest_count(); ++n) members[n] = tree.members(n);

  const double tr = params.theta_route;
  const double tm = params.theta_mode;
  for (std::size_t i = 0; i < h.origin_count(); ++i) {
    std::vector<double> dest_z(h.destination_count());
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      // route level
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        std::vector<double> z;
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r)
          z.push_back(std::log(h.path_size(r)) - tr * route_costs[r]);
        double lse = log_sum_exp(z);
        p.satisfaction_odm[c] = lse / tr;
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r)
          p.route[r] = std::exp(z[r - h.route_begin(c)] - lse);
      }
      // mode level within nests
      std::vector<double> iv(h.nest_count());
      for (std::size_t n = 0; n < h.nest_count(); ++n) {
        const auto& mem = members[n];
        double tau = params.tau[n];
        if (mem.size() == 1) {
          std::size_t c = h.odm(i, j, mem[0]);
          iv[n] = tm * (v.mode[c] + p.satisfaction_odm[c]);
          p.mode_in_nest[c] = 1.0;
        } else {
          if (tau == 0.0)
            throw std::domain_error(
                "hier_extended_prob: tau = 0 has no closed form; use the entropy formulation");
          std::vector<double> z;
          for (std::size_t m : mem) {
            std::size_t c = h.odm(i, j, m);
            z.push_back(tm * (v.mode[c] + p.satisfaction_odm[c]) / tau);
          }
          iv[n] = tau * log_sum_exp(z);
          auto w = softmax(z);
          for (std::size_t k = 0; k < mem.size(); ++k) p.mode_in_nest[h.odm(i, j, mem[k])] = w[k];
        }
        p.inclusive_value[h.odn(i, j, n)] = iv[n];
      }
      // nest level
      double lse = log_sum_exp(iv);
      p.satisfaction_od[h.od(i, j)] = lse / tm;
      for (std::size_t n = 0; n < h.nest_count(); ++n)
        p.nest[h.odn(i, j, n)] = std::exp(iv[n] - lse);
      dest_z[j] = params.theta_dest * (v.dest[h.od(i, j)] + p.satisfaction_od[h.od(i, j)]);
    }
    auto pd = softmax(dest_z);
    for (std::size_t j = 0; j < h.destination_count(); ++j) p.dest[h.od(i, j)] = pd[j];
  }
  return p;
}

TripTables assemble_trips(const ChoiceHierarchy& h, std::span<const double> origin_demand,
                          const HierProbabilities& p) {
  if (origin_demand.size() != h.origin_count())
    throw std::invalid_argument("origin demand does not match hierarchy");
  TripTables t;
  t.od.assign(h.od_count(), 0.0);
  t.od_nest.assign(h.od_count() * h.nest_count(), 0.0);
  t.od_mode.assign(h.odm_count(), 0.0);
  t.route.assign(h.route_count(), 0.0);
  t.link_flows.assign(h.link_count(), 0.0);
  for (std::size_t i = 0; i < h.origin_count(); ++i) {
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      std::size_t o = h.od(i, j);
      t.od[o] = origin_demand[i] * p.dest[o];
      for (std::size_t n = 0; n < h.nest_count(); ++n)
        t.od_nest[h.odn(i, j, n)] = t.od[o] * p.nest[h.odn(i, j, n)];
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        auto n = static_cast<std::size_t>(h.tree().nest_of[m]);
        t.od_mode[c] = t.od_nest[h.odn(i, j, n)] * p.mode_in_nest[c];
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r) {
          t.route[r] = t.od_mode[c] * p.route[r];
          for (std::size_t a : h.route(r).links) t.link_flows[a] += t.route[r];
        }
      }
    }
  }
  return t;
}

}  // namespace demandforge
