#include "demandforge/estimation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace demandforge {

std::vector<double> reassemble_flows(const ChoiceHierarchy& h, const FixedUtilities& v,
                                     const ModelParameters& params,
                                     std::span<const double> demand,
                                     std::span<const double> flows) {
  auto costs = h.route_costs(flows);
  auto p = hier_extended_prob(h, v, params, costs);
  return assemble_trips(h, demand, p).link_flows;
}

namespace {

double flow_residual(std::span<const double> y, std::span<const double> f) {
  double r = 0.0;
  for (std::size_t a = 0; a < f.size(); ++a)
    r = std::max(r, std::abs(y[a] - f[a]) / std::max(1.0, f[a]));
  return r;
}

}  // namespace

double fixed_point_residual(const ChoiceHierarchy& h, const FixedUtilities& v,
                            const ModelParameters& params, std::span<const double> demand,
                            std::span<const double> flows) {
  auto y = reassemble_flows(h, v, params, demand, flows);
  return flow_residual(y, flows);
}

EquilibriumState fixed_point_oracle(const ChoiceHierarchy& h, const FixedUtilities& v,
                                    const ModelParameters& params,
                                    std::span<const double> demand, const OracleConfig& config) {
  if (!(config.tol > 0.0) || config.max_iter < 1 || !(config.sra_increase > 0.0) ||
      !(config.sra_decrease > 0.0))
    throw std::invalid_argument("oracle: tolerances, step increments and max_iter must be positive");
  params.validate(h);
  EquilibriumState st;
  std::vector<double> f(h.link_count(), 0.0);
  double denom = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  int k = 0;
  for (;; ++k) {
    auto y = reassemble_flows(h, v, params, demand, f);
    double res = flow_residual(y, f);
    st.residual = res;
    if (res < config.tol) {
      st.converged = true;
      break;
    }
    if (k >= config.max_iter) break;
    double step;
    if (config.rule == AveragingRule::Msa) {
      step = 1.0 / (k + 1);
    } else {
      if (k > 0) denom += res >= prev ? config.sra_increase : config.sra_decrease;
      step = 1.0 / denom;
    }
    prev = res;
    for (std::size_t a = 0; a < f.size(); ++a) f[a] += step * (y[a] - f[a]);
  }
  st.iterations = k;
  st.link_flows = f;
  st.route_costs = h.route_costs(f);
  st.probabilities = hier_extended_prob(h, v, params, st.route_costs);
  st.trips = assemble_trips(h, demand, st.probabilities);
  return st;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const ChoiceHierarchy> make_hierarchy(const ModalNetwork& network,
                                                      std::vector<int> origins,
                                                      std::vector<int> destinations,
                                                      const ModeTree& tree, std::size_t k) {
  RouteSet rs = RouteSet::enumerate(network, origins, destinations, k);
  return std::make_shared<const ChoiceHierarchy>(network, std::move(origins),
                                                 std::move(destinations), tree, rs);
}

SyntheticScenario make_network_scenario(bool flat, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> len(1.0, 3.0), cap(30.0, 60.0), unit(-1.0, 1.0),
      pos(0.0, 2.0);
  const std::vector<int> origins{1, 2, 3}, dests{4, 5, 6}, hubs{7, 8};
  const double time_per_km[] = {1.0, 1.6, 0.8};
  const double price_per_km[] = {0.2, 0.05, 0.1};
  std::vector<Link> links;
  for (int m = 0; m < 3; ++m) {
    auto add = [&](int a, int b) {
      Link l;
      l.mode = m;
      l.tail = a;
      l.head = b;
      l.length = len(rng);
      l.free_flow_time = l.length * time_per_km[m];
      l.capacity = cap(rng);
      l.alpha = flat ? 0.0 : 0.15;
      l.beta = 4.0;
      l.money_cost = l.length * price_per_km[m];
      links.push_back(l);
    };
    for (int o : origins)
      for (int hb : hubs) add(o, hb);
    for (int hb : hubs)
      for (int d : dests) add(hb, d);
    add(7, 8);
    add(8, 7);
  }
  ModalNetwork net({"car", "bus", "rail"}, links, 0.5);
  ModeTree tree;
  tree.nest_of = {0, 1, 1};
  tree.tau = {1.0, 0.6};
  tree.nest_names = {"car", "transit"};

  SyntheticScenario s;
  s.name = flat ? "flat" : "congested";
  s.hierarchy = make_hierarchy(net, origins, dests, tree, 3);
  const auto& h = *s.hierarchy;
  s.attributes = AttributeTable::zeros(h, 2, 2);
  std::vector<double> size(dests.size());
  for (auto& v : size) v = pos(rng);
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      s.attributes.dest_at(h, i, j, 0) = size[j];
      s.attributes.dest_at(h, i, j, 1) = unit(rng);
      for (std::size_t m = 0; m < 3; ++m) {
        s.attributes.mode_at(h, i, j, m, 0) = m == 0 ? 0.0 : 1.0;
        s.attributes.mode_at(h, i, j, m, 1) = unit(rng);
      }
    }
  s.parameters.theta_dest = 0.8;
  s.parameters.theta_mode = 1.2;
  s.parameters.theta_route = 1.5;
  s.parameters.tau = {1.0, 0.6};
  s.parameters.beta_dest = {0.5, -0.3};
  s.parameters.beta_mode = {-0.4, 0.3};
  s.demand = {300.0, 200.0, 250.0};
  return s;
}

SyntheticScenario make_hier_mnl_scenario(std::size_t origins, std::size_t destinations,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), cost(1.0, 4.0), mag(0.2, 0.8),
      dem(100.0, 300.0), tj(0.6, 1.0), tm(1.0, 1.5);
  SyntheticScenario s;
  s.name = "hiermnl-" + std::to_string(seed);
  s.hierarchy = make_destination_mode_hierarchy(origins, destinations, 3);
  const auto& h = *s.hierarchy;
  s.attributes = AttributeTable::zeros(h, 2, 2);
  for (std::size_t i = 0; i < origins; ++i)
    for (std::size_t j = 0; j < destinations; ++j) {
      s.attributes.dest_at(h, i, j, 0) = unit(rng);
      s.attributes.dest_at(h, i, j, 1) = unit(rng);
      for (std::size_t m = 0; m < 3; ++m) {
        s.attributes.mode_at(h, i, j, m, 0) = cost(rng);
        s.attributes.mode_at(h, i, j, m, 1) = unit(rng);
      }
    }
  auto sign = [&](double v) { return unit(rng) < 0.0 ? -v : v; };
  s.parameters.theta_dest = tj(rng);
  s.parameters.theta_mode = tm(rng);
  s.parameters.theta_route = 1.0;
  s.parameters.tau = {1.0};
  s.parameters.beta_dest = {sign(mag(rng)), sign(mag(rng))};
  s.parameters.beta_mode = {-1.0, sign(mag(rng))};
  s.fixed_mode_coefficients = {{0, -1.0}};
  s.demand.resize(origins);
  for (auto& o : s.demand) o = dem(rng);
  return s;
}

EquilibriumState scenario_equilibrium(const SyntheticScenario& s, const OracleConfig& config) {
  auto v = FixedUtilities::from_attributes(*s.hierarchy, s.attributes, s.parameters.beta_dest,
                                           s.parameters.beta_mode);
  return fixed_point_oracle(*s.hierarchy, v, s.parameters, s.demand, config);
}

ObservationBundle generate_observations(const SyntheticScenario& s, const OracleConfig& config) {
  auto eq = scenario_equilibrium(s, config);
  if (!eq.converged) throw std::runtime_error("equilibrium oracle did not converge");
  ObservationBundle obs;
  obs.origin_totals = s.demand;
  obs.od = eq.trips.od;
  obs.od_nest = eq.trips.od_nest;
  obs.od_mode = eq.trips.od_mode;
  obs.link_flows = eq.link_flows;
  obs.validate(*s.hierarchy);
  return obs;
}

ObservationBundle perturb_observations(const ObservationBundle& obs, const ChoiceHierarchy& h,
                                       double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ObservationBundle out = obs;
  for (auto& t : out.od_mode) t *= 1.0 + noise * u(rng);
  const std::size_t nn = h.nest_count(), nm = h.mode_count();
  out.od_nest.assign(h.od_count() * nn, 0.0);
  out.od.assign(h.od_count(), 0.0);
  out.origin_totals.assign(h.origin_count(), 0.0);
  for (std::size_t c = 0; c < h.odm_count(); ++c) {
    std::size_t o = c / nm;
    out.od_nest[o * nn + h.tree().nest_of[c % nm]] += out.od_mode[c];
    out.od[o] += out.od_mode[c];
  }
  for (std::size_t o = 0; o < h.od_count(); ++o)
    out.origin_totals[o / h.destination_count()] += out.od[o];
  return out;
}

RecoveryReport recover_from(const SyntheticScenario& s, const ObservationBundle& obs,
                            const SolverConfig& config) {
  RecoveryReport rep;
  rep.observations = obs;
  rep.truth = s.parameters;
  const auto& h = *s.hierarchy;
  std::unique_ptr<HierarchicalCalibration> cal;
  if (h.link_count() == 0 && h.nest_count() == 1)
    cal = build_hier_mnl(s.hierarchy, obs, s.attributes, s.fixed_mode_coefficients);
  else
    cal = std::make_unique<HierarchicalCalibration>(
        HierarchicalCalibration::Kind::FirstStage, s.hierarchy, obs, s.attributes,
        s.parameters.theta_route, LinkCountPenalty{}, s.fixed_mode_coefficients);
  rep.calibration = solve_calibration(*cal, config);
  rep.recovered = *rep.calibration.parameters;

  auto push = [&](std::string n, double t, double e) {
    rep.names.push_back(std::move(n));
    rep.truth_values.push_back(t);
    rep.recovered_values.push_back(e);
    double r = std::abs(e - t) / std::max(std::abs(t), 1e-12);
    rep.relative_errors.push_back(r);
    rep.max_relative_error = std::max(rep.max_relative_error, r);
  };
  push("theta_dest", rep.truth.theta_dest, rep.recovered.theta_dest);
  push("theta_mode", rep.truth.theta_mode, rep.recovered.theta_mode);
  for (std::size_t n : cal->free_nests())
    push("tau_" + h.tree().nest_names[n], rep.truth.tau[n], rep.recovered.tau[n]);
  for (std::size_t k = 0; k < rep.truth.beta_dest.size(); ++k)
    push("beta_dest[" + std::to_string(k) + "]", rep.truth.beta_dest[k],
         rep.recovered.beta_dest[k]);
  for (std::size_t q = 0; q < rep.truth.beta_mode.size(); ++q) {
    bool fixed = std::any_of(s.fixed_mode_coefficients.begin(), s.fixed_mode_coefficients.end(),
                             [q](const auto& f) { return f.first == q; });
    if (!fixed)
      push("beta_mode[" + std::to_string(q) + "]", rep.truth.beta_mode[q],
           rep.recovered.beta_mode[q]);
  }
  return rep;
}

RecoveryReport recover_and_compare(const SyntheticScenario& s, const SolverConfig& config,
                                   const OracleConfig& oracle) {
  return recover_from(s, generate_observations(s, oracle), config);
}

// ---------------------------------------------------------------------------

MnlSample simulate_mnl_sample(std::size_t individuals, std::size_t alternatives,
                              std::span<const double> beta, std::span<const double> asc,
                              std::uint64_t seed, double theta) {
  if (asc.size() != alternatives) throw std::invalid_argument("one ASC per alternative required");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pick(0.0, 1.0);
  MnlSample s;
  s.alternatives = alternatives;
  s.attributes.resize(individuals);
  s.choices.resize(individuals);
  for (std::size_t h = 0; h < individuals; ++h) {
    s.attributes[h].assign(alternatives, std::vector<double>(beta.size()));
    std::vector<double> v(alternatives);
    for (std::size_t m = 0; m < alternatives; ++m) {
      double x = asc[m];
      for (std::size_t k = 0; k < beta.size(); ++k) {
        s.attributes[h][m][k] = u(rng);
        x += beta[k] * s.attributes[h][m][k];
      }
      v[m] = x;
    }
    auto p = mnl_prob(v, theta);
    double r = pick(rng), acc = 0.0;
    std::size_t c = alternatives - 1;
    for (std::size_t m = 0; m < alternatives; ++m) {
      acc += p[m];
      if (r < acc) {
        c = m;
        break;
      }
    }
    s.choices[h] = c;
  }
  return s;
}

namespace {

std::vector<double> utilities_of(const MnlSample& s, std::size_t h, std::span<const double> beta,
                                 std::span<const double> asc) {
  std::vector<double> v(s.alternatives);
  for (std::size_t m = 0; m < s.alternatives; ++m) {
    double x = asc[m];
    for (std::size_t k = 0; k < beta.size(); ++k) x += beta[k] * s.attributes[h][m][k];
    v[m] = x;
  }
  return v;
}

// Feature vector of alternative m: indicator for non-reference ASCs, then X.
void features(const MnlSample& s, std::size_t h, std::size_t m, std::size_t reference,
              Eigen::VectorXd& z) {
  std::size_t na = s.alternatives - 1, nk = s.attribute_count();
  z.setZero(static_cast<Eigen::Index>(na + nk));
  if (m != reference) z(static_cast<Eigen::Index>(m < reference ? m : m - 1)) = 1.0;
  for (std::size_t k = 0; k < nk; ++k) z(static_cast<Eigen::Index>(na + k)) = s.attributes[h][m][k];
}

void ll_derivatives(const MnlSample& s, std::span<const double> beta, std::span<const double> asc,
                    double theta, std::size_t reference, Eigen::VectorXd& g, Eigen::MatrixXd* hess) {
  std::size_t dim = s.alternatives - 1 + s.attribute_count();
  auto d = static_cast<Eigen::Index>(dim);
  g.setZero(d);
  if (hess) hess->setZero(d, d);
  Eigen::VectorXd z, zbar;
  Eigen::MatrixXd zz;
  for (std::size_t h = 0; h < s.choices.size(); ++h) {
    auto p = mnl_prob(utilities_of(s, h, beta, asc), theta);
    zbar.setZero(d);
    if (hess) zz.setZero(d, d);
    for (std::size_t m = 0; m < s.alternatives; ++m) {
      features(s, h, m, reference, z);
      zbar += p[m] * z;
      if (hess) zz += p[m] * z * z.transpose();
    }
    features(s, h, s.choices[h], reference, z);
    g += theta * (z - zbar);
    if (hess) *hess -= theta * theta * (zz - zbar * zbar.transpose());
  }
}

}  // namespace

double log_likelihood_mnl(const MnlSample& s, std::span<const double> beta,
                          std::span<const double> asc, double theta) {
  double ll = 0.0;
  for (std::size_t h = 0; h < s.choices.size(); ++h) {
    auto v = utilities_of(s, h, beta, asc);
    ll += theta * v[s.choices[h]] - theta * mnl_satisfaction(v, theta);
  }
  return ll;
}

std::vector<double> log_likelihood_gradient(const MnlSample& s, std::span<const double> beta,
                                            std::span<const double> asc, double theta,
                                            std::size_t reference) {
  Eigen::VectorXd g;
  ll_derivatives(s, beta, asc, theta, reference, g, nullptr);
  return {g.data(), g.data() + g.size()};
}

MleResult fit_mnl_mle(const MnlSample& s, double theta, std::size_t reference, double tol,
                      int max_iter) {
  const std::size_t na = s.alternatives - 1, nk = s.attribute_count();
  std::vector<double> asc(s.alternatives, 0.0), beta(nk, 0.0);
  auto unpack = [&](const Eigen::VectorXd& z, std::vector<double>& a, std::vector<double>& b) {
    for (std::size_t m = 0, k = 0; m < s.alternatives; ++m)
      a[m] = m == reference ? 0.0 : z(static_cast<Eigen::Index>(k++));
    for (std::size_t k = 0; k < nk; ++k) b[k] = z(static_cast<Eigen::Index>(na + k));
  };
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(na + nk)), g;
  Eigen::MatrixXd hess;
  MleResult r;
  double ll = log_likelihood_mnl(s, beta, asc, theta);
  int it = 0;
  for (; it < max_iter; ++it) {
    ll_derivatives(s, beta, asc, theta, reference, g, &hess);
    if (g.norm() < tol) {
      r.converged = true;
      break;
    }
    Eigen::VectorXd step = (-hess).ldlt().solve(g);
    double t = 1.0;
    bool ok = false;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      Eigen::VectorXd zt = z + t * step;
      std::vector<double> a2(asc), b2(beta);
      unpack(zt, a2, b2);
      double l2 = log_likelihood_mnl(s, b2, a2, theta);
      if (l2 >= ll - 1e-12 * std::abs(ll)) {
        z = zt;
        asc = a2;
        beta = b2;
        ll = l2;
        ok = true;
        break;
      }
    }
    if (!ok) break;
  }
  ll_derivatives(s, beta, asc, theta, reference, g, nullptr);
  r.asc = asc;
  r.beta = beta;
  r.log_likelihood = ll;
  r.gradient_norm = g.norm();
  r.iterations = it;
  if (r.gradient_norm < tol) r.converged = true;
  return r;
}

}  // namespace demandforge
