// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "demandforge/distribution.hpp"
#include "demandforge/estimation.hpp"
#include "demandforge/io.hpp"
#include "demandforge/solver.hpp"
#include "support.hpp"

using namespace demandforge;
using testsupport::gradient_error;
using testsupport::random_interior;

namespace {

const std::string kFix = FIXTURE_DIR;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return a.size() == b.size() ? d : INFINITY;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    d = std::max(d, std::abs(a[k] - b[k]) / std::max(1.0, std::abs(b[k])));
  return a.size() == b.size() ? d : INFINITY;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> second_stage_flows(std::shared_ptr<const ChoiceHierarchy> h,
                                       const std::vector<double>& demand,
                                       const FixedUtilities& v, const ModelParameters& p,
                                       bool& converged) {
  auto prog = build_second_stage(h, demand, v, p);
  auto st = solve_simplex_program(*prog, {});
  converged = st.converged;
  return prog->trips(st.x).link_flows;
}

// --- 1 -----------------------------------------------------------------------
void nl_equivalence(Outcome& out) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> util(-2.0, 2.0), tau(0.2, 1.0), theta(0.5, 2.0);
  std::uniform_int_distribution<int> nests(1, 3);
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool all_converged = true;
  for (int inst = 0; inst < 50; ++inst) {
    int n = nests(rng);
    int alts = std::uniform_int_distribution<int>(n, 6)(rng);
    ModeTree tree;
    for (int m = 0; m < alts; ++m) tree.nest_of.push_back(m < n ? m : int(rng() % n));
    for (int b = 0; b < n; ++b) {
      tree.tau.push_back(tau(rng));
      tree.nest_names.push_back("n" + std::to_string(b));
    }
    std::vector<double> v(alts);
    for (auto& x : v) x = util(rng);
    double th = theta(rng);
    auto st = solve_simplex_program(*build_max_satis_nl(v, th, tree), {});
    all_converged &= st.converged;
    worst = std::max(worst, max_abs_diff(st.x, nl_prob(v, th, tree)));
  }
  double secs = seconds_since(t0);
  out.detail << "max |p - p_NL| = " << worst << ", " << secs << " s";
  out.require(all_converged, "solver convergence");
  out.require(worst <= 1e-6, "entrywise 1e-6");
  out.require(secs < 1.0, "runtime < 1 s");
}

// --- 2 -----------------------------------------------------------------------
void degenerate_nest(Outcome& out) {
  ModeTree tree;
  tree.nest_of = {0, 1, 1};
  tree.tau = {1.0, 0.0};
  tree.nest_names = {"car", "bus"};
  std::vector<double> v = {0.3, 0.3, 0.3};
  auto st = solve_simplex_program(*build_max_satis_nl(v, 1.0, tree), {});
  std::vector<double> want = {0.5, 0.25, 0.25};
  double d = max_abs_diff(st.x, want);
  out.detail << "shares (" << st.x[0] << ", " << st.x[1] << ", " << st.x[2] << "), max dev " << d;
  out.require(st.converged, "solver convergence");
  out.require(d <= 1e-6, "shares within 1e-6");
}

// --- 3 -----------------------------------------------------------------------
void hier_mnl_recovery(Outcome& out) {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool ok = true;
  // up to 4 origin and 4 destination zones; every shape leaves more
  // independent destination shares than destination-level parameters
  const std::size_t shapes[5][2] = {{2, 3}, {3, 3}, {3, 4}, {4, 3}, {4, 4}};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::size_t ni = shapes[(seed - 1) % 5][0];
    std::size_t nj = shapes[(seed - 1) % 5][1];
    auto rep = recover_and_compare(make_hier_mnl_scenario(ni, nj, seed), {});
    ok &= rep.calibration.converged;
    worst = std::max(worst, rep.max_relative_error);
  }
  double secs = seconds_since(t0);
  out.detail << "max relative parameter error " << worst << ", " << secs << " s";
  out.require(ok, "calibration convergence");
  out.require(worst <= 1e-3, "relative error 1e-3");
  out.require(secs < 10.0, "runtime < 10 s");
}

// --- 4 -----------------------------------------------------------------------
void network_round_trip(Outcome& out) {
  for (bool flat : {true, false}) {
    auto t0 = std::chrono::steady_clock::now();
    auto s = make_network_scenario(flat);
    auto rep = recover_and_compare(s, {});
    bool conv = false;
    auto v = FixedUtilities::from_attributes(*s.hierarchy, s.attributes,
                                             rep.recovered.beta_dest, rep.recovered.beta_mode);
    auto flows = second_stage_flows(s.hierarchy, s.demand, v, rep.recovered, conv);
    double flow_err = max_rel_diff(flows, rep.observations.link_flows);
    double secs = seconds_since(t0);
    double tol = flat ? 1e-3 : 1e-2;
    std::string tag = flat ? "flat" : "congested";
    out.detail << tag << ": param err " << rep.max_relative_error << ", flow err " << flow_err
               << ", " << secs << " s; ";
    out.require(rep.calibration.converged, tag + " calibration convergence");
    out.require(rep.max_relative_error <= tol, tag + " parameter tolerance");
    out.require(conv, tag + " forecast convergence");
    out.require(flow_err <= 1e-3, tag + " forecast flows 1e-3");
    out.require(secs < 60.0, tag + " runtime < 60 s");
  }
}

// --- 5 -----------------------------------------------------------------------
void gravity_equivalence(Outcome& out) {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> mass(1.0, 100.0), cost(1.0, 10.0), beta(0.05, 1.0);
  double worst = 0.0, margin = 0.0;
  int count = 0;
  for (std::size_t n : {2u, 3u, 5u, 8u, 12u, 20u})
    for (std::size_t m : {2u, 7u, 20u}) {
      std::vector<double> o(n), d(m);
      for (auto& x : o) x = mass(rng);
      for (auto& x : d) x = mass(rng);
      double so = 0.0, sd = 0.0;
      for (double x : o) so += x;
      for (double x : d) sd += x;
      for (auto& x : d) x *= so / sd;
      TripMatrix c(n, m);
      for (auto& x : c.values) x = cost(rng);
      double b = beta(rng);
      auto g = gravity_balance(o, d, c, b);
      auto mp = solve_most_probable(o, d, c, b);
      worst = std::max(worst, max_rel_diff(g.trips.values, mp.trips.values));
      for (const auto* t : {&g.trips, &mp.trips}) {
        margin = std::max(margin, max_rel_diff(t->row_sums(), o));
        margin = std::max(margin, max_rel_diff(t->col_sums(), d));
      }
      ++count;
    }
  out.detail << count << " instances, max entry diff " << worst << ", max margin err " << margin;
  out.require(worst <= 1e-6, "entrywise 1e-6");
  out.require(margin <= 1e-10, "margins 1e-10");
}

// --- 6 -----------------------------------------------------------------------
void entropy_mle_duality(Outcome& out) {
  std::vector<double> beta = {1.2, -0.7}, asc = {0.0, 0.4, -0.3};
  auto s = simulate_mnl_sample(2000, 3, beta, asc, 17);
  auto mle = fit_mnl_mle(s);
  auto prog = build_max_entropy_mnl(s.choices, s.attributes, 3, 1.0);
  auto r = solve_calibration(*prog, {});
  auto a = prog->alpha(r.multipliers);
  auto g = prog->asc(r.multipliers);
  double diff = std::max(max_abs_diff(a, mle.beta), max_abs_diff(g, mle.asc));
  auto grad = log_likelihood_gradient(s, a, g);
  double norm = 0.0;
  for (double x : grad) norm += x * x;
  norm = std::sqrt(norm);
  out.detail << "max |dual - MLE| " << diff << ", LL gradient norm " << norm;
  out.require(r.converged && mle.converged, "convergence");
  out.require(diff <= 1e-3, "estimates agree 1e-3");
  out.require(norm < 1e-4, "gradient norm 1e-4");
}

// --- 7 -----------------------------------------------------------------------
void oracle_consistency(Outcome& out) {
  struct Case {
    std::string name;
    std::shared_ptr<const ChoiceHierarchy> h;
    FixedUtilities v;
    ModelParameters p;
    std::vector<double> demand;
  };
  std::vector<Case> cases;
  for (double tr : {0.3, 1.0, 3.0}) {
    auto h = testsupport::two_route_toy();
    ModelParameters p;
    p.theta_route = tr;
    p.tau = {1.0};
    cases.push_back({"two-route " + io::format_number(tr), h, FixedUtilities::zeros(*h), p, {60.0}});
  }
  {
    auto h = testsupport::small_network(0.15);
    auto x = testsupport::small_attributes(*h, 9);
    ModelParameters p;
    p.theta_dest = 0.8;
    p.theta_mode = 1.2;
    p.theta_route = 1.5;
    p.tau = {1.0, 0.6};
    p.beta_dest = {0.5, -0.3};
    p.beta_mode = {-0.4, 0.3};
    cases.push_back({"small network", h,
                     FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode), p,
                     {100.0, 80.0}});
  }
  for (std::string f : {"network_scenario.txt", "future_scenario.txt", "variant_toy_scenario.txt"}) {
    auto sf = io::read_scenario(kFix + "/" + f);
    auto h = sf.hierarchy();
    auto p = sf.parameters();
    auto x = sf.attributes(*h);
    cases.push_back({f, h, FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode), p,
                     sf.demand()});
  }
  double worst_res = 0.0, worst_flow = 0.0;
  for (const auto& c : cases) {
    auto eq = fixed_point_oracle(*c.h, c.v, c.p, c.demand);
    out.require(eq.converged, c.name + " oracle convergence");
    double res = fixed_point_residual(*c.h, c.v, c.p, c.demand, eq.link_flows);
    worst_res = std::max(worst_res, res);
    bool conv = false;
    auto flows = second_stage_flows(c.h, c.demand, c.v, c.p, conv);
    out.require(conv, c.name + " solver convergence");
    double d = max_rel_diff(flows, eq.link_flows);
    worst_flow = std::max(worst_flow, d);
    if (d > 1e-6) out.require(false, c.name + " flows " + io::format_number(d));
  }
  for (bool flat : {true, false}) {
    auto eq = scenario_equilibrium(make_network_scenario(flat));
    out.require(eq.converged, "synthetic oracle convergence");
    worst_res = std::max(worst_res, eq.residual);
  }
  out.detail << cases.size() << " fixtures, max oracle residual " << worst_res
             << ", max SecondStage vs oracle " << worst_flow;
  out.require(worst_res < 1e-9, "oracle residual 1e-9");
}

// --- 8 -----------------------------------------------------------------------
double block_sum_error(const ConvexProgram& p, std::span<const double> x) {
  double e = 0.0;
  for (const auto& b : p.blocks()) {
    double s = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) s += x[b.offset + k];
    e = std::max(e, std::abs(s - b.mass) / std::max(1.0, b.mass));
  }
  return e;
}

double sum_error(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x;
  return std::abs(s - 1.0);
}

void numerical_hygiene(Outcome& out) {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::unique_ptr<ConvexProgram>> progs;
  std::vector<double> v = {0.3, -0.2, 1.1, 0.0};
  progs.push_back(build_max_satis_mnl(v, 1.4));
  ModeTree tree;
  tree.nest_of = {0, 1, 1, 1};
  tree.tau = {1.0, 0.4};
  tree.nest_names = {"a", "b"};
  progs.push_back(build_max_satis_nl(v, 0.9, tree));
  ModelParameters p;
  p.theta_dest = 0.8;
  p.theta_mode = 1.2;
  p.theta_route = 1.5;
  p.tau = {1.0, 0.6};
  p.beta_dest = {0.5, -0.3};
  p.beta_mode = {-0.4, 0.3};
  auto h = testsupport::small_network(0.15);
  auto fu = FixedUtilities::from_attributes(*h, testsupport::small_attributes(*h, 9),
                                            p.beta_dest, p.beta_mode);
  progs.push_back(build_second_stage(h, {100.0, 80.0}, fu, p));
  progs.push_back(std::make_unique<HierarchicalProgram>(
      h, std::vector<double>{100.0, 80.0}, fu, EntropyWeights::from_parameters(p),
      LinkCountPenalty{10.0, 1e-3, std::vector<double>(h->link_count(), 20.0)},
      "FirstStageVariant"));
  auto hm = make_destination_mode_hierarchy(2, 3, 3);
  auto fm = FixedUtilities::zeros(*hm);
  for (auto& d : fm.dest) d = u(rng);
  for (auto& d : fm.mode) d = u(rng);
  progs.push_back(build_hier_mnl_variant(hm, {50.0, 70.0}, fm, 0.7, 1.3));
  progs.push_back(build_hier_mnl_variant2(2, 3, 3, {50.0, 70.0}, fm, 0.7, 1.3));
  {
    auto s = simulate_mnl_sample(30, 3, std::vector<double>{0.8}, std::vector<double>{0, 0.2, -0.1},
                                 3);
    auto me = build_max_entropy_mnl(s.choices, s.attributes, 3, 1.0);
    progs.push_back(me->inner(std::vector<double>(me->multipliers().size(), 0.3)));
  }

  double grad_err = 0.0, sums = 0.0, unique = 0.0;
  for (const auto& prog : progs) {
    for (int t = 0; t < 10; ++t) {
      auto x = random_interior(*prog, rng);
      double e = gradient_error(*prog, x);
      grad_err = std::max(grad_err, e);
      if (e > 1e-6) out.require(false, prog->name() + " gradient");
    }
    auto a = solve_simplex_program(*prog, {}, random_interior(*prog, rng));
    auto b = solve_simplex_program(*prog, {}, random_interior(*prog, rng));
    out.require(a.converged && b.converged, prog->name() + " convergence");
    double d = max_rel_diff(a.x, b.x);  // trip-valued programs: relative to max(1, x)
    unique = std::max(unique, d);
    if (d > 1e-7) out.require(false, prog->name() + " uniqueness");
    sums = std::max({sums, block_sum_error(*prog, a.x), block_sum_error(*prog, b.x)});
  }

  // closed-form probability outputs
  for (int t = 0; t < 20; ++t) {
    std::vector<double> w(5), ps(5);
    for (auto& x : w) x = 3.0 * u(rng);
    for (auto& x : ps) x = 0.5 + 0.5 * std::abs(u(rng));
    ModeTree nt;
    nt.nest_of = {0, 0, 1, 1, 2};
    nt.tau = {0.3, 0.9, 1.0};
    nt.nest_names = {"a", "b", "c"};
    sums = std::max({sums, sum_error(mnl_prob(w, 1.7)), sum_error(nl_prob(w, 1.1, nt)),
                     sum_error(path_size_logit_prob(w, ps, 0.8)),
                     sum_error(multi_mode_split(w, 0.6))});
  }
  {
    auto costs = h->route_costs(std::vector<double>(h->link_count(), 25.0));
    auto hp = hier_extended_prob(*h, fu, p, costs);
    auto prog = build_second_stage(h, {100.0, 80.0}, fu, p);
    sums = std::max(sums, block_sum_error(*prog, prog->pack(hp)));
  }
  out.detail << progs.size() << " programs, max FD gradient err " << grad_err
             << ", max sum err " << sums << ", max start spread " << unique;
  out.require(sums <= 1e-12, "sums 1e-12");
}

// --- 9 -----------------------------------------------------------------------
void variant_behaviour(Outcome& out) {
  auto sf = io::read_scenario(kFix + "/variant_toy_scenario.txt");
  auto h = sf.hierarchy();
  auto obs = io::read_observations(kFix + "/variant_toy_observations.txt", *h);
  auto fbar = io::read_link_counts(kFix + "/variant_toy_link_counts.txt", h->link_count());
  auto x = sf.attributes(*h);
  double theta_r = sf.parameters().theta_route;

  auto plain = build_first_stage(h, obs, x, theta_r);
  auto zero = build_first_stage_variant(h, obs, x, theta_r, 0.0, fbar);
  auto ra = solve_calibration(*plain, {});
  auto rb = solve_calibration(*zero, {});
  bool identical = ra.multipliers == rb.multipliers && ra.inner.x == rb.inner.x;
  out.require(identical, "sigma 0 identical to FirstStage");

  std::vector<double> l1;
  for (double sigma : {0.0, 1.0, 10.0, 100.0}) {
    auto prog = build_first_stage_variant(h, obs, x, theta_r, sigma, fbar);
    auto r = solve_calibration(*prog, {});
    out.require(r.converged, "sigma " + io::format_number(sigma) + " convergence");
    auto inner = prog->inner(r.multipliers);
    auto t = dynamic_cast<const HierarchicalProgram&>(*inner).trips(r.inner.x);
    double s = 0.0;
    for (std::size_t a = 0; a < fbar.size(); ++a) s += std::abs(t.link_flows[a] - fbar[a]);
    l1.push_back(s);
  }
  out.detail << "sigma 0 identical: " << (identical ? "yes" : "no") << "; L1 over sigma {0,1,10,100}:";
  for (double s : l1) out.detail << " " << s;
  for (std::size_t k = 1; k < l1.size(); ++k)
    out.require(l1[k] <= l1[k - 1], "L1 nonincreasing");
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"NL program optimum equals closed-form nested logit", nl_equivalence},
      {"degenerate nest tau = 0 gives (0.5, 0.25, 0.25)", degenerate_nest},
      {"HierMNL dual recovery on 10 bundles", hier_mnl_recovery},
      {"network calibrate / forecast round trip", network_round_trip},
      {"gravity equals most-probable trip table", gravity_equivalence},
      {"MaxEntropy duals equal MLE", entropy_mle_duality},
      {"oracle self-consistency and SecondStage agreement", oracle_consistency},
      {"gradients, sums and uniqueness", numerical_hygiene},
      {"FirstStageVariant over sigma", variant_behaviour},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome out;
    auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[k].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    double secs = seconds_since(t0);
    failures += out.pass ? 0 : 1;
    std::cout << (out.pass ? "PASS" : "FAIL") << " " << (k + 1) << " " << criteria[k].first
              << " : " << out.detail.str() << " (" << secs << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
