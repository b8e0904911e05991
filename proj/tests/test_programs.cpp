#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>
#include <sstream>

#include "demandforge/programs.hpp"
#include "demandforge/solver.hpp"
#include "support.hpp"

using namespace demandforge;
using testsupport::gradient_error;
using testsupport::random_interior;

namespace {

ModelParameters truth_params() {
  ModelParameters p;
  p.theta_dest = 0.8;
  p.theta_mode = 1.2;
  p.theta_route = 1.5;
  p.tau = {1.0, 0.6};
  p.beta_dest = {0.5, -0.3};
  p.beta_mode = {-0.4, 0.3};
  return p;
}

std::unique_ptr<HierarchicalProgram> second_stage(double alpha, std::vector<double> demand = {100.0, 80.0}) {
  auto h = testsupport::small_network(alpha);
  auto x = testsupport::small_attributes(*h, 9);
  auto p = truth_params();
  auto v = FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode);
  return build_second_stage(h, std::move(demand), v, p);
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace

TEST_SUITE("programs") {
  TEST_CASE("MaxSatisMNL optimum is the logit") {
    std::vector<double> v = {1.0, 0.0};
    auto prog = build_max_satis_mnl(v, 1.0);
    auto st = solve_simplex_program(*prog, {});
    REQUIRE(st.converged);
    CHECK(st.iterations < 200);
    auto p = mnl_prob(v, 1.0);
    CHECK(std::abs(st.x[0] - p[0]) < 1e-8);
    CHECK(st.x[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(st.objective == doctest::Approx(mnl_satisfaction(v, 1.0)).epsilon(1e-12));
    std::vector<double> eq = {0.4, 0.4, 0.4};
    auto u = solve_simplex_program(*build_max_satis_mnl(eq, 2.0), {});
    for (double x : u.x) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
  }

  TEST_CASE("MaxSatisNL optimum is the nested logit") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ModeTree tree;
    tree.nest_of = {0, 0, 1, 1, 1};
    tree.tau = {0.5, 0.8};
    tree.nest_names = {"a", "b"};
    for (int t = 0; t < 5; ++t) {
      std::vector<double> v(5);
      for (auto& x : v) x = u(rng);
      auto st = solve_simplex_program(*build_max_satis_nl(v, 1.3, tree), {});
      REQUIRE(st.converged);
      CHECK(max_diff(st.x, nl_prob(v, 1.3, tree)) < 1e-6);
    }
    ModeTree flat = ModeTree::single_nest(3, 1.0);
    std::vector<double> v = {0.2, -0.1, 0.5};
    auto st = solve_simplex_program(*build_max_satis_nl(v, 0.7, flat), {});
    CHECK(max_diff(st.x, mnl_prob(v, 0.7)) < 1e-6);
  }

  TEST_CASE("gradients match finite differences") {
    std::mt19937_64 rng(99);
    std::vector<std::unique_ptr<ConvexProgram>> progs;
    std::vector<double> v = {0.3, -0.2, 1.1, 0.0};
    progs.push_back(build_max_satis_mnl(v, 1.4));
    ModeTree tree;
    tree.nest_of = {0, 1, 1, 1};
    tree.tau = {1.0, 0.4};
    tree.nest_names = {"a", "b"};
    progs.push_back(build_max_satis_nl(v, 0.9, tree));
    progs.push_back(second_stage(0.15));
    {
      auto h = testsupport::small_network(0.15);
      auto x = testsupport::small_attributes(*h, 9);
      auto p = truth_params();
      LinkCountPenalty pen{10.0, 1e-3, std::vector<double>(h->link_count(), 20.0)};
      progs.push_back(std::make_unique<HierarchicalProgram>(
          h, std::vector<double>{100.0, 80.0},
          FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode),
          EntropyWeights::from_parameters(p), pen, "FirstStageVariant"));
      auto hm = make_destination_mode_hierarchy(2, 3, 3);
      FixedUtilities fu = FixedUtilities::zeros(*hm);
      for (auto& d : fu.dest) d = std::uniform_real_distribution<double>(-1, 1)(rng);
      for (auto& d : fu.mode) d = std::uniform_real_distribution<double>(-1, 1)(rng);
      progs.push_back(build_hier_mnl_variant(hm, {50.0, 70.0}, fu, 0.7, 1.3));
      progs.push_back(build_hier_mnl_variant2(2, 3, 3, {50.0, 70.0}, fu, 0.7, 1.3));
    }
    for (const auto& p : progs) {
      INFO(p->name());
      for (int t = 0; t < 10; ++t) {
        auto x = random_interior(*p, rng);
        CHECK(gradient_error(*p, x) < 1e-6);
      }
    }
  }

  TEST_CASE("SecondStage on a flat network is the closed form") {
    auto prog = second_stage(0.0);
    auto st = solve_simplex_program(*prog, {});
    REQUIRE(st.converged);
    const auto& h = prog->hierarchy();
    auto x = testsupport::small_attributes(h, 9);
    auto p = truth_params();
    auto v = FixedUtilities::from_attributes(h, x, p.beta_dest, p.beta_mode);
    auto cf = hier_extended_prob(h, v, p, h.route_costs(std::vector<double>(h.link_count(), 0.0)));
    auto got = prog->probabilities(st.x);
    CHECK(max_diff(got.dest, cf.dest) < 1e-6);
    CHECK(max_diff(got.nest, cf.nest) < 1e-6);
    CHECK(max_diff(got.mode_in_nest, cf.mode_in_nest) < 1e-6);
    CHECK(max_diff(got.route, cf.route) < 1e-6);
    auto t = prog->trips(st.x);
    double total = 0.0;
    for (double d : t.od) total += d;
    CHECK(total == doctest::Approx(180.0).epsilon(1e-12));
  }

  TEST_CASE("HierMNL variants reproduce the closed form") {
    auto h = make_destination_mode_hierarchy(3, 2, 3);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    FixedUtilities v = FixedUtilities::zeros(*h);
    for (auto& d : v.dest) d = u(rng);
    for (auto& d : v.mode) d = u(rng);
    std::vector<double> demand = {100.0, 150.0, 80.0};
    auto prog = build_hier_mnl_variant(h, demand, v, 0.6, 1.4);
    auto st = solve_simplex_program(*prog, {});
    REQUIRE(st.converged);
    ModelParameters par;
    par.theta_dest = 0.6;
    par.theta_mode = 1.4;
    par.tau = {1.0};
    auto cf = hier_extended_prob(*h, v, par, h->route_costs({}));
    auto got = prog->probabilities(st.x);
    CHECK(max_diff(got.dest, cf.dest) < 1e-6);
    CHECK(max_diff(got.mode_in_nest, cf.mode_in_nest) < 1e-6);

    auto p2 = build_hier_mnl_variant2(3, 2, 3, demand, v, 0.6, 1.4);
    CHECK_FALSE(p2->negative_coefficient());
    auto s2 = solve_simplex_program(*p2, {});
    REQUIRE(s2.converged);
    auto t = assemble_trips(*h, demand, cf);
    CHECK(max_diff(s2.x, t.od_mode) < 1e-5);
    auto od = p2->od_trips(s2.x);
    CHECK(max_diff(od, t.od) < 1e-5);
    CHECK(build_hier_mnl_variant2(3, 2, 3, demand, v, 1.5, 1.0)->negative_coefficient());
  }

  TEST_CASE("single-route network has no route entropy") {
    auto h = make_destination_mode_hierarchy(2, 2, 2);
    ModelParameters p;
    p.tau = {1.0};
    auto prog = build_second_stage(h, {10.0, 20.0}, FixedUtilities::zeros(*h), p);
    auto st = solve_simplex_program(*prog, {});
    auto pr = prog->probabilities(st.x);
    for (double r : pr.route) CHECK(r == 1.0);
  }

  TEST_CASE("large route dispersion approaches user equilibrium") {
    auto h = testsupport::two_route_toy();
    ModelParameters p;
    p.theta_route = 50.0;
    p.tau = {1.0};
    auto prog = build_second_stage(h, {60.0}, FixedUtilities::zeros(*h), p);
    SolverConfig cfg;
    cfg.max_inner = 100000;
    auto st = solve_simplex_program(*prog, cfg);
    REQUIRE(st.converged);
    auto t = prog->trips(st.x);
    auto c = h->route_costs(t.link_flows);
    REQUIRE(t.route[0] > 1.0);
    REQUIRE(t.route[1] > 1.0);
    CHECK(std::abs(c[0] - c[1]) / std::min(c[0], c[1]) < 0.01);
  }

  TEST_CASE("doubling demand never lowers total cost") {
    auto h = testsupport::two_route_toy();
    ModelParameters p;
    p.theta_route = 0.5;
    p.tau = {1.0};
    auto cost = [&](double o) {
      auto prog = build_second_stage(h, {o}, FixedUtilities::zeros(*h), p);
      auto t = prog->trips(solve_simplex_program(*prog, {}).x);
      auto c = h->route_costs(t.link_flows);
      return std::make_pair(t.route, t.route[0] * c[0] + t.route[1] * c[1]);
    };
    auto [r1, c1] = cost(40.0);
    auto [r2, c2] = cost(80.0);
    CHECK(c2 > 2.0 * c1);
    // the congested short route saturates, the share shifts to the long one
    CHECK(r2[1] / 80.0 > r1[1] / 40.0);
  }

  TEST_CASE("observation bundle validation names the sum") {
    auto h = testsupport::small_network(0.0);
    ObservationBundle obs;
    obs.origin_totals = {10.0, 10.0};
    obs.od = {5.0, 5.0, 4.0, 6.0};
    obs.od_mode.assign(12, 0.0);
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t m = 0; m < 3; ++m) obs.od_mode[o * 3 + m] = obs.od[o] / 3.0;
    CHECK(obs.complete_nest_totals(*h));
    CHECK_NOTHROW(obs.validate(*h));
    auto bad = obs;
    bad.od[0] = 6.0;
    CHECK_THROWS_WITH_AS(bad.validate(*h), doctest::Contains("O_i"), std::invalid_argument);
    bad = obs;
    bad.od_mode[1] *= 2.0;
    CHECK_THROWS_WITH_AS(bad.validate(*h), doctest::Contains("T_ijm"), std::invalid_argument);
    bad = obs;
    bad.od_mode[0] = 0.0;
    CHECK_THROWS_AS(bad.validate(*h), std::invalid_argument);
  }

  TEST_CASE("huber penalty") {
    CHECK(huber(0.0, 1e-3) == 0.0);
    CHECK(huber(2.0, 1e-3) == doctest::Approx(2.0 - 0.5e-3));
    CHECK(huber(-2.0, 1e-3) == doctest::Approx(2.0 - 0.5e-3));
    CHECK(huber(1e-4, 1e-3) == doctest::Approx(0.5 * 1e-8 / 1e-3));
  }

  TEST_CASE("dump lists dual labels") {
    auto prog = second_stage(0.15);
    std::ostringstream s;
    prog->dump(s);
    for (const char* label : {"lambda[0]", "mu[0,0]", "kappa[", "nu["})
      CHECK(s.str().find(label) != std::string::npos);
    auto h = testsupport::small_network(0.0);
    ObservationBundle obs;
    obs.origin_totals = {10.0, 10.0};
    obs.od = {5.0, 5.0, 4.0, 6.0};
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t m = 0; m < 3; ++m) obs.od_mode.push_back(obs.od[o] / 3.0);
    auto cal = build_first_stage(h, obs, testsupport::small_attributes(*h, 9), 1.5);
    std::ostringstream c;
    cal->dump(c);
    for (const char* label : {"1/theta_j", "1/theta_m", "tau_transit/theta_m", "beta_k[0]", "beta_q[1]"})
      CHECK(c.str().find(label) != std::string::npos);
    CHECK_FALSE(cal->warnings().empty());  // T_ijM filled in
  }

  TEST_CASE("invalid parameters are rejected") {
    auto h = testsupport::small_network(0.0);
    auto p = truth_params();
    p.theta_mode = 0.0;
    CHECK_THROWS(build_second_stage(h, {1.0, 1.0}, FixedUtilities::zeros(*h), p));
    p = truth_params();
    p.tau = {1.0, 1.5};
    CHECK_THROWS(build_second_stage(h, {1.0, 1.0}, FixedUtilities::zeros(*h), p));
  }
}
