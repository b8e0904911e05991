#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "demandforge/estimation.hpp"
#include "demandforge/solver.hpp"
#include "support.hpp"

using namespace demandforge;

namespace {

// Residual (p_0 - 1/2)^2 + 0.01 with p the logit of (m, 0): no root.
class NoRoot : public CalibrationProgram {
 public:
  NoRoot() {
    multipliers_ = {{"m", 2.0, false}};
    targets_ = {0.0};
  }
  std::string name() const override { return "NoRoot"; }
  std::unique_ptr<ConvexProgram> inner(std::span<const double> m) const override {
    std::vector<double> v = {m[0], 0.0};
    return build_max_satis_mnl(v, 1.0);
  }
  std::vector<double> residuals(const ConvexProgram&, std::span<const double> x) const override {
    return {(x[0] - 0.5) * (x[0] - 0.5) + 0.01};
  }
};

std::unique_ptr<HierarchicalProgram> congested_toy(double theta_r) {
  auto h = testsupport::two_route_toy();
  ModelParameters p;
  p.theta_route = theta_r;
  p.tau = {1.0};
  return build_second_stage(h, {60.0}, FixedUtilities::zeros(*h), p);
}

}  // namespace

TEST_SUITE("solver") {
  TEST_CASE("MaxSatisMNL converges fast with a small Lagrangian gradient") {
    std::vector<double> v = {0.4, -0.3, 1.2};
    auto prog = build_max_satis_mnl(v, 1.0);
    auto st = solve_simplex_program(*prog, {});
    REQUIRE(st.converged);
    CHECK(st.iterations < 200);
    auto k = check_kkt(*prog, st.x);
    CHECK(k.lagrangian_gradient_norm < 1e-8);
    auto p = mnl_prob(v, 1.0);
    for (int m = 0; m < 3; ++m) CHECK(std::abs(st.x[m] - p[m]) < 1e-8);
    // stationarity: dual equals the satisfaction for a unit-mass block
    CHECK(st.block_duals[0] == doctest::Approx(mnl_satisfaction(v, 1.0) - 1.0).epsilon(1e-7));
    auto d = simplex_duals(*prog, st);
    CHECK(d.block_labels[0] == "lambda[0]");
  }

  TEST_CASE("perturbed solution is detected") {
    std::vector<double> v = {0.4, -0.3, 1.2};
    auto prog = build_max_satis_mnl(v, 1.0);
    auto st = solve_simplex_program(*prog, {});
    auto x = st.x;
    x[0] += 1e-3;
    double s = x[0] + x[1] + x[2];
    for (auto& e : x) e /= s;
    CHECK(check_kkt(*prog, x).max_residual > 1e-4);
    CHECK(check_kkt(*prog, st.x).max_residual < 1e-8);
  }

  TEST_CASE("distinct starts reach the same optimum") {
    auto prog = congested_toy(0.8);
    std::mt19937_64 rng(6);
    auto a = solve_simplex_program(*prog, {}, testsupport::random_interior(*prog, rng));
    auto b = solve_simplex_program(*prog, {}, testsupport::random_interior(*prog, rng));
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    for (std::size_t k = 0; k < a.x.size(); ++k) CHECK(std::abs(a.x[k] - b.x[k]) < 1e-7);
  }

  TEST_CASE("iteration cap returns a flagged iterate") {
    auto prog = congested_toy(0.8);
    SolverConfig cfg;
    cfg.max_inner = 2;
    auto st = solve_simplex_program(*prog, cfg);
    CHECK_FALSE(st.converged);
    CHECK(st.iterations == 2);
    CHECK(st.x.size() == prog->dimension());
  }

  TEST_CASE("config validation") {
    SolverConfig cfg;
    cfg.inner_tol = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.max_outer = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }

  TEST_CASE("SecondStage matches the fixed-point oracle on the 2-route toy") {
    for (double tr : {0.3, 1.0, 3.0}) {
      auto prog = congested_toy(tr);
      auto st = solve_simplex_program(*prog, {});
      REQUIRE(st.converged);
      auto t = prog->trips(st.x);
      ModelParameters p;
      p.theta_route = tr;
      p.tau = {1.0};
      auto eq = fixed_point_oracle(prog->hierarchy(), FixedUtilities::zeros(prog->hierarchy()), p,
                                   std::vector<double>{60.0});
      REQUIRE(eq.converged);
      for (std::size_t a = 0; a < t.link_flows.size(); ++a)
        CHECK(std::abs(t.link_flows[a] - eq.link_flows[a]) <=
              1e-6 * std::max(1.0, eq.link_flows[a]));
    }
  }

  TEST_CASE("sigma zero variant equals FirstStage") {
    auto s = make_network_scenario(true);
    auto obs = generate_observations(s);
    auto a = build_first_stage(s.hierarchy, obs, s.attributes, s.parameters.theta_route);
    auto b = build_first_stage_variant(s.hierarchy, obs, s.attributes, s.parameters.theta_route,
                                       0.0, obs.link_flows);
    auto ra = solve_calibration(*a, {});
    auto rb = solve_calibration(*b, {});
    REQUIRE(ra.converged);
    REQUIRE(rb.multipliers.size() == ra.multipliers.size());
    for (std::size_t k = 0; k < ra.multipliers.size(); ++k)
      CHECK(rb.multipliers[k] == ra.multipliers[k]);
    CHECK(rb.inner.x == ra.inner.x);
  }

  TEST_CASE("uniform observations are flagged rank-deficient") {
    auto h = make_destination_mode_hierarchy(2, 3, 3);
    auto x = AttributeTable::zeros(*h, 1, 1);
    for (auto& v : x.dest) v = 1.0;
    for (auto& v : x.mode) v = 1.0;
    ObservationBundle obs;
    obs.origin_totals = {30.0, 30.0};
    obs.od.assign(6, 10.0);
    obs.od_mode.assign(18, 10.0 / 3.0);
    auto prog = build_hier_mnl(h, obs, x);
    auto r = solve_calibration(*prog, {});
    CHECK_FALSE(r.rank_deficient.empty());
    bool warned = false;
    for (const auto& w : r.warnings) warned |= w.find("rank-deficient") != std::string::npos;
    CHECK(warned);
    REQUIRE(r.parameters);
    CHECK(r.parameters->beta_dest[0] == 0.0);
    CHECK(r.parameters->beta_mode[0] == 0.0);
  }

  TEST_CASE("outer divergence raises with the residual trace") {
    NoRoot prog;
    try {
      auto r = solve_calibration(prog, {});
      CHECK_FALSE(r.converged);
    } catch (const CalibrationDiverged& e) {
      CHECK(e.trace().size() >= 10);
      CHECK(std::string(e.what()).find("trace") != std::string::npos);
    }
  }

  TEST_CASE("MaxEntropy reproduces observed shares") {
    std::vector<double> beta = {0.8}, asc = {0.0, 0.4, -0.3};
    auto s = simulate_mnl_sample(400, 3, beta, asc, 5);
    // a second attribute identical across alternatives carries no information
    for (auto& ind : s.attributes)
      for (auto& alt : ind) alt.push_back(0.7);
    auto prog = build_max_entropy_mnl(s.choices, s.attributes, 3, 1.0);
    auto r = solve_calibration(*prog, {});
    REQUIRE(r.converged);
    CHECK(r.rank_deficient.size() == 1);
    std::vector<double> count(3, 0.0), pred(3, 0.0);
    for (std::size_t c : s.choices) count[c] += 1.0;
    for (std::size_t h = 0; h < s.choices.size(); ++h)
      for (std::size_t m = 0; m < 3; ++m) pred[m] += r.inner.x[h * 3 + m];
    for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(pred[m] - count[m]) < 1e-8 * 400);
  }
}
