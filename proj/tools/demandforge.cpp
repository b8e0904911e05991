// demandforge: batch command-line front end.
//
//   distribute  trip distribution (entropy or gravity)
//   choice      closed-form hierarchical probabilities at free-flow costs
//   paths       route enumeration
//   calibrate   parameter estimation from observed tables
//   forecast    future trips with fixed parameters
//   synth       synthetic observations from a scenario with parameters
//   check       KKT report on a saved solution
//
// Exit codes: 0 success, 2 input error, 3 non-convergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "demandforge/choice.hpp"
#include "demandforge/distribution.hpp"
#include "demandforge/estimation.hpp"
#include "demandforge/io.hpp"
#include "demandforge/programs.hpp"
#include "demandforge/solver.hpp"

namespace fs = std::filesystem;
using namespace demandforge;
using io::format_number;
using io::InputError;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kNonConvergence = 3;

struct Common {
  double tol_inner = 1e-8;
  double tol_outer = 1e-6;
  int max_iter = 0;  // 0: keep defaults
  std::size_t k_routes = 0;
  double sigma = 0.0;
  std::optional<double> theta_r;
  double huber = 1e-3;
  std::string out = ".";
};

struct Logging {
  bool info = false, debug = false;
  Logging() {
    if (const char* v = std::getenv("DEMANDFORGE_LOG")) {
      std::string s(v);
      debug = s == "debug";
      info = debug || s == "info";
    }
  }
};

SolverConfig solver_config(const Common& c, const Logging& log) {
  SolverConfig cfg;
  cfg.inner_tol = c.tol_inner;
  cfg.outer_tol = c.tol_outer;
  cfg.huber_width = c.huber;
  if (c.max_iter > 0) {
    cfg.max_inner = c.max_iter;
    cfg.max_outer = c.max_iter;
  }
  if (log.info) cfg.outer_log = &std::cerr;
  if (log.debug) cfg.log = &std::cerr;
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) throw InputError("cannot create output directory " + c.out);
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw InputError("cannot write " + p.string());
  return f;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw InputError(std::string(what) + " file not found: " + path);
}

std::optional<std::size_t> k_override(const Common& c) {
  if (c.k_routes == 0) return std::nullopt;
  return c.k_routes;
}

// --- distribute --------------------------------------------------------------

struct DistributeArgs {
  std::string zones, costs, method = "entropy", mode;
  std::optional<double> beta, budget;
};

int run_distribute(const DistributeArgs& a, const Common& c) {
  require_file(a.zones, "zone");
  require_file(a.costs, "cost");
  auto zones = io::read_zones(a.zones);
  if (!zones.balanced())
    throw InputError("unbalanced margins: sum of productions differs from sum of attractions");
  auto costs = io::read_od_costs(a.costs, zones);
  std::size_t m = 0;
  if (!a.mode.empty()) {
    auto it = std::find(costs.modes.begin(), costs.modes.end(), a.mode);
    if (it == costs.modes.end()) throw InputError("no costs for mode " + a.mode);
    m = static_cast<std::size_t>(it - costs.modes.begin());
  } else if (costs.modes.size() > 1) {
    throw InputError("cost file has several modes; pick one with --mode");
  }
  if (a.beta.has_value() == a.budget.has_value())
    throw InputError("give exactly one of --beta and --budget");

  auto dir = out_dir(c);
  auto trips = open_out(dir / "trips.csv");
  auto duals = open_out(dir / "duals.txt");
  try {
    if (a.method == "gravity") {
      if (!a.beta) throw InputError("gravity needs --beta");
      auto g = gravity_balance(zones.productions, zones.attractions, costs.costs[m], *a.beta);
      io::write_trip_matrix(trips, zones, g.trips);
      duals << "method gravity\nbeta " << format_number(*a.beta) << '\n';
      for (std::size_t i = 0; i < zones.size(); ++i)
        duals << "A " << zones.zone_ids[i] << ' ' << format_number(g.balancing_origin[i]) << '\n';
      for (std::size_t j = 0; j < zones.size(); ++j)
        duals << "B " << zones.zone_ids[j] << ' ' << format_number(g.balancing_destination[j])
              << '\n';
      duals << "iterations " << g.iterations << '\n';
    } else if (a.method == "entropy") {
      auto r = a.beta ? solve_most_probable(zones.productions, zones.attractions, costs.costs[m],
                                            *a.beta)
                      : solve_most_probable_budget(zones.productions, zones.attractions,
                                                   costs.costs[m], *a.budget);
      io::write_trip_matrix(trips, zones, r.trips);
      duals << "method entropy\nbeta " << format_number(r.beta) << '\n';
      for (std::size_t i = 0; i < zones.size(); ++i)
        duals << "lambda " << zones.zone_ids[i] << ' ' << format_number(r.origin_duals[i]) << '\n';
      for (std::size_t j = 0; j < zones.size(); ++j)
        duals << "mu " << zones.zone_ids[j] << ' ' << format_number(r.destination_duals[j])
              << '\n';
      duals << "total_cost " << format_number(r.total_cost) << '\n';
    } else {
      throw InputError("unknown method " + a.method);
    }
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return kOk;
}

// --- choice ------------------------------------------------------------------

struct ScenarioArgs {
  std::string scenario, params, observations, link_counts, solution;
  std::string model = "hier";
  double noise = 0.0;
  std::uint64_t seed = 1;
  double check_tol = 1e-6;
};

io::ScenarioFile load_scenario(const std::string& path) {
  require_file(path, "scenario");
  return io::read_scenario(path);
}

// Parameters from --params if given, else from the scenario file.
ModelParameters load_parameters(const ScenarioArgs& a, const io::ScenarioFile& sf,
                                const ChoiceHierarchy& h, const AttributeTable& x,
                                const Common& c, bool* converged = nullptr) {
  ModelParameters p;
  if (!a.params.empty()) {
    require_file(a.params, "parameter");
    auto pf = io::read_parameters(a.params, h, x.dest_attribute_count, x.mode_attribute_count);
    p = pf.parameters;
    if (converged) *converged = pf.converged;
  } else {
    p = sf.parameters();
    p.beta_dest.resize(x.dest_attribute_count, 0.0);
    p.beta_mode.resize(x.mode_attribute_count, 0.0);
    if (converged) *converged = true;
  }
  if (c.theta_r) p.theta_route = *c.theta_r;
  try {
    p.validate(h);
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
  return p;
}

int run_choice(const ScenarioArgs& a, const Common& c, const Logging& log) {
  auto sf = load_scenario(a.scenario);
  auto h = sf.hierarchy(k_override(c));
  auto x = sf.attributes(*h);
  auto p = load_parameters(a, sf, *h, x, c);
  auto v = FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode);
  auto demand = sf.demand();
  auto dir = out_dir(c);

  if (a.model == "variant2") {
    auto prog = build_hier_mnl_variant2(h->origin_count(), h->destination_count(),
                                        h->mode_count(), demand, v, p.theta_dest, p.theta_mode);
    if (prog->negative_coefficient())
      std::cerr << "warning: destination entropy coefficient 1/theta_j - 1/theta_m = "
                << format_number(prog->dest_coefficient())
                << " is negative (theta_j > theta_m); the program is not concave\n";
    auto st = solve_simplex_program(*prog, solver_config(c, log));
    auto f = open_out(dir / "od_mode.csv");
    f << "i,j,mode,T\n";
    const auto& names = h->network().mode_names();
    for (std::size_t i = 0; i < h->origin_count(); ++i)
      for (std::size_t j = 0; j < h->destination_count(); ++j)
        for (std::size_t m = 0; m < h->mode_count(); ++m)
          f << h->origins()[i] << ',' << h->destinations()[j] << ',' << names[m] << ','
            << format_number(st.x[(i * h->destination_count() + j) * h->mode_count() + m])
            << '\n';
    return st.converged ? kOk : kNonConvergence;
  }
  if (a.model != "hier") throw InputError("unknown model " + a.model);

  std::vector<double> zero(h->link_count(), 0.0);
  auto probs = hier_extended_prob(*h, v, p, h->route_costs(zero));
  auto t = assemble_trips(*h, demand, probs);
  auto f1 = open_out(dir / "trips.csv");
  io::write_od_trips(f1, *h, t);
  auto f2 = open_out(dir / "od_mode.csv");
  io::write_od_mode_trips(f2, *h, t);
  auto f3 = open_out(dir / "routes.csv");
  io::write_route_trips(f3, *h, t);
  return kOk;
}

// --- paths -------------------------------------------------------------------

int run_paths(const ScenarioArgs& a, const Common& c) {
  auto sf = load_scenario(a.scenario);
  auto h = sf.hierarchy(k_override(c));
  auto f = open_out(out_dir(c) / "routes.txt");
  io::write_routes(f, *h);
  return kOk;
}

// --- calibrate ---------------------------------------------------------------

void write_kkt(std::ostream& out, const KktReport& k) {
  out << "kkt_max_residual " << format_number(k.max_residual) << '\n';
  out << "lagrangian_gradient_norm " << format_number(k.lagrangian_gradient_norm) << '\n';
  out << "max_constraint_residual " << format_number(k.max_constraint_residual) << '\n';
  for (std::size_t r = 0; r < k.constraint_residuals.size(); ++r)
    out << "constraint_residual " << r << ' ' << format_number(k.constraint_residuals[r]) << '\n';
}

int run_calibrate(const ScenarioArgs& a, const Common& c, const Logging& log) {
  auto sf = load_scenario(a.scenario);
  require_file(a.observations, "observation");
  auto h = sf.hierarchy(k_override(c));
  auto x = sf.attributes(*h);
  auto obs = io::read_observations(a.observations, *h);

  bool link_free = h->link_count() == 0 && h->nest_count() == 1;
  double theta_r = c.theta_r ? *c.theta_r : sf.theta_route.value_or(1.0);
  if (!link_free && !c.theta_r && !sf.theta_route)
    throw InputError("theta_route must be given (scenario parameter or --theta-r)");

  std::unique_ptr<HierarchicalCalibration> prog;
  try {
    if (link_free) {
      prog = build_hier_mnl(h, obs, x, sf.fixed_mode);
    } else {
      LinkCountPenalty pen;
      if (c.sigma > 0.0) {
        pen.sigma = c.sigma;
        pen.huber_width = c.huber;
        if (!a.link_counts.empty()) {
          require_file(a.link_counts, "link count");
          pen.observed = io::read_link_counts(a.link_counts, h->link_count());
        }
      } else if (!a.link_counts.empty()) {
        std::cerr << "warning: --link-counts ignored without --sigma > 0\n";
      }
      prog = std::make_unique<HierarchicalCalibration>(HierarchicalCalibration::Kind::FirstStage,
                                                       h, obs, x, theta_r, pen, sf.fixed_mode);
    }
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }

  auto cfg = solver_config(c, log);
  auto dir = out_dir(c);
  CalibrationResult res;
  try {
    res = solve_calibration(*prog, cfg);
  } catch (const CalibrationDiverged& e) {
    auto f = open_out(dir / "params.txt");
    f << "status nonconverged\n";
    auto r = open_out(dir / "report.txt");
    r << "program " << prog->name() << "\nstatus diverged\n";
    for (std::size_t k = 0; k < e.trace().size(); ++k)
      r << "residual_trace " << k << ' ' << format_number(e.trace()[k]) << '\n';
    std::cerr << "calibration diverged: " << e.what() << '\n';
    return kNonConvergence;
  }

  {
    auto f = open_out(dir / "params.txt");
    if (res.parameters) io::write_parameters(f, *h, *res.parameters, res.converged);
    else f << "status nonconverged\n";
  }
  {
    auto f = open_out(dir / "solution.txt");
    auto inner = prog->inner(res.multipliers);
    io::write_solution(f, *inner, res.inner.x);
  }
  {
    auto r = open_out(dir / "report.txt");
    r << "program " << prog->name() << '\n';
    r << "status " << (res.converged ? "converged" : "nonconverged") << '\n';
    r << "outer_iterations " << res.outer_iterations << '\n';
    r << "inner_iterations " << res.inner_iterations << '\n';
    r << "residual_norm " << format_number(res.residual_norm) << '\n';
    auto labels = prog->multipliers();
    for (std::size_t k = 0; k < res.multipliers.size(); ++k)
      r << "multiplier " << labels[k].label << ' ' << format_number(res.multipliers[k]) << '\n';
    write_kkt(r, check_kkt(*prog, res.multipliers, res.inner.x));
    for (const auto& w : res.warnings) r << "warning " << w << '\n';
  }
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  if (!res.converged) {
    std::cerr << "calibration did not converge (residual " << format_number(res.residual_norm)
              << ")\n";
    return kNonConvergence;
  }
  return kOk;
}

// --- forecast ----------------------------------------------------------------

int run_forecast(const ScenarioArgs& a, const Common& c, const Logging& log) {
  auto sf = load_scenario(a.scenario);
  if (a.params.empty()) throw InputError("forecast needs --params");
  auto h = sf.hierarchy(k_override(c));
  auto x = sf.attributes(*h);
  bool calibrated = true;
  auto p = load_parameters(a, sf, *h, x, c, &calibrated);
  if (!calibrated) std::cerr << "warning: parameter file is marked nonconverged\n";
  auto v = FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode);
  auto prog = build_second_stage(h, sf.demand(), v, p);
  auto st = solve_simplex_program(*prog, solver_config(c, log));
  auto t = prog->trips(st.x);

  auto dir = out_dir(c);
  auto f1 = open_out(dir / "trips.csv");
  io::write_od_trips(f1, *h, t);
  auto f2 = open_out(dir / "od_mode.csv");
  io::write_od_mode_trips(f2, *h, t);
  auto f3 = open_out(dir / "routes.csv");
  io::write_route_trips(f3, *h, t);
  auto f4 = open_out(dir / "link_flows.csv");
  io::write_link_flows(f4, *h, t.link_flows);
  auto f5 = open_out(dir / "solution.txt");
  io::write_solution(f5, *prog, st.x);

  auto s = open_out(dir / "summary.txt");
  const auto& names = h->network().mode_names();
  std::vector<double> per_mode(h->mode_count(), 0.0);
  for (std::size_t i = 0; i < h->origin_count(); ++i)
    for (std::size_t j = 0; j < h->destination_count(); ++j)
      for (std::size_t m = 0; m < h->mode_count(); ++m) per_mode[m] += t.od_mode[h->odm(i, j, m)];
  double total = 0.0;
  for (double d : t.od) total += d;
  s << "status " << (st.converged ? "converged" : "nonconverged") << '\n';
  s << "iterations " << st.iterations << '\n';
  s << "kkt_residual " << format_number(st.kkt_residual) << '\n';
  s << "objective " << format_number(st.objective) << '\n';
  s << "total_trips " << format_number(total) << '\n';
  for (std::size_t m = 0; m < per_mode.size(); ++m)
    s << "mode_trips " << names[m] << ' ' << format_number(per_mode[m]) << '\n';
  return st.converged ? kOk : kNonConvergence;
}

// --- synth -------------------------------------------------------------------

int run_synth(const ScenarioArgs& a, const Common& c) {
  auto sf = load_scenario(a.scenario);
  auto s = sf.scenario(k_override(c));
  if (c.theta_r) s.parameters.theta_route = *c.theta_r;
  ObservationBundle obs;
  try {
    obs = generate_observations(s);
  } catch (const std::runtime_error& e) {
    std::cerr << "equilibrium not reached: " << e.what() << '\n';
    return kNonConvergence;
  }
  if (a.noise > 0.0) obs = perturb_observations(obs, *s.hierarchy, a.noise, a.seed);
  auto f = open_out(out_dir(c) / "observations.txt");
  io::write_observations(f, *s.hierarchy, obs);
  return kOk;
}

// --- check -------------------------------------------------------------------

int run_check(const ScenarioArgs& a, const Common& c) {
  auto sf = load_scenario(a.scenario);
  require_file(a.solution, "solution");
  auto h = sf.hierarchy(k_override(c));
  auto x = sf.attributes(*h);
  auto p = load_parameters(a, sf, *h, x, c);
  auto v = FixedUtilities::from_attributes(*h, x, p.beta_dest, p.beta_mode);
  LinkCountPenalty pen;
  if (c.sigma > 0.0) {
    if (a.link_counts.empty()) throw InputError("--sigma needs --link-counts for check");
    pen.sigma = c.sigma;
    pen.huber_width = c.huber;
    pen.observed = io::read_link_counts(a.link_counts, h->link_count());
  }
  bool link_free = h->link_count() == 0 && h->nest_count() == 1;
  auto w = EntropyWeights::from_parameters(p);
  if (link_free) w.route = 1.0;
  HierarchicalProgram prog(h, sf.demand(), v, w, pen);
  auto sol = io::read_solution(a.solution, prog.dimension());
  for (double xi : sol)
    if (!(xi > 0.0)) throw InputError("solution has non-positive entries");
  auto k = check_kkt(prog, sol);
  write_kkt(std::cout, k);
  double worst_simplex = 0.0;
  for (double r : k.simplex_residuals) worst_simplex = std::max(worst_simplex, r);
  std::cout << "max_simplex_residual " << format_number(worst_simplex) << '\n';
  bool ok = k.max_residual <= a.check_tol && worst_simplex <= a.check_tol;
  std::cout << "status " << (ok ? "optimal" : "not_optimal") << '\n';
  return ok ? kOk : kNonConvergence;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--tol-inner", c.tol_inner, "inner KKT tolerance");
  app->add_option("--tol-outer", c.tol_outer, "outer constraint tolerance");
  app->add_option("--max-iter", c.max_iter, "iteration cap (inner and outer)");
  app->add_option("--k-routes", c.k_routes, "routes per (i,j,m)");
  app->add_option("--sigma", c.sigma, "link count penalty weight");
  app->add_option("--theta-r", c.theta_r, "route dispersion");
  app->add_option("--huber", c.huber, "Huber width of the link count penalty");
  app->add_option("--out", c.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"demandforge: combined distribution, mode and route choice"};
  app.require_subcommand(1);
  Common common;
  Logging log;

  DistributeArgs dist;
  auto* cmd_dist = app.add_subcommand("distribute", "trip distribution");
  cmd_dist->add_option("--zones", dist.zones, "zone file")->required();
  cmd_dist->add_option("--costs", dist.costs, "OD cost file")->required();
  cmd_dist->add_option("--method", dist.method, "entropy | gravity");
  cmd_dist->add_option("--mode", dist.mode, "cost mode to use");
  cmd_dist->add_option("--beta", dist.beta, "cost dual");
  cmd_dist->add_option("--budget", dist.budget, "total cost budget (entropy only)");
  add_common(cmd_dist, common);

  ScenarioArgs sa;
  auto* cmd_choice = app.add_subcommand("choice", "closed-form choice at free-flow costs");
  auto* cmd_paths = app.add_subcommand("paths", "enumerate routes");
  auto* cmd_cal = app.add_subcommand("calibrate", "estimate parameters");
  auto* cmd_fc = app.add_subcommand("forecast", "forecast with fixed parameters");
  auto* cmd_synth = app.add_subcommand("synth", "synthetic observations");
  auto* cmd_check = app.add_subcommand("check", "KKT check of a saved solution");
  for (auto* cmd : {cmd_choice, cmd_paths, cmd_cal, cmd_fc, cmd_synth, cmd_check}) {
    cmd->add_option("--scenario", sa.scenario, "scenario file")->required();
    add_common(cmd, common);
  }
  for (auto* cmd : {cmd_choice, cmd_fc, cmd_check})
    cmd->add_option("--params", sa.params, "parameter file");
  cmd_choice->add_option("--model", sa.model, "hier | variant2");
  cmd_cal->add_option("--observations", sa.observations, "observation file")->required();
  for (auto* cmd : {cmd_cal, cmd_check})
    cmd->add_option("--link-counts", sa.link_counts, "observed link counts");
  cmd_synth->add_option("--noise", sa.noise, "relative noise on T_ijm");
  cmd_synth->add_option("--seed", sa.seed, "noise seed");
  cmd_check->add_option("--solution", sa.solution, "saved solution")->required();
  cmd_check->add_option("--tol", sa.check_tol, "KKT tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*cmd_dist) return run_distribute(dist, common);
    if (*cmd_choice) return run_choice(sa, common, log);
    if (*cmd_paths) return run_paths(sa, common);
    if (*cmd_cal) return run_calibrate(sa, common, log);
    if (*cmd_fc) return run_forecast(sa, common, log);
    if (*cmd_synth) return run_synth(sa, common);
    if (*cmd_check) return run_check(sa, common);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::out_of_range& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
