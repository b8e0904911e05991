#include "demandforge/solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace demandforge {

void SolverConfig::validate() const {
  if (!(inner_tol > 0.0) || !(outer_tol > 0.0))
    throw std::invalid_argument("solver tolerances must be positive");
  if (max_inner < 1 || max_outer < 1)
    throw std::invalid_argument("iteration caps must be at least 1");
  if (!(armijo_c > 0.0 && armijo_c < 1.0) || !(armijo_shrink > 0.0 && armijo_shrink < 1.0))
    throw std::invalid_argument("Armijo parameters must lie in (0, 1)");
  if (!(max_step > 0.0)) throw std::invalid_argument("max step must be positive");
  if (!(probability_floor >= 0.0 && probability_floor < 1e-6))
    throw std::invalid_argument("probability floor must lie in [0, 1e-6)");
  if (!(huber_width > 0.0)) throw std::invalid_argument("huber width must be positive");
  if (newton_after < 0) throw std::invalid_argument("newton_after must be nonnegative");
  if (!(damping > 0.0)) throw std::invalid_argument("damping must be positive");
  if (!(jacobian_step > 0.0)) throw std::invalid_argument("jacobian step must be positive");
}

namespace {

struct BlockStats {
  std::vector<double> residual;  // per block
  std::vector<double> mean;      // mass-weighted mean natural gradient
};

BlockStats block_stats(const ConvexProgram& p, std::span<const double> x,
                       std::span<const double> ng) {
  BlockStats s;
  for (const auto& b : p.blocks()) {
    double tot = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) tot += x[b.offset + k];
    double mean = 0.0;
    if (tot > 0.0)
      for (std::size_t k = 0; k < b.size; ++k) mean += x[b.offset + k] / tot * ng[b.offset + k];
    // weighted stationarity, plus any positive reduced gradient: a nearly
    // empty coordinate that still wants mass is not optimal however small
    // its weight
    double r = 0.0, up = 0.0;
    if (tot > 0.0)
      for (std::size_t k = 0; k < b.size; ++k) {
        double d = ng[b.offset + k] - mean;
        r += x[b.offset + k] / tot * d * d;
        up = std::max(up, d);
      }
    s.mean.push_back(mean);
    s.residual.push_back(b.size > 1 ? std::max(std::sqrt(r), up) : 0.0);
  }
  return s;
}

void normalize_blocks(const ConvexProgram& p, std::vector<double>& x, double floor) {
  for (const auto& b : p.blocks()) {
    double tot = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) {
      double& v = x[b.offset + k];
      if (!(v > 0.0) || !std::isfinite(v)) v = 0.0;
      tot += v;
    }
    if (!(tot > 0.0)) {
      for (std::size_t k = 0; k < b.size; ++k) x[b.offset + k] = b.mass / b.size;
      continue;
    }
    for (std::size_t k = 0; k < b.size; ++k) {
      double& v = x[b.offset + k];
      v = std::max(v / tot, floor) * b.mass;
    }
  }
}

// x_b <- mass softmax(ln x_b + eta ng_b / temperature_b)
void mirror_step(const ConvexProgram& p, std::span<const double> x, std::span<const double> ng,
                 double eta, double floor, std::vector<double>& y) {
  y.assign(x.begin(), x.end());
  std::vector<double> z;
  for (const auto& b : p.blocks()) {
    if (b.size < 2) continue;
    double t = b.temperature > 0.0 ? b.temperature : 1.0;
    z.resize(b.size);
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < b.size; ++k) {
      double xv = std::max(x[b.offset + k] / b.mass, std::numeric_limits<double>::min());
      z[k] = std::log(xv) + eta * ng[b.offset + k] / t;
      zmax = std::max(zmax, z[k]);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) {
      z[k] = std::exp(z[k] - zmax);
      s += z[k];
    }
    for (std::size_t k = 0; k < b.size; ++k)
      y[b.offset + k] = b.mass * std::max(z[k] / s, floor);
  }
}

// <grad, y - x> with each block's gradient centred on its mean; the centring
// is exact on the simplex and removes cancellation against the block dual.
double directional(const std::vector<SimplexBlock>& blocks, std::span<const double> ng,
                   std::span<const double> w, std::span<const double> x,
                   std::span<const double> y) {
  double total = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.size < 2) continue;
    double mean = 0.0;
    for (std::size_t k = 0; k < blk.size; ++k) mean += ng[blk.offset + k];
    mean /= static_cast<double>(blk.size);
    double s = 0.0;
    for (std::size_t k = 0; k < blk.size; ++k) {
      std::size_t i = blk.offset + k;
      s += (ng[i] - mean) * (y[i] - x[i]);
    }
    total += w[b] * s;
  }
  return total;
}

// Free softmax coordinates: z_k = ln(x_k / x_first) for every non-first
// member of a block with two or more members.
std::vector<std::size_t> free_coordinates(const std::vector<SimplexBlock>& blocks) {
  std::vector<std::size_t> idx;
  for (const auto& b : blocks)
    for (std::size_t k = 1; k < b.size; ++k) idx.push_back(b.offset + k);
  return idx;
}

// dF/dz_k = x_k (g_k - mean_b g), mean weighted by x within the block.
void softmax_gradient(const ConvexProgram& p, std::span<const double> x,
                      const std::vector<std::size_t>& idx, std::vector<double>& g,
                      Eigen::VectorXd& out) {
  p.gradient(x, g);
  std::vector<double> full(x.size(), 0.0);
  for (const auto& b : p.blocks()) {
    if (b.size < 2) continue;
    double tot = 0.0, m = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) tot += x[b.offset + k];
    for (std::size_t k = 0; k < b.size; ++k) m += x[b.offset + k] / tot * g[b.offset + k];
    for (std::size_t k = 0; k < b.size; ++k)
      full[b.offset + k] = x[b.offset + k] * (g[b.offset + k] - m);
  }
  out.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = full[idx[k]];
}

// x_k <- x_k exp(d_k) (d = 0 on first members), renormalized to the block mass.
void softmax_move(const ConvexProgram& p, std::span<const double> x,
                  const std::vector<std::size_t>& idx, const Eigen::VectorXd& d, double t,
                  double floor, std::vector<double>& y) {
  std::vector<double> z(x.size(), 0.0);
  for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = t * d[static_cast<Eigen::Index>(k)];
  y.assign(x.begin(), x.end());
  for (const auto& b : p.blocks()) {
    if (b.size < 2) continue;
    double zmax = -std::numeric_limits<double>::infinity();
    std::vector<double> e(b.size);
    for (std::size_t k = 0; k < b.size; ++k) {
      double xv = std::max(x[b.offset + k] / b.mass, std::numeric_limits<double>::min());
      e[k] = std::log(xv) + z[b.offset + k];
      zmax = std::max(zmax, e[k]);
    }
    double s = 0.0;
    for (auto& v : e) s += v = std::exp(v - zmax);
    for (std::size_t k = 0; k < b.size; ++k)
      y[b.offset + k] = b.mass * std::max(e[k] / s, floor);
  }
}

// One damped Newton step in softmax coordinates. Returns false when no
// ascent step was found.
bool newton_step(const ConvexProgram& p, const SolverConfig& cfg,
                 const std::vector<std::size_t>& idx, std::vector<double>& x, double& f,
                 double& step) {
  const std::size_t m = idx.size();
  if (m == 0) return false;
  std::vector<double> g(x.size()), xp, xm;
  Eigen::VectorXd G, Gp, Gm;
  softmax_gradient(p, x, idx, g, G);
  Eigen::MatrixXd H(m, m);
  // small enough that a perturbation rarely straddles a Huber kink
  const double h = 1e-8;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    auto jj = static_cast<Eigen::Index>(j);
    e[jj] = 1.0;
    softmax_move(p, x, idx, e, h, cfg.probability_floor, xp);
    softmax_move(p, x, idx, e, -h, cfg.probability_floor, xm);
    e[jj] = 0.0;
    softmax_gradient(p, xp, idx, g, Gp);
    softmax_gradient(p, xm, idx, g, Gm);
    H.col(jj) = (Gp - Gm) / (2.0 * h);
  }
  Eigen::MatrixXd A = -0.5 * (H + H.transpose());
  double scale = std::max(A.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd d;
  for (double mu = 0.0;; mu = mu == 0.0 ? 1e-10 * scale : mu * 10.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(A + mu * Eigen::MatrixXd::Identity(m, m));
    if (llt.info() == Eigen::Success) {
      d = llt.solve(G);
      if (d.allFinite()) break;
    }
    if (mu > 1e10 * scale) return false;
  }
  double slope0 = G.dot(d);
  if (!(slope0 > 0.0)) return false;
  std::vector<double> y;
  Eigen::VectorXd Gy;
  const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
  const double gnorm = G.norm();
  for (double t = 1.0; t > 1e-12; t *= 0.5) {
    softmax_move(p, x, idx, d, t, cfg.probability_floor, y);
    double fy = p.value(y);
    if (!std::isfinite(fy)) continue;
    bool ok = fy - f >= cfg.armijo_c * t * slope0 && fy - f > noise;
    if (!ok && fy - f >= -noise) {
      // F no longer resolves the change: fall back to the gradient norm,
      // which keeps full steps from cycling across Huber kinks
      softmax_gradient(p, y, idx, g, Gy);
      ok = Gy.norm() <= (1.0 - 1e-4 * t) * gnorm;
    }
    if (ok) {
      x.swap(y);
      f = fy;
      step = t;
      return true;
    }
  }
  return false;
}

}  // namespace

KktReport check_kkt(const ConvexProgram& program, std::span<const double> x) {
  KktReport rep;
  std::vector<double> ng(program.dimension()), g(program.dimension()),
      w(program.blocks().size());
  program.natural_gradient(x, ng);
  program.gradient(x, g);
  program.block_weights(x, w);
  auto st = block_stats(program, x, ng);
  rep.block_residuals = st.residual;
  double lg = 0.0;
  for (std::size_t b = 0; b < program.blocks().size(); ++b) {
    const auto& blk = program.blocks()[b];
    rep.max_residual = std::max(rep.max_residual, st.residual[b]);
    double lam = st.mean[b] * w[b];
    rep.block_duals.push_back(lam);
    double tot = 0.0;
    for (std::size_t k = 0; k < blk.size; ++k) tot += x[blk.offset + k];
    rep.simplex_residuals.push_back(std::abs(tot - blk.mass) / std::max(1.0, blk.mass));
    for (std::size_t k = 0; k < blk.size; ++k) {
      double d = g[blk.offset + k] - lam;
      lg += x[blk.offset + k] / std::max(tot, std::numeric_limits<double>::min()) * d * d;
    }
  }
  rep.lagrangian_gradient_norm = std::sqrt(lg);
  return rep;
}

KktReport check_kkt(const CalibrationProgram& calibration, std::span<const double> multipliers,
                    std::span<const double> x) {
  auto inner = calibration.inner(multipliers);
  KktReport rep = check_kkt(*inner, x);
  auto r = calibration.residuals(*inner, x);
  for (std::size_t k = 0; k < r.size(); ++k) {
    double s = r[k] / std::max(1.0, std::abs(calibration.targets()[k]));
    rep.constraint_residuals.push_back(s);
    rep.max_constraint_residual = std::max(rep.max_constraint_residual, std::abs(s));
  }
  return rep;
}

namespace {

SolutionState solve_single(const ConvexProgram& program, const SolverConfig& config,
                           std::optional<std::vector<double>> start) {
  const std::size_t n = program.dimension();
  const auto& blocks = program.blocks();
  std::vector<double> x = start ? std::move(*start) : program.uniform_point();
  if (x.size() != n) throw std::invalid_argument("start point has the wrong dimension");
  normalize_blocks(program, x, config.probability_floor);

  std::vector<double> ng(n), y, ng_y(n), w(blocks.size()), w_y(blocks.size());
  program.natural_gradient(x, ng);
  program.block_weights(x, w);
  double f = program.value(x);
  double eta = config.max_step;
  const auto free_idx = free_coordinates(blocks);
  const bool use_newton = free_idx.size() <= config.newton_max_dim;
  SolutionState st;
  if (config.log) *config.log << "iter,objective,kkt_residual,step_size\n";

  int it = 0;
  double res = 0.0;
  for (;; ++it) {
    auto bs = block_stats(program, x, ng);
    res = bs.residual.empty() ? 0.0 : *std::max_element(bs.residual.begin(), bs.residual.end());
    if (config.log)
      *config.log << it << ',' << f << ',' << res << ',' << (it == 0 ? 0.0 : st.step_size) << '\n';
    if (res < config.inner_tol) {
      st.converged = true;
      break;
    }
    if (it >= config.max_inner) break;

    if (use_newton && it >= config.newton_after &&
        newton_step(program, config, free_idx, x, f, st.step_size)) {
      program.natural_gradient(x, ng);
      program.block_weights(x, w);
      continue;
    }

    bool accepted = false;
    bool have_grad = false;
    while (eta > 1e-30) {
      mirror_step(program, x, ng, eta, config.probability_floor, y);
      double fy = program.value(y);
      double pred = directional(blocks, ng, w, x, y);
      bool ok = std::isfinite(fy) && fy - f >= config.armijo_c * pred;
      if (!ok && std::isfinite(fy)) {
        // Near the optimum F stops resolving the increase. By concavity
        // F(y) - F(x) >= <grad F(y), y - x>, so a nonnegative slope at y
        // still certifies ascent.
        program.natural_gradient(y, ng_y);
        program.block_weights(y, w_y);
        double slope = directional(blocks, ng_y, w_y, x, y);
        ok = slope >= 0.0;
        have_grad = ok;
      }
      if (ok) {
        x.swap(y);
        f = fy;
        st.step_size = eta;
        accepted = true;
        break;
      }
      eta *= config.armijo_shrink;
    }
    if (!accepted) break;  // stalled: cannot ascend further at machine precision
    if (have_grad) {
      ng.swap(ng_y);
      w.swap(w_y);
    } else {
      program.natural_gradient(x, ng);
      program.block_weights(x, w);
    }
    eta = std::min(config.max_step, eta * 2.0);
  }

  st.iterations = it;
  st.kkt_residual = res;
  st.objective = f;
  auto rep = check_kkt(program, x);
  st.lagrangian_gradient_norm = rep.lagrangian_gradient_norm;
  st.block_duals = rep.block_duals;
  st.x = std::move(x);
  return st;
}

}  // namespace

SolutionState solve_simplex_program(const ConvexProgram& program, const SolverConfig& config,
                                    std::optional<std::vector<double>> start) {
  config.validate();
  int stages = 0;
  if (!start) {
    // cold start on a penalized program: walk the Huber width down to its
    // target, each stage warm-starting the next
    for (double factor : {1e4, 1e3, 1e2, 1e1}) {
      auto wide = program.smoothed(factor);
      if (!wide) break;
      auto st = solve_single(*wide, config, start);
      stages += st.iterations;
      start = std::move(st.x);
    }
  }
  auto st = solve_single(program, config, std::move(start));
  st.iterations += stages;
  return st;
}

DualSolution simplex_duals(const ConvexProgram& program, const SolutionState& state) {
  DualSolution d;
  for (const auto& b : program.blocks()) d.block_labels.push_back(b.label);
  d.block_duals = state.block_duals;
  return d;
}

namespace {

struct OuterEval {
  std::vector<double> r;  // scaled residuals
  double norm = 0.0;      // euclidean norm of r
  SolutionState inner;
};

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

}  // namespace

CalibrationResult solve_calibration(const CalibrationProgram& program, const SolverConfig& config,
                                    std::optional<std::vector<double>> initial) {
  config.validate();
  const auto& specs = program.multipliers();
  const std::size_t nv = specs.size();
  const auto& targets = program.targets();
  CalibrationResult out;
  out.warnings = program.warnings();

  std::vector<double> nu(nv);
  if (initial) {
    if (initial->size() != nv) throw std::invalid_argument("initial multipliers: wrong length");
    nu = *initial;
  } else {
    for (std::size_t k = 0; k < nv; ++k) nu[k] = specs[k].initial;
  }
  for (std::size_t k = 0; k < nv; ++k)
    if (specs[k].positive && !(nu[k] > 0.0))
      throw std::invalid_argument("multiplier " + specs[k].label + " must start positive");

  std::vector<double> warm;
  auto evaluate = [&](const std::vector<double>& m, const std::vector<double>& start) {
    OuterEval e;
    auto inner = program.inner(m);
    std::optional<std::vector<double>> s;
    if (start.size() == inner->dimension()) s = start;
    e.inner = solve_simplex_program(*inner, config, s);
    out.inner_iterations += e.inner.iterations;
    auto r = program.residuals(*inner, e.inner.x);
    e.r.resize(r.size());
    double n2 = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      e.r[k] = r[k] / std::max(1.0, std::abs(targets[k]));
      n2 += e.r[k] * e.r[k];
    }
    e.norm = std::sqrt(n2);
    return e;
  };

  OuterEval cur = evaluate(nu, warm);
  warm = cur.inner.x;
  const std::size_t nr = cur.r.size();
  Eigen::MatrixXd jac(nr, nv);
  bool fresh = false;

  auto fd_jacobian = [&]() {
    std::vector<double> colnorm(nv, 0.0);
    for (std::size_t k = 0; k < nv; ++k) {
      double h = config.jacobian_step * std::max(1.0, std::abs(nu[k]));
      if (specs[k].positive) h = std::min(h, 0.5 * nu[k]);
      std::vector<double> mp = nu, mm = nu;
      mp[k] += h;
      mm[k] -= h;
      OuterEval ep = evaluate(mp, warm);
      OuterEval em = evaluate(mm, warm);
      for (std::size_t i = 0; i < nr; ++i) {
        jac(i, k) = (ep.r[i] - em.r[i]) / (2.0 * h);
        colnorm[k] += jac(i, k) * jac(i, k);
      }
      colnorm[k] = std::sqrt(colnorm[k]);
    }
    double cmax = *std::max_element(colnorm.begin(), colnorm.end());
    out.rank_deficient.clear();
    for (std::size_t k = 0; k < nv; ++k)
      if (colnorm[k] <= 1e-8 * std::max(1.0, cmax)) {
        out.rank_deficient.push_back(k);
        jac.col(k).setZero();
      }
    fresh = true;
  };
  fd_jacobian();

  out.residual_trace.push_back(max_abs(cur.r));
  int increases = 0;
  int it = 0;
  auto log_outer = [&](int k, double step) {
    if (config.outer_log)
      *config.outer_log << k << ',' << max_abs(cur.r) << ',' << step << '\n';
  };
  if (config.outer_log) *config.outer_log << "outer,residual,step\n";
  log_outer(0, 0.0);

  for (; it < config.max_outer; ++it) {
    if (max_abs(cur.r) < config.outer_tol && cur.inner.converged) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd rv = Eigen::Map<const Eigen::VectorXd>(cur.r.data(), nr);
    Eigen::VectorXd d = -jac.completeOrthogonalDecomposition().solve(rv);
    for (std::size_t k : out.rank_deficient) d(k) = 0.0;

    double t = 1.0;
    bool accepted = false;
    OuterEval trial;
    std::vector<double> trial_nu;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      trial_nu = nu;
      bool ok = true;
      for (std::size_t k = 0; k < nv; ++k) {
        trial_nu[k] += t * d(k);
        if (specs[k].positive && !(trial_nu[k] > 0.0)) ok = false;
      }
      if (!ok) continue;
      trial = evaluate(trial_nu, warm);
      if (std::isfinite(trial.norm) && trial.norm <= (1.0 - 1e-4 * t) * cur.norm) {
        accepted = true;
        break;
      }
      if (trial.norm < 1e-300) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!fresh) {
        fd_jacobian();
        continue;
      }
      // no descent even with a fresh Jacobian; take the last trial if it exists
      if (trial.r.empty()) break;
      ++increases;
      out.warnings.push_back("outer line search failed at iteration " + std::to_string(it));
    } else {
      increases = 0;
    }

    // Broyden update of the residual Jacobian
    Eigen::VectorXd s(nv), yv(nr);
    for (std::size_t k = 0; k < nv; ++k) s(k) = trial_nu[k] - nu[k];
    for (std::size_t i = 0; i < nr; ++i) yv(i) = trial.r[i] - cur.r[i];
    double ss = s.squaredNorm();
    if (ss > 0.0) jac += ((yv - jac * s) * s.transpose()) / ss;
    for (std::size_t k : out.rank_deficient) jac.col(k).setZero();
    fresh = false;

    nu = trial_nu;
    cur = std::move(trial);
    warm = cur.inner.x;
    out.residual_trace.push_back(max_abs(cur.r));
    log_outer(it + 1, t);
    if (increases >= 10) {
      std::ostringstream msg;
      msg << "calibration diverged: residual grew for 10 consecutive steps; trace:";
      for (double v : out.residual_trace) msg << ' ' << v;
      throw CalibrationDiverged(msg.str(), out.residual_trace);
    }
  }
  if (!out.converged && max_abs(cur.r) < config.outer_tol && cur.inner.converged)
    out.converged = true;

  for (std::size_t k : out.rank_deficient)
    out.warnings.push_back("rank-deficient multiplier " + specs[k].label + " held at " +
                           std::to_string(nu[k]));

  out.outer_iterations = it;
  out.multipliers = nu;
  out.residuals = cur.r;
  out.residual_norm = max_abs(cur.r);
  out.inner = std::move(cur.inner);

  auto inner = program.inner(nu);
  out.duals = simplex_duals(*inner, out.inner);
  for (const auto& sp : specs) out.duals.multiplier_labels.push_back(sp.label);
  out.duals.multipliers = nu;
  if (const auto* hc = dynamic_cast<const HierarchicalCalibration*>(&program)) {
    ModelParameters p = hc->parameters(nu);
    out.duals.theta_dest = p.theta_dest;
    out.duals.theta_mode = p.theta_mode;
    out.duals.tau = p.tau;
    out.duals.beta_dest = p.beta_dest;
    out.duals.beta_mode = p.beta_mode;
    for (std::size_t n = 0; n < p.tau.size(); ++n)
      if (p.tau[n] > 1.0 + 1e-3)
        out.warnings.push_back("recovered tau for nest " + hc->hierarchy().tree().nest_names[n] +
                               " exceeds 1");
    out.parameters = std::move(p);
  } else if (const auto* me = dynamic_cast<const MaxEntropyProgram*>(&program)) {
    out.duals.beta_mode = me->alpha(nu);
    out.duals.beta_dest = me->asc(nu);
  }
  return out;
}

}  // namespace demandforge
