#include "demandforge/distribution.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "demandforge/choice.hpp"

namespace demandforge {

std::vector<double> TripMatrix::row_sums() const {
  std::vector<double> s(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) s[i] += (*this)(i, j);
  return s;
}

std::vector<double> TripMatrix::col_sums() const {
  std::vector<double> s(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) s[j] += (*this)(i, j);
  return s;
}

double TripMatrix::total() const { return std::accumulate(values.begin(), values.end(), 0.0); }

namespace {

void check_margins(std::span<const double> o, std::span<const double> d, const TripMatrix& c) {
  if (c.rows != o.size() || c.cols != d.size())
    throw std::invalid_argument("cost matrix shape does not match margins");
  for (double v : o)
    if (!(v >= 0.0)) throw std::invalid_argument("productions must be nonnegative");
  for (double v : d)
    if (!(v >= 0.0)) throw std::invalid_argument("attractions must be nonnegative");
  double so = std::accumulate(o.begin(), o.end(), 0.0);
  double sd = std::accumulate(d.begin(), d.end(), 0.0);
  if (std::abs(so - sd) > 1e-9 * std::max({1.0, so, sd}))
    throw std::invalid_argument("unbalanced margins: sum O = " + std::to_string(so) +
                                ", sum D = " + std::to_string(sd));
  if (!(so > 0.0)) throw std::invalid_argument("margins are all zero");
}

double rel(double residual, double scale) { return std::abs(residual) / std::max(1.0, scale); }

}  // namespace

GravityResult gravity_balance(std::span<const double> productions,
                              std::span<const double> attractions, const TripMatrix& costs,
                              double beta, double tol, int max_iter) {
  check_margins(productions, attractions, costs);
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be nonnegative");
  const std::size_t ni = productions.size(), nj = attractions.size();
  TripMatrix f(ni, nj);
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j) f(i, j) = std::exp(-beta * costs(i, j));
  // a positive margin needs at least one reachable cell
  for (std::size_t i = 0; i < ni; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < nj; ++j) s += f(i, j) * attractions[j];
    if (productions[i] > 0.0 && !(s > 0.0))
      throw std::invalid_argument("origin row " + std::to_string(i) + " cannot be balanced");
  }
  for (std::size_t j = 0; j < nj; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < ni; ++i) s += f(i, j) * productions[i];
    if (attractions[j] > 0.0 && !(s > 0.0))
      throw std::invalid_argument("destination column " + std::to_string(j) +
                                  " cannot be balanced");
  }

  GravityResult res;
  res.balancing_origin.assign(ni, 1.0);
  res.balancing_destination.assign(nj, 1.0);
  auto& a = res.balancing_origin;
  auto& b = res.balancing_destination;
  res.trips = TripMatrix(ni, nj);
  for (int it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < ni; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < nj; ++j) s += b[j] * attractions[j] * f(i, j);
      a[i] = s > 0.0 ? 1.0 / s : 1.0;
    }
    for (std::size_t j = 0; j < nj; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < ni; ++i) s += a[i] * productions[i] * f(i, j);
      b[j] = s > 0.0 ? 1.0 / s : 1.0;
    }
    for (std::size_t i = 0; i < ni; ++i)
      for (std::size_t j = 0; j < nj; ++j)
        res.trips(i, j) = a[i] * b[j] * productions[i] * attractions[j] * f(i, j);
    auto rs = res.trips.row_sums();
    auto cs = res.trips.col_sums();
    double err = 0.0;
    for (std::size_t i = 0; i < ni; ++i)
      err = std::max(err, rel(rs[i] - productions[i], productions[i]));
    for (std::size_t j = 0; j < nj; ++j)
      err = std::max(err, rel(cs[j] - attractions[j], attractions[j]));
    res.iterations = it;
    res.margin_error = err;
    if (err < tol) return res;
  }
  throw std::runtime_error("gravity_balance: no convergence after " + std::to_string(max_iter) +
                           " iterations (margin error " + std::to_string(res.margin_error) + ")");
}

MostProbableResult solve_most_probable(std::span<const double> productions,
                                       std::span<const double> attractions,
                                       const TripMatrix& costs, double beta, double tol) {
  check_margins(productions, attractions, costs);
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be nonnegative");
  const std::size_t ni = productions.size(), nj = attractions.size();

  // Zero margins pin their cells to zero; the dual runs over the rest.
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < ni; ++i)
    if (productions[i] > 0.0) rows.push_back(i);
  for (std::size_t j = 0; j < nj; ++j)
    if (attractions[j] > 0.0) cols.push_back(j);
  const std::size_t nr = rows.size(), nc = cols.size();
  const double total = std::accumulate(productions.begin(), productions.end(), 0.0);

  // T_ij = exp(-lambda_i - mu_j - beta c_ij); dual
  // g = sum T + sum lambda O + sum mu D, convex. mu of the last column fixed
  // at zero to remove the gauge freedom.
  Eigen::VectorXd lambda(nr), mu(nc);
  for (std::size_t r = 0; r < nr; ++r) {
    double cmin = std::numeric_limits<double>::infinity();
    for (std::size_t j : cols) cmin = std::min(cmin, costs(rows[r], j));
    lambda[static_cast<Eigen::Index>(r)] = -std::log(productions[rows[r]]) - beta * cmin;
  }
  for (std::size_t c = 0; c < nc; ++c)
    mu[static_cast<Eigen::Index>(c)] = -std::log(attractions[cols[c]] / total);
  mu[static_cast<Eigen::Index>(nc - 1)] = 0.0;

  auto cell = [&](const Eigen::VectorXd& l, const Eigen::VectorXd& m, std::size_t r,
                  std::size_t c) {
    return std::exp(-l[static_cast<Eigen::Index>(r)] - m[static_cast<Eigen::Index>(c)] -
                    beta * costs(rows[r], cols[c]));
  };
  auto dual = [&](const Eigen::VectorXd& l, const Eigen::VectorXd& m) {
    double g = 0.0;
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t c = 0; c < nc; ++c) g += cell(l, m, r, c);
    for (std::size_t r = 0; r < nr; ++r) g += l[static_cast<Eigen::Index>(r)] * productions[rows[r]];
    for (std::size_t c = 0; c < nc; ++c) g += m[static_cast<Eigen::Index>(c)] * attractions[cols[c]];
    return g;
  };

  const auto n = static_cast<Eigen::Index>(nr + nc - 1);
  MostProbableResult res;
  res.beta = beta;
  int it = 0;
  for (; it < 500; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> rs(nr, 0.0), cs(nc, 0.0);
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t c = 0; c < nc; ++c) {
        double t = cell(lambda, mu, r, c);
        rs[r] += t;
        cs[c] += t;
        auto ri = static_cast<Eigen::Index>(r);
        auto ci = static_cast<Eigen::Index>(nr + c);
        if (c + 1 < nc) {
          hess(ri, ci) += t;
          hess(ci, ri) += t;
        }
      }
    double err = 0.0;
    for (std::size_t r = 0; r < nr; ++r) {
      auto ri = static_cast<Eigen::Index>(r);
      grad[ri] = productions[rows[r]] - rs[r];
      hess(ri, ri) = rs[r];
      err = std::max(err, rel(grad[ri], productions[rows[r]]));
    }
    for (std::size_t c = 0; c < nc; ++c) {
      double g = attractions[cols[c]] - cs[c];
      err = std::max(err, rel(g, attractions[cols[c]]));
      if (c + 1 < nc) {
        auto ci = static_cast<Eigen::Index>(nr + c);
        grad[ci] = g;
        hess(ci, ci) = cs[c];
      }
    }
    if (err < tol) break;
    Eigen::VectorXd step = hess.ldlt().solve(-grad);
    double g0 = dual(lambda, mu);
    double slope = grad.dot(step);
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls) {
      Eigen::VectorXd l2 = lambda + t * step.head(static_cast<Eigen::Index>(nr));
      Eigen::VectorXd m2 = mu;
      m2.head(static_cast<Eigen::Index>(nc - 1)) += t * step.tail(static_cast<Eigen::Index>(nc - 1));
      double g1 = dual(l2, m2);
      if (g1 <= g0 + 1e-4 * t * slope || ls == 59) {
        lambda = l2;
        mu = m2;
        break;
      }
      t *= 0.5;
    }
  }
  res.iterations = it;
  res.trips = TripMatrix(ni, nj);
  res.origin_duals.assign(ni, std::numeric_limits<double>::infinity());
  res.destination_duals.assign(nj, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < nr; ++r) res.origin_duals[rows[r]] = lambda[static_cast<Eigen::Index>(r)];
  for (std::size_t c = 0; c < nc; ++c) res.destination_duals[cols[c]] = mu[static_cast<Eigen::Index>(c)];
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t c = 0; c < nc; ++c) res.trips(rows[r], cols[c]) = cell(lambda, mu, r, c);
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j) res.total_cost += res.trips(i, j) * costs(i, j);
  return res;
}

TripMatrix solve_most_probable_unconstrained(std::span<const double> productions,
                                             std::span<const double> attractions) {
  double total = std::accumulate(productions.begin(), productions.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("margins are all zero");
  TripMatrix t(productions.size(), attractions.size());
  for (std::size_t i = 0; i < productions.size(); ++i)
    for (std::size_t j = 0; j < attractions.size(); ++j)
      t(i, j) = productions[i] * attractions[j] / total;
  return t;
}

MostProbableResult solve_most_probable_budget(std::span<const double> productions,
                                              std::span<const double> attractions,
                                              const TripMatrix& costs, double budget,
                                              double beta_max, double tol) {
  auto lo_res = solve_most_probable(productions, attractions, costs, 0.0);
  auto hi_res = solve_most_probable(productions, attractions, costs, beta_max);
  double scale = std::max(1.0, std::abs(budget));
  if (budget < hi_res.total_cost - tol * scale)
    throw std::invalid_argument("infeasible budget: below the least achievable total cost " +
                                std::to_string(hi_res.total_cost));
  if (budget > lo_res.total_cost + tol * scale)
    throw std::invalid_argument("budget exceeds the cost-blind total " +
                                std::to_string(lo_res.total_cost) + "; beta would be negative");
  // total cost decreases monotonically in beta
  double lo = 0.0, hi = beta_max;
  MostProbableResult mid = lo_res;
  for (int it = 0; it < 200; ++it) {
    double b = 0.5 * (lo + hi);
    mid = solve_most_probable(productions, attractions, costs, b);
    if (std::abs(mid.total_cost - budget) <= tol * scale) break;
    if (mid.total_cost > budget)
      lo = b;
    else
      hi = b;
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  return mid;
}

std::vector<double> multi_mode_split(std::span<const double> mode_costs, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be nonnegative");
  std::vector<double> v(mode_costs.size());
  for (std::size_t m = 0; m < v.size(); ++m) v[m] = -mode_costs[m];
  if (beta == 0.0) return std::vector<double>(v.size(), 1.0 / static_cast<double>(v.size()));
  return mnl_prob(v, beta);
}

}  // namespace demandforge
