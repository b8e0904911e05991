#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace demandforge {

// Dense origin x destination matrix, row-major.
struct TripMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  TripMatrix() = default;
  TripMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
  double total() const;
};

struct GravityResult {
  TripMatrix trips;
  std::vector<double> balancing_origin;       // A_i
  std::vector<double> balancing_destination;  // B_j
  int iterations = 0;
  double margin_error = 0.0;  // max relative margin residual
};

// Doubly constrained gravity model with f(c) = exp(-beta c), balanced by
// iterative proportional fitting starting from A = B = 1. Throws
// std::invalid_argument for unbalanced margins or a nonzero margin whose
// row/column has no positive-weight cell.
GravityResult gravity_balance(std::span<const double> productions,
                              std::span<const double> attractions, const TripMatrix& costs,
                              double beta, double tol = 1e-10, int max_iter = 100000);

struct MostProbableResult {
  TripMatrix trips;
  double beta = 0.0;
  std::vector<double> origin_duals;       // lambda_i
  std::vector<double> destination_duals;  // mu_j
  int iterations = 0;
  double total_cost = 0.0;
};

// Entropy-maximizing trip table with the cost dual beta given. Solved as the
// unconstrained convex dual in (lambda, mu) by damped Newton; independent of
// the balancing iteration in gravity_balance.
MostProbableResult solve_most_probable(std::span<const double> productions,
                                       std::span<const double> attractions,
                                       const TripMatrix& costs, double beta,
                                       double tol = 1e-12);

// Entropy-maximizing trip table with no cost constraint: T_ij = O_i D_j / T.
TripMatrix solve_most_probable_unconstrained(std::span<const double> productions,
                                             std::span<const double> attractions);

// Budget form: finds beta in [0, beta_max] with sum T c = budget by bisection.
// Throws std::invalid_argument when the budget is below the least cost
// reachable at beta_max or above the cost-blind total.
MostProbableResult solve_most_probable_budget(std::span<const double> productions,
                                              std::span<const double> attractions,
                                              const TripMatrix& costs, double budget,
                                              double beta_max = 1e3, double tol = 1e-10);

// Modal shares exp(-beta c_m) / sum exp(-beta c_m').
std::vector<double> multi_mode_split(std::span<const double> mode_costs, double beta);

}  // namespace demandforge
