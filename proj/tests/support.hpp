#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "demandforge/choice.hpp"
#include "demandforge/estimation.hpp"
#include "demandforge/programs.hpp"
#include "demandforge/routes.hpp"

namespace testsupport {

using namespace demandforge;

// Random interior point: each block gets positive entries scaled to its mass.
inline std::vector<double> random_interior(const ConvexProgram& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> x(p.dimension());
  for (const auto& b : p.blocks()) {
    double s = 0.0;
    for (std::size_t k = 0; k < b.size; ++k) s += x[b.offset + k] = u(rng);
    for (std::size_t k = 0; k < b.size; ++k) x[b.offset + k] *= b.mass / s;
  }
  return x;
}

// Max over coordinates of |g - fd| / max(1, |g|), central differences with a
// step relative to the coordinate.
inline double gradient_error(const ConvexProgram& p, std::span<const double> x) {
  std::vector<double> g(p.dimension());
  p.gradient(x, g);
  std::vector<double> y(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    double h = 1e-6 * std::max(1.0, std::abs(x[k]));
    h = std::min(h, 0.5 * x[k]);
    y[k] = x[k] + h;
    double fp = p.value(y);
    y[k] = x[k] - h;
    double fm = p.value(y);
    y[k] = x[k];
    double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(g[k] - fd) / std::max(1.0, std::abs(g[k])));
  }
  return worst;
}

// Origin 1, destination 2, one car mode, two routes 1-3-2 and 1-4-2 of
// different lengths, BPR on the first link of each.
inline std::shared_ptr<const ChoiceHierarchy> two_route_toy(double alpha = 0.15) {
  std::vector<Link> links = {
      {0, 1, 3, 1.0, 10.0, 40.0, alpha, 4.0, 0.0}, {0, 3, 2, 1.0, 2.0, 1e6, 0.0, 0.0, 0.0},
      {0, 1, 4, 1.0, 13.0, 80.0, alpha, 4.0, 0.0}, {0, 4, 2, 1.0, 2.0, 1e6, 0.0, 0.0, 0.0}};
  ModalNetwork net({"car"}, links, 1.0);
  return make_hierarchy(net, {1}, {2}, ModeTree::single_nest(1), 2);
}

// Two origins, two destinations, car and a bus/rail nest; one route per mode
// for bus and rail, two for car.
inline std::shared_ptr<const ChoiceHierarchy> small_network(double alpha, double tau = 0.6) {
  std::vector<Link> links;
  auto add = [&](int m, int a, int b, double len, double t0, double cap, double cost) {
    links.push_back({m, a, b, len, t0, cap, alpha, 4.0, cost});
  };
  for (int o : {1, 2})
    for (int d : {3, 4}) {
      double base = 1.0 + 0.3 * o + 0.2 * d;
      add(0, o, 10 * o + d, base, 2.0 * base, 30.0, 0.2 * base);  // car via a
      add(0, 10 * o + d, d, 1.0, 2.0, 40.0, 0.2);
      add(0, o, 50 + 10 * o + d, base + 0.5, 2.0 * base, 50.0, 0.2 * base);  // car via b
      add(0, 50 + 10 * o + d, d, 1.0, 2.0, 40.0, 0.2);
      add(1, o, d, base, 3.0 * base, 60.0, 0.05 * base);
      add(2, o, d, base, 1.5 * base, 60.0, 0.1 * base);
    }
  ModalNetwork net({"car", "bus", "rail"}, links, 0.5);
  ModeTree tree;
  tree.nest_of = {0, 1, 1};
  tree.tau = {1.0, tau};
  tree.nest_names = {"car", "transit"};
  return make_hierarchy(net, {1, 2}, {3, 4}, tree, 3);
}

inline AttributeTable small_attributes(const ChoiceHierarchy& h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto x = AttributeTable::zeros(h, 2, 2);
  for (auto& v : x.dest) v = u(rng);
  for (auto& v : x.mode) v = u(rng);
  return x;
}

}  // namespace testsupport
