#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "demandforge/network.hpp"

namespace demandforge {

struct Route {
  int mode = 0;
  std::vector<int> nodes;          // tail of first link ... head of last link
  std::vector<std::size_t> links;  // link ids in travel order
  double length = 0.0;             // km
  double free_flow_cost = 0.0;     // generalized cost at zero flow
};

// Routes available to one (origin, destination, mode) triple, together with
// their path-size factors.
struct RouteChoiceSet {
  std::vector<Route> routes;
  std::vector<double> path_size;
};

// Path-size factor of route r within a choice set:
//   PS_r = sum_{a in r} (l_a / L_r) / (number of routes in the set using a).
// Throws std::invalid_argument for a zero-length route.
double path_size_factor(const ModalNetwork& network, std::span<const Route> routes,
                        std::size_t r);

// Incidence count per link: how many routes of the set traverse each link.
std::map<std::size_t, int> link_route_counts(std::span<const Route> routes);

// Recomputes path sizes for every route in the set.
void build_incidence(const ModalNetwork& network, RouteChoiceSet& set);

// Up to k loopless paths from `origin` to `destination` in the mode's
// network, by ascending free-flow generalized cost, ties broken by
// lexicographic node sequence. Throws std::runtime_error naming the triple if
// the pair is disconnected.
std::vector<Route> enumerate_routes(const ModalNetwork& network, int origin, int destination,
                                    int mode, std::size_t k);

// Builds a route from a node sequence, choosing the cheapest free-flow link
// for each consecutive node pair. Throws when a hop has no link.
Route route_from_nodes(const ModalNetwork& network, int mode, std::span<const int> nodes);

// Route generalized cost under the given link flows; checks that every link
// belongs to the route's mode.
double route_cost(const ModalNetwork& network, std::span<const double> flows,
                  const Route& route);

// Frozen route sets keyed by (origin zone id, destination zone id, mode).
class RouteSet {
 public:
  using Key = std::tuple<int, int, int>;

  void set(int origin, int destination, int mode, RouteChoiceSet choice_set);
  bool contains(int origin, int destination, int mode) const;
  const RouteChoiceSet& at(int origin, int destination, int mode) const;
  const std::map<Key, RouteChoiceSet>& entries() const { return entries_; }

  // Enumerates k routes for every origin/destination/mode combination of the
  // given zones (skipping i == j unless include_intrazonal).
  static RouteSet enumerate(const ModalNetwork& network, std::span<const int> origins,
                            std::span<const int> destinations, std::size_t k,
                            bool include_intrazonal = false);

 private:
  std::map<Key, RouteChoiceSet> entries_;
};

}  // namespace demandforge
