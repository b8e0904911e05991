#include "demandforge/routes.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

namespace demandforge {

double path_size_factor(const ModalNetwork& network, std::span<const Route> routes,
                        std::size_t r) {
  if (r >= routes.size()) throw std::out_of_range("route index out of range");
  const Route& route = routes[r];
  if (!(route.length > 0.0))
    throw std::invalid_argument("path size undefined for zero-length route");
  auto counts = link_route_counts(routes);
  double ps = 0.0;
  for (std::size_t a : route.links)
    ps += (network.link(a).length / route.length) / static_cast<double>(counts.at(a));
  return ps;
}

std::map<std::size_t, int> link_route_counts(std::span<const Route> routes) {
  std::map<std::size_t, int> counts;
  for (const auto& route : routes) {
    // a link counted once per route even if listed twice
    std::set<std::size_t> seen(route.links.begin(), route.links.end());
    for (std::size_t a : seen) ++counts[a];
  }
  return counts;
}

void build_incidence(const ModalNetwork& network, RouteChoiceSet& set) {
  set.path_size.assign(set.routes.size(), 1.0);
  for (std::size_t r = 0; r < set.routes.size(); ++r) {
    // routes without links (virtual connectors) carry no overlap
    if (set.routes[r].links.empty()) continue;
    set.path_size[r] = path_size_factor(network, set.routes, r);
  }
}

double route_cost(const ModalNetwork& network, std::span<const double> flows,
                  const Route& route) {
  for (std::size_t a : route.links) {
    if (network.link(a).mode != route.mode)
      throw std::invalid_argument("route link " + std::to_string(a) +
                                  " does not belong to the route's mode");
  }
  return network.route_cost(flows, route.links);
}

namespace {

struct Label {
  double cost = 0.0;
  std::vector<int> nodes;
  std::vector<std::size_t> links;
};

bool label_less(const Label& a, const Label& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  if (a.nodes != b.nodes) return a.nodes < b.nodes;
  return a.links < b.links;
}

double free_flow_cost(const ModalNetwork& net, std::size_t a) { return net.link_cost(a, 0.0); }

// Dijkstra over labels ordered by (cost, node sequence, link sequence).
std::optional<Label> shortest_path(const ModalNetwork& net, int mode, int source, int target,
                                   const std::set<std::size_t>& banned_links,
                                   const std::set<int>& banned_nodes) {
  std::map<int, Label> best;
  std::set<int> done;
  auto cmp = [](const std::pair<Label, int>& x, const std::pair<Label, int>& y) {
    if (label_less(x.first, y.first)) return true;
    if (label_less(y.first, x.first)) return false;
    return x.second < y.second;
  };
  std::set<std::pair<Label, int>, decltype(cmp)> queue(cmp);
  Label start;
  start.nodes = {source};
  best[source] = start;
  queue.insert({start, source});
  while (!queue.empty()) {
    auto [label, node] = *queue.begin();
    queue.erase(queue.begin());
    if (done.count(node)) continue;
    done.insert(node);
    if (node == target) return label;
    for (std::size_t a : net.outgoing(mode, node)) {
      if (banned_links.count(a)) continue;
      int head = net.link(a).head;
      if (banned_nodes.count(head) || done.count(head)) continue;
      if (std::find(label.nodes.begin(), label.nodes.end(), head) != label.nodes.end()) continue;
      Label next = label;
      next.cost += free_flow_cost(net, a);
      next.nodes.push_back(head);
      next.links.push_back(a);
      auto it = best.find(head);
      if (it == best.end() || label_less(next, it->second)) {
        best[head] = next;
        queue.insert({next, head});
      }
    }
  }
  return std::nullopt;
}

Route to_route(const ModalNetwork& net, int mode, const Label& label) {
  Route r;
  r.mode = mode;
  r.nodes = label.nodes;
  r.links = label.links;
  for (std::size_t a : r.links) {
    r.length += net.link(a).length;
    r.free_flow_cost += free_flow_cost(net, a);
  }
  return r;
}

}  // namespace

std::vector<Route> enumerate_routes(const ModalNetwork& network, int origin, int destination,
                                    int mode, std::size_t k) {
  if (k == 0) return {};
  auto first = shortest_path(network, mode, origin, destination, {}, {});
  if (!first) {
    throw std::runtime_error("no route from " + std::to_string(origin) + " to " +
                             std::to_string(destination) + " on mode " +
                             network.mode_names().at(static_cast<std::size_t>(mode)));
  }
  std::vector<Label> accepted{*first};
  std::vector<Label> candidates;

  while (accepted.size() < k) {
    const Label& last = accepted.back();
    for (std::size_t spur = 0; spur + 1 < last.nodes.size(); ++spur) {
      std::vector<std::size_t> root_links(last.links.begin(),
                                          last.links.begin() + static_cast<long>(spur));
      std::set<std::size_t> banned_links;
      for (const auto& p : accepted) {
        if (p.links.size() > spur &&
            std::equal(root_links.begin(), root_links.end(), p.links.begin()))
          banned_links.insert(p.links[spur]);
      }
      std::set<int> banned_nodes(last.nodes.begin(),
                                 last.nodes.begin() + static_cast<long>(spur));
      auto spur_path = shortest_path(network, mode, last.nodes[spur], destination, banned_links,
                                     banned_nodes);
      if (!spur_path) continue;
      Label total;
      total.nodes.assign(last.nodes.begin(), last.nodes.begin() + static_cast<long>(spur));
      total.links = root_links;
      total.nodes.insert(total.nodes.end(), spur_path->nodes.begin(), spur_path->nodes.end());
      total.links.insert(total.links.end(), spur_path->links.begin(), spur_path->links.end());
      for (std::size_t a : total.links) total.cost += free_flow_cost(network, a);
      auto same = [&](const Label& p) { return p.links == total.links; };
      if (std::none_of(candidates.begin(), candidates.end(), same) &&
          std::none_of(accepted.begin(), accepted.end(), same))
        candidates.push_back(std::move(total));
    }
    if (candidates.empty()) break;
    auto best = std::min_element(candidates.begin(), candidates.end(), label_less);
    accepted.push_back(*best);
    candidates.erase(best);
  }

  std::vector<Route> routes;
  routes.reserve(accepted.size());
  for (const auto& label : accepted) routes.push_back(to_route(network, mode, label));
  return routes;
}

Route route_from_nodes(const ModalNetwork& network, int mode, std::span<const int> nodes) {
  if (nodes.size() < 2) throw std::invalid_argument("route needs at least two nodes");
  Label label;
  label.nodes.assign(nodes.begin(), nodes.end());
  for (std::size_t n = 0; n + 1 < nodes.size(); ++n) {
    std::optional<std::size_t> pick;
    for (std::size_t a : network.outgoing(mode, nodes[n])) {
      if (network.link(a).head != nodes[n + 1]) continue;
      if (!pick || free_flow_cost(network, a) < free_flow_cost(network, *pick)) pick = a;
    }
    if (!pick) {
      throw std::invalid_argument("no link " + std::to_string(nodes[n]) + ">" +
                                  std::to_string(nodes[n + 1]) + " on mode " +
                                  network.mode_names().at(static_cast<std::size_t>(mode)));
    }
    label.links.push_back(*pick);
  }
  return to_route(network, mode, label);
}

void RouteSet::set(int origin, int destination, int mode, RouteChoiceSet choice_set) {
  if (choice_set.routes.empty()) throw std::invalid_argument("empty route choice set");
  if (choice_set.path_size.size() != choice_set.routes.size())
    throw std::invalid_argument("path-size vector does not match route count");
  entries_[{origin, destination, mode}] = std::move(choice_set);
}

bool RouteSet::contains(int origin, int destination, int mode) const {
  return entries_.count({origin, destination, mode}) > 0;
}

const RouteChoiceSet& RouteSet::at(int origin, int destination, int mode) const {
  auto it = entries_.find({origin, destination, mode});
  if (it == entries_.end()) {
    throw std::out_of_range("route set missing for (" + std::to_string(origin) + "," +
                            std::to_string(destination) + "," + std::to_string(mode) + ")");
  }
  return it->second;
}

RouteSet RouteSet::enumerate(const ModalNetwork& network, std::span<const int> origins,
                             std::span<const int> destinations, std::size_t k,
                             bool include_intrazonal) {
  RouteSet set;
  for (int i : origins) {
    for (int j : destinations) {
      if (i == j && !include_intrazonal) continue;
      for (std::size_t m = 0; m < network.mode_count(); ++m) {
        RouteChoiceSet cs;
        cs.routes = enumerate_routes(network, i, j, static_cast<int>(m), k);
        build_incidence(network, cs);
        set.set(i, j, static_cast<int>(m), std::move(cs));
      }
    }
  }
  return set;
}

}  // namespace demandforge
