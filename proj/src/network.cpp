#include "demandforge/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace demandforge {

std::size_t ZonalSystem::index_of(int zone_id) const {
  auto it = std::find(zone_ids.begin(), zone_ids.end(), zone_id);
  if (it == zone_ids.end())
    throw std::out_of_range("unknown zone " + std::to_string(zone_id));
  return static_cast<std::size_t>(it - zone_ids.begin());
}

void ZonalSystem::validate() const {
  if (productions.size() != zone_ids.size() || attractions.size() != zone_ids.size())
    throw std::invalid_argument("zonal system: margin vectors do not match zone count");
  for (std::size_t i = 0; i < zone_ids.size(); ++i) {
    if (!(productions[i] >= 0.0) || !(attractions[i] >= 0.0))
      throw std::invalid_argument("zonal system: negative margin at zone " +
                                  std::to_string(zone_ids[i]));
  }
}

bool ZonalSystem::balanced(double rel_tol) const {
  double o = std::accumulate(productions.begin(), productions.end(), 0.0);
  double d = std::accumulate(attractions.begin(), attractions.end(), 0.0);
  return std::abs(o - d) <= rel_tol * std::max({1.0, std::abs(o), std::abs(d)});
}

ModalNetwork::ModalNetwork(std::vector<std::string> mode_names, std::vector<Link> links,
                           double value_of_time)
    : mode_names_(std::move(mode_names)),
      value_of_time_(value_of_time),
      mode_vot_(mode_names_.size(), -1.0) {
  if (!(value_of_time > 0.0)) throw std::invalid_argument("value of time must be positive");
  links_.reserve(links.size());
  for (const auto& l : links) add_link(l);
}

int ModalNetwork::mode_index(const std::string& name) const {
  auto it = std::find(mode_names_.begin(), mode_names_.end(), name);
  if (it == mode_names_.end()) throw std::out_of_range("unknown mode '" + name + "'");
  return static_cast<int>(it - mode_names_.begin());
}

const Link& ModalNetwork::link(std::size_t id) const {
  if (id >= links_.size()) throw std::out_of_range("unknown link " + std::to_string(id));
  return links_[id];
}

double ModalNetwork::value_of_time(int mode) const {
  if (mode < 0 || static_cast<std::size_t>(mode) >= mode_names_.size())
    throw std::out_of_range("unknown mode index " + std::to_string(mode));
  double v = mode_vot_[static_cast<std::size_t>(mode)];
  return v > 0.0 ? v : value_of_time_;
}

void ModalNetwork::set_mode_value_of_time(int mode, double vot) {
  if (mode < 0 || static_cast<std::size_t>(mode) >= mode_names_.size())
    throw std::out_of_range("unknown mode index " + std::to_string(mode));
  if (!(vot > 0.0)) throw std::invalid_argument("value of time must be positive");
  mode_vot_[static_cast<std::size_t>(mode)] = vot;
}

void ModalNetwork::check_link(const Link& l) const {
  if (l.mode < 0 || static_cast<std::size_t>(l.mode) >= mode_names_.size())
    throw std::out_of_range("link references unknown mode index " + std::to_string(l.mode));
  if (!(l.length > 0.0) || !(l.free_flow_time > 0.0) || !(l.capacity > 0.0))
    throw std::invalid_argument("link length, free-flow time and capacity must be positive");
  if (!(l.alpha >= 0.0) || !(l.beta >= 0.0))
    throw std::invalid_argument("BPR alpha and beta must be nonnegative");
  if (!std::isfinite(l.money_cost)) throw std::invalid_argument("link cost must be finite");
}

std::size_t ModalNetwork::add_link(const Link& l) {
  check_link(l);
  links_.push_back(l);
  return links_.size() - 1;
}

std::vector<std::size_t> ModalNetwork::outgoing(int mode, int node) const {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < links_.size(); ++a)
    if (links_[a].mode == mode && links_[a].tail == node) out.push_back(a);
  return out;
}

namespace {

void check_flow(double flow) {
  if (!(flow >= 0.0)) throw std::domain_error("link flow must be nonnegative");
}

}  // namespace

double ModalNetwork::travel_time(std::size_t link_id, double flow) const {
  const Link& l = link(link_id);
  check_flow(flow);
  if (l.beta == 0.0) return l.free_flow_time * (1.0 + l.alpha);
  return l.free_flow_time * (1.0 + l.alpha * std::pow(flow / l.capacity, l.beta));
}

double ModalNetwork::link_cost(std::size_t link_id, double flow) const {
  const Link& l = link(link_id);
  return value_of_time(l.mode) * travel_time(link_id, flow) + l.money_cost;
}

double ModalNetwork::link_cost_derivative(std::size_t link_id, double flow) const {
  const Link& l = link(link_id);
  check_flow(flow);
  if (l.beta == 0.0 || l.alpha == 0.0) return 0.0;
  double dt = l.free_flow_time * l.alpha * l.beta *
              std::pow(flow / l.capacity, l.beta - 1.0) / l.capacity;
  return value_of_time(l.mode) * dt;
}

double ModalNetwork::link_cost_integral(std::size_t link_id, double flow) const {
  const Link& l = link(link_id);
  check_flow(flow);
  double time_integral;
  if (l.beta == 0.0) {
    time_integral = l.free_flow_time * (1.0 + l.alpha) * flow;
  } else {
    time_integral = l.free_flow_time *
                    (flow + l.alpha * flow * std::pow(flow / l.capacity, l.beta) /
                                (l.beta + 1.0));
  }
  return value_of_time(l.mode) * time_integral + l.money_cost * flow;
}

double ModalNetwork::beckmann_value(std::span<const double> flows) const {
  if (flows.size() != links_.size())
    throw std::invalid_argument("flow vector size does not match link count");
  double total = 0.0;
  for (std::size_t a = 0; a < links_.size(); ++a) total += link_cost_integral(a, flows[a]);
  return total;
}

double ModalNetwork::route_cost(std::span<const double> flows,
                                std::span<const std::size_t> route_links) const {
  double total = 0.0;
  for (std::size_t a : route_links) {
    if (a >= flows.size()) throw std::out_of_range("route references missing link");
    total += link_cost(a, flows[a]);
  }
  return total;
}

std::vector<double> ModalNetwork::link_costs(std::span<const double> flows) const {
  if (flows.size() != links_.size())
    throw std::invalid_argument("flow vector size does not match link count");
  std::vector<double> g(links_.size());
  for (std::size_t a = 0; a < links_.size(); ++a) g[a] = link_cost(a, flows[a]);
  return g;
}

}  // namespace demandforge
