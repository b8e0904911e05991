#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace demandforge {

// Zonal activity system: productions O_i and attractions D_j per zone.
struct ZonalSystem {
  std::vector<int> zone_ids;
  std::vector<double> productions;
  std::vector<double> attractions;

  std::size_t size() const { return zone_ids.size(); }
  // Index of a zone id, throws std::out_of_range when unknown.
  std::size_t index_of(int zone_id) const;
  // Throws std::invalid_argument on negative margins.
  void validate() const;
  // True when sum(O) == sum(D) within the given relative tolerance.
  bool balanced(double rel_tol = 1e-9) const;
};

// One directed link of a mode-specific network. Travel time follows the
// BPR form t0 * (1 + alpha * (f / capacity)^beta); beta == 0 gives a flat,
// capacity-insensitive link (used for transit).
struct Link {
  int mode = 0;
  int tail = 0;
  int head = 0;
  double length = 1.0;     // km
  double free_flow_time = 1.0;  // min
  double capacity = 1.0;   // veh/period
  double alpha = 0.15;
  double beta = 4.0;
  double money_cost = 0.0;  // currency
};

class ModalNetwork {
 public:
  ModalNetwork() = default;
  ModalNetwork(std::vector<std::string> mode_names, std::vector<Link> links,
               double value_of_time);

  const std::vector<std::string>& mode_names() const { return mode_names_; }
  std::size_t mode_count() const { return mode_names_.size(); }
  // Throws std::out_of_range for an unknown mode name.
  int mode_index(const std::string& name) const;

  const std::vector<Link>& links() const { return links_; }
  std::size_t link_count() const { return links_.size(); }
  const Link& link(std::size_t id) const;

  // Currency per minute for the given mode.
  double value_of_time(int mode) const;
  double value_of_time() const { return value_of_time_; }
  void set_mode_value_of_time(int mode, double vot);

  // Links of one mode leaving `node`, ordered by link id.
  std::vector<std::size_t> outgoing(int mode, int node) const;

  // Adds a link and returns its id.
  std::size_t add_link(const Link& link);

  // Travel time t(f) in minutes.
  double travel_time(std::size_t link_id, double flow) const;
  // Generalized cost g = (1/p) t(f) + c.
  double link_cost(std::size_t link_id, double flow) const;
  // d g / d f.
  double link_cost_derivative(std::size_t link_id, double flow) const;
  // Exact integral of g from 0 to f.
  double link_cost_integral(std::size_t link_id, double flow) const;

  // Sum over links of the integral of g; flows indexed by link id.
  double beckmann_value(std::span<const double> flows) const;
  // Additive sum of link costs along a route given as link ids.
  double route_cost(std::span<const double> flows,
                    std::span<const std::size_t> route_links) const;
  // Link costs for the whole flow vector.
  std::vector<double> link_costs(std::span<const double> flows) const;

 private:
  void check_link(const Link& link) const;

  std::vector<std::string> mode_names_;
  std::vector<Link> links_;
  double value_of_time_ = 1.0;
  std::vector<double> mode_vot_;  // <= 0 means "use network value"
};

}  // namespace demandforge
