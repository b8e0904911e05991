#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include "demandforge/choice.hpp"
#include "demandforge/distribution.hpp"
#include "demandforge/estimation.hpp"
#include "demandforge/network.hpp"
#include "demandforge/programs.hpp"
#include "demandforge/routes.hpp"

namespace demandforge::io {

// Malformed or missing input. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 12 significant digits, shortest of fixed / scientific.
std::string format_number(double v);

// Whitespace-separated records; '#' starts a comment, blank lines skipped.
// Each record carries its 1-based line number for error messages.
struct Record {
  std::size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<Record> read_records(std::istream& in);
std::vector<Record> read_records_file(const std::string& path);

// Zone file: `zone O D`.
ZonalSystem read_zones(const std::string& path);
ZonalSystem parse_zones(const std::vector<Record>& records);

// Link file: `mode tail head length t0 capacity alpha beta cost`. Modes are
// names; the mode order is the order of first appearance unless `modes` is
// given.
std::vector<Link> parse_links(const std::vector<Record>& records,
                              std::vector<std::string>& modes, bool allow_new_modes);

// OD cost file: `i j mode cost`. Returns one matrix over the zone system per
// mode, in order of first appearance, with the mode names.
struct OdCosts {
  std::vector<std::string> modes;
  std::vector<TripMatrix> costs;
};
OdCosts read_od_costs(const std::string& path, const ZonalSystem& zones);

// Route file: `i j mode node1>node2>...`.
RouteSet read_routes(const std::string& path, const ModalNetwork& network);
void write_routes(std::ostream& out, const ChoiceHierarchy& h);

// Scenario file with sections [zones] [links] [nests] [attributes] [parameters].
//   [zones]       zone O D   (O > 0: origin, D > 0: destination)
//   [links]       mode tail head length t0 capacity alpha beta cost
//   [nests]       name tau mode...
//   [attributes]  dest i j k value | mode i j mode q value
//   [parameters]  key value...  (theta_dest theta_mode theta_route
//                 value_of_time k_routes beta_dest beta_mode fixed_mode q v)
struct ScenarioFile {
  ZonalSystem zones;
  std::vector<int> origins, destinations;
  std::vector<std::string> modes;
  std::vector<Link> links;
  ModeTree tree;
  std::vector<std::tuple<int, int, std::size_t, double>> dest_attributes;
  std::vector<std::tuple<int, int, std::size_t, std::size_t, double>> mode_attributes;
  double value_of_time = 1.0;
  std::size_t k_routes = 5;
  std::optional<double> theta_dest, theta_mode, theta_route;
  std::vector<double> beta_dest, beta_mode;
  std::vector<std::pair<std::size_t, double>> fixed_mode;

  ModalNetwork network() const;
  // Enumerates routes (k from the file unless overridden) and builds the
  // hierarchy over origins x destinations.
  std::shared_ptr<const ChoiceHierarchy> hierarchy(std::optional<std::size_t> k = {}) const;
  AttributeTable attributes(const ChoiceHierarchy& h) const;
  std::vector<double> demand() const;
  // Parameters from the file; throws InputError when a field is missing.
  ModelParameters parameters() const;
  SyntheticScenario scenario(std::optional<std::size_t> k = {}) const;
};
ScenarioFile read_scenario(const std::string& path);
ScenarioFile parse_scenario(std::istream& in);
// Writes a scenario back out. Origins get O = demand and destinations D = 1.
// Modes are listed nest by nest, so a tree whose modes are not grouped by
// nest comes back reordered.
void write_scenario(std::ostream& out, const SyntheticScenario& s, std::size_t k_routes);

// Observation file: `origin i O`, `od i j T`, `nest i j M T`, `mode i j m T`,
// `link id f`. Nest rows are optional.
ObservationBundle read_observations(const std::string& path, const ChoiceHierarchy& h);
void write_observations(std::ostream& out, const ChoiceHierarchy& h,
                        const ObservationBundle& obs);
// `link id f` rows only.
std::vector<double> read_link_counts(const std::string& path, std::size_t link_count);

// Parameter file: `status converged|nonconverged`, then key/value lines.
void write_parameters(std::ostream& out, const ChoiceHierarchy& h, const ModelParameters& p,
                      bool converged);
struct ParameterFile {
  ModelParameters parameters;
  bool converged = false;
};
ParameterFile read_parameters(const std::string& path, const ChoiceHierarchy& h,
                              std::size_t dest_attributes, std::size_t mode_attributes);

// CSV writers.
void write_trip_matrix(std::ostream& out, const ZonalSystem& zones, const TripMatrix& t);
void write_od_trips(std::ostream& out, const ChoiceHierarchy& h, const TripTables& t);
void write_od_mode_trips(std::ostream& out, const ChoiceHierarchy& h, const TripTables& t);
void write_route_trips(std::ostream& out, const ChoiceHierarchy& h, const TripTables& t);
void write_link_flows(std::ostream& out, const ChoiceHierarchy& h,
                      const std::vector<double>& flows);

// Saved inner solution: `label index value` per variable.
void write_solution(std::ostream& out, const ConvexProgram& p, const std::vector<double>& x);
std::vector<double> read_solution(const std::string& path, std::size_t dimension);

}  // namespace demandforge::io
