#include "demandforge/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace demandforge::io {

std::string format_number(double v) {
  if (v == 0.0) return "0";  // no "-0"
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::vector<Record> read_records(std::istream& in) {
  std::vector<Record> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    Record r;
    r.line = n;
    std::string tok;
    while (ss >> tok) r.fields.push_back(tok);
    if (!r.fields.empty()) out.push_back(std::move(r));
  }
  return out;
}

std::vector<Record> read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_records(in);
}

namespace {

[[noreturn]] void fail(const Record& r, const std::string& what) {
  throw InputError("line " + std::to_string(r.line) + ": " + what);
}

double to_double(const Record& r, std::size_t k) {
  if (k >= r.fields.size()) fail(r, "missing field " + std::to_string(k + 1));
  const std::string& s = r.fields[k];
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) fail(r, "not a number: " + s);
  return v;
}

long to_int(const Record& r, std::size_t k) {
  if (k >= r.fields.size()) fail(r, "missing field " + std::to_string(k + 1));
  const std::string& s = r.fields[k];
  char* end = nullptr;
  long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') fail(r, "not an integer: " + s);
  return v;
}

void expect_fields(const Record& r, std::size_t n) {
  if (r.fields.size() != n)
    fail(r, "expected " + std::to_string(n) + " fields, got " + std::to_string(r.fields.size()));
}

std::size_t mode_of(const Record& r, const std::string& name,
                    const std::vector<std::string>& modes) {
  auto it = std::find(modes.begin(), modes.end(), name);
  if (it == modes.end()) fail(r, "unknown mode " + name);
  return static_cast<std::size_t>(it - modes.begin());
}

std::size_t index_in(const Record& r, const std::vector<int>& ids, long id, const char* what) {
  auto it = std::find(ids.begin(), ids.end(), static_cast<int>(id));
  if (it == ids.end()) fail(r, std::string("unknown ") + what + " " + std::to_string(id));
  return static_cast<std::size_t>(it - ids.begin());
}

}  // namespace

ZonalSystem parse_zones(const std::vector<Record>& records) {
  ZonalSystem z;
  for (const auto& r : records) {
    expect_fields(r, 3);
    int id = static_cast<int>(to_int(r, 0));
    if (std::find(z.zone_ids.begin(), z.zone_ids.end(), id) != z.zone_ids.end())
      fail(r, "duplicate zone " + std::to_string(id));
    z.zone_ids.push_back(id);
    z.productions.push_back(to_double(r, 1));
    z.attractions.push_back(to_double(r, 2));
  }
  if (z.zone_ids.empty()) throw InputError("zone file has no zones");
  try {
    z.validate();
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
  return z;
}

ZonalSystem read_zones(const std::string& path) { return parse_zones(read_records_file(path)); }

std::vector<Link> parse_links(const std::vector<Record>& records,
                              std::vector<std::string>& modes, bool allow_new_modes) {
  std::vector<Link> links;
  for (const auto& r : records) {
    expect_fields(r, 9);
    const std::string& name = r.fields[0];
    auto it = std::find(modes.begin(), modes.end(), name);
    if (it == modes.end()) {
      if (!allow_new_modes) fail(r, "unknown mode " + name);
      modes.push_back(name);
      it = modes.end() - 1;
    }
    Link l;
    l.mode = static_cast<int>(it - modes.begin());
    l.tail = static_cast<int>(to_int(r, 1));
    l.head = static_cast<int>(to_int(r, 2));
    l.length = to_double(r, 3);
    l.free_flow_time = to_double(r, 4);
    l.capacity = to_double(r, 5);
    l.alpha = to_double(r, 6);
    l.beta = to_double(r, 7);
    l.money_cost = to_double(r, 8);
    if (!(l.length > 0.0) || !(l.free_flow_time > 0.0) || !(l.capacity > 0.0))
      fail(r, "link length, free-flow time and capacity must be positive");
    if (l.alpha < 0.0 || l.beta < 0.0) fail(r, "BPR alpha and beta must be non-negative");
    links.push_back(l);
  }
  return links;
}

OdCosts read_od_costs(const std::string& path, const ZonalSystem& zones) {
  OdCosts c;
  std::vector<std::vector<bool>> seen;
  for (const auto& r : read_records_file(path)) {
    expect_fields(r, 4);
    std::size_t i = index_in(r, zones.zone_ids, to_int(r, 0), "zone");
    std::size_t j = index_in(r, zones.zone_ids, to_int(r, 1), "zone");
    auto it = std::find(c.modes.begin(), c.modes.end(), r.fields[2]);
    if (it == c.modes.end()) {
      c.modes.push_back(r.fields[2]);
      c.costs.emplace_back(zones.size(), zones.size(), 0.0);
      seen.emplace_back(zones.size() * zones.size(), false);
      it = c.modes.end() - 1;
    }
    auto m = static_cast<std::size_t>(it - c.modes.begin());
    c.costs[m](i, j) = to_double(r, 3);
    seen[m][i * zones.size() + j] = true;
  }
  if (c.modes.empty()) throw InputError(path + ": no OD costs");
  for (std::size_t m = 0; m < c.modes.size(); ++m)
    for (std::size_t k = 0; k < seen[m].size(); ++k)
      if (!seen[m][k])
        throw InputError(path + ": missing cost for zones " +
                         std::to_string(zones.zone_ids[k / zones.size()]) + " " +
                         std::to_string(zones.zone_ids[k % zones.size()]) + " mode " +
                         c.modes[m]);
  return c;
}

RouteSet read_routes(const std::string& path, const ModalNetwork& network) {
  std::map<RouteSet::Key, RouteChoiceSet> sets;
  for (const auto& r : read_records_file(path)) {
    expect_fields(r, 4);
    int i = static_cast<int>(to_int(r, 0)), j = static_cast<int>(to_int(r, 1));
    int m;
    try {
      m = network.mode_index(r.fields[2]);
    } catch (const std::exception&) {
      fail(r, "unknown mode " + r.fields[2]);
    }
    std::vector<int> nodes;
    std::stringstream ss(r.fields[3]);
    std::string tok;
    while (std::getline(ss, tok, '>')) {
      Record t{r.line, {tok}};
      nodes.push_back(static_cast<int>(to_int(t, 0)));
    }
    if (nodes.size() < 2 || nodes.front() != i || nodes.back() != j)
      fail(r, "route must run from origin to destination");
    try {
      sets[{i, j, m}].routes.push_back(route_from_nodes(network, m, nodes));
    } catch (const std::exception& e) {
      fail(r, e.what());
    }
  }
  RouteSet rs;
  for (auto& [key, cs] : sets) {
    build_incidence(network, cs);
    rs.set(std::get<0>(key), std::get<1>(key), std::get<2>(key), std::move(cs));
  }
  return rs;
}

void write_routes(std::ostream& out, const ChoiceHierarchy& h) {
  out << "# i j mode nodes path_size\n";
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j)
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r) {
          out << h.origins()[i] << ' ' << h.destinations()[j] << ' '
              << h.network().mode_names()[m] << ' ';
          const auto& nodes = h.route(r).nodes;
          for (std::size_t k = 0; k < nodes.size(); ++k) out << (k ? ">" : "") << nodes[k];
          out << "  # PS " << format_number(h.path_size(r)) << '\n';
        }
      }
}

// ---------------------------------------------------------------------------

ModalNetwork ScenarioFile::network() const {
  try {
    return ModalNetwork(modes, links, value_of_time);
  } catch (const std::exception& e) {
    throw InputError(std::string("network: ") + e.what());
  }
}

std::shared_ptr<const ChoiceHierarchy> ScenarioFile::hierarchy(
    std::optional<std::size_t> k) const {
  try {
    if (links.empty()) {
      // destination / mode only: one link-free route per (i, j, m)
      RouteSet rs;
      for (int i : origins)
        for (int j : destinations)
          for (std::size_t m = 0; m < modes.size(); ++m) {
            RouteChoiceSet cs;
            Route r;
            r.mode = static_cast<int>(m);
            cs.routes.push_back(r);
            cs.path_size.push_back(1.0);
            rs.set(i, j, static_cast<int>(m), std::move(cs));
          }
      return std::make_shared<const ChoiceHierarchy>(network(), origins, destinations, tree, rs);
    }
    return make_hierarchy(network(), origins, destinations, tree, k.value_or(k_routes));
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError(std::string("hierarchy: ") + e.what());
  }
}

AttributeTable ScenarioFile::attributes(const ChoiceHierarchy& h) const {
  std::size_t nk = beta_dest.size(), nq = beta_mode.size();
  for (const auto& a : dest_attributes) nk = std::max(nk, std::get<2>(a) + 1);
  for (const auto& a : mode_attributes) nq = std::max(nq, std::get<3>(a) + 1);
  auto t = AttributeTable::zeros(h, nk, nq);
  auto oi = [&](int id) {
    auto it = std::find(h.origins().begin(), h.origins().end(), id);
    if (it == h.origins().end()) throw InputError("attribute for unknown origin " + std::to_string(id));
    return static_cast<std::size_t>(it - h.origins().begin());
  };
  auto dj = [&](int id) {
    auto it = std::find(h.destinations().begin(), h.destinations().end(), id);
    if (it == h.destinations().end())
      throw InputError("attribute for unknown destination " + std::to_string(id));
    return static_cast<std::size_t>(it - h.destinations().begin());
  };
  for (const auto& [i, j, k, v] : dest_attributes) t.dest_at(h, oi(i), dj(j), k) = v;
  for (const auto& [i, j, m, q, v] : mode_attributes) t.mode_at(h, oi(i), dj(j), m, q) = v;
  return t;
}

std::vector<double> ScenarioFile::demand() const {
  std::vector<double> o;
  for (int id : origins) o.push_back(zones.productions[zones.index_of(id)]);
  return o;
}

ModelParameters ScenarioFile::parameters() const {
  if (!theta_dest) throw InputError("scenario: missing theta_dest");
  if (!theta_mode) throw InputError("scenario: missing theta_mode");
  if (!theta_route) throw InputError("scenario: missing theta_route");
  ModelParameters p;
  p.theta_dest = *theta_dest;
  p.theta_mode = *theta_mode;
  p.theta_route = *theta_route;
  p.tau = tree.tau;
  p.beta_dest = beta_dest;
  p.beta_mode = beta_mode;
  return p;
}

SyntheticScenario ScenarioFile::scenario(std::optional<std::size_t> k) const {
  SyntheticScenario s;
  s.name = "scenario";
  s.hierarchy = hierarchy(k);
  s.attributes = attributes(*s.hierarchy);
  s.parameters = parameters();
  s.parameters.beta_dest.resize(s.attributes.dest_attribute_count, 0.0);
  s.parameters.beta_mode.resize(s.attributes.mode_attribute_count, 0.0);
  s.demand = demand();
  s.fixed_mode_coefficients = fixed_mode;
  try {
    s.parameters.validate(*s.hierarchy);
  } catch (const std::exception& e) {
    throw InputError(std::string("scenario parameters: ") + e.what());
  }
  return s;
}

ScenarioFile parse_scenario(std::istream& in) {
  ScenarioFile sf;
  std::map<std::string, std::vector<Record>> sections;
  std::string current;
  for (auto& r : read_records(in)) {
    const std::string& f0 = r.fields[0];
    if (f0.size() > 2 && f0.front() == '[' && f0.back() == ']') {
      current = f0.substr(1, f0.size() - 2);
      if (current != "zones" && current != "links" && current != "nests" &&
          current != "attributes" && current != "parameters")
        fail(r, "unknown section " + f0);
      sections[current];
      continue;
    }
    if (current.empty()) fail(r, "record outside any section");
    sections[current].push_back(std::move(r));
  }
  for (const char* s : {"zones", "links", "nests"})
    if (!sections.count(s)) throw InputError(std::string("scenario: missing [") + s + "] section");

  sf.zones = parse_zones(sections["zones"]);
  for (std::size_t z = 0; z < sf.zones.size(); ++z) {
    if (sf.zones.productions[z] > 0.0) sf.origins.push_back(sf.zones.zone_ids[z]);
    if (sf.zones.attractions[z] > 0.0) sf.destinations.push_back(sf.zones.zone_ids[z]);
  }
  if (sf.origins.empty() || sf.destinations.empty())
    throw InputError("scenario: need at least one origin (O > 0) and one destination (D > 0)");

  // nests define the mode order
  for (const auto& r : sections["nests"]) {
    if (r.fields.size() < 3) fail(r, "nest row needs: name tau mode...");
    double tau = to_double(r, 1);
    sf.tree.nest_names.push_back(r.fields[0]);
    sf.tree.tau.push_back(tau);
    for (std::size_t k = 2; k < r.fields.size(); ++k) {
      if (std::find(sf.modes.begin(), sf.modes.end(), r.fields[k]) != sf.modes.end())
        fail(r, "mode " + r.fields[k] + " listed twice");
      sf.modes.push_back(r.fields[k]);
      sf.tree.nest_of.push_back(static_cast<int>(sf.tree.tau.size() - 1));
    }
  }
  try {
    sf.tree.validate();
  } catch (const std::exception& e) {
    throw InputError(std::string("nests: ") + e.what());
  }
  sf.links = parse_links(sections["links"], sf.modes, false);

  for (const auto& r : sections["attributes"]) {
    if (r.fields[0] == "dest") {
      expect_fields(r, 5);
      long k = to_int(r, 3);
      if (k < 0) fail(r, "attribute index must be >= 0");
      sf.dest_attributes.emplace_back(static_cast<int>(to_int(r, 1)), static_cast<int>(to_int(r, 2)),
                                      static_cast<std::size_t>(k), to_double(r, 4));
    } else if (r.fields[0] == "mode") {
      expect_fields(r, 6);
      std::size_t m = mode_of(r, r.fields[3], sf.modes);
      long q = to_int(r, 4);
      if (q < 0) fail(r, "attribute index must be >= 0");
      sf.mode_attributes.emplace_back(static_cast<int>(to_int(r, 1)), static_cast<int>(to_int(r, 2)),
                                      m, static_cast<std::size_t>(q), to_double(r, 5));
    } else {
      fail(r, "attribute rows start with dest or mode");
    }
  }

  for (const auto& r : sections["parameters"]) {
    const std::string& key = r.fields[0];
    auto one = [&]() {
      expect_fields(r, 2);
      return to_double(r, 1);
    };
    if (key == "theta_dest") sf.theta_dest = one();
    else if (key == "theta_mode") sf.theta_mode = one();
    else if (key == "theta_route") sf.theta_route = one();
    else if (key == "value_of_time") sf.value_of_time = one();
    else if (key == "k_routes") {
      long k = static_cast<long>(one());
      if (k < 1) fail(r, "k_routes must be >= 1");
      sf.k_routes = static_cast<std::size_t>(k);
    } else if (key == "beta_dest" || key == "beta_mode") {
      auto& v = key == "beta_dest" ? sf.beta_dest : sf.beta_mode;
      v.clear();
      for (std::size_t k = 1; k < r.fields.size(); ++k) v.push_back(to_double(r, k));
    } else if (key == "fixed_mode") {
      expect_fields(r, 3);
      long q = to_int(r, 1);
      if (q < 0) fail(r, "fixed_mode index must be >= 0");
      sf.fixed_mode.emplace_back(static_cast<std::size_t>(q), to_double(r, 2));
    } else {
      fail(r, "unknown parameter " + key);
    }
  }
  return sf;
}

ScenarioFile read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return parse_scenario(in);
}

// ---------------------------------------------------------------------------

ObservationBundle read_observations(const std::string& path, const ChoiceHierarchy& h) {
  ObservationBundle obs;
  const std::size_t nn = h.nest_count(), nm = h.mode_count();
  obs.origin_totals.assign(h.origin_count(), 0.0);
  obs.od.assign(h.od_count(), 0.0);
  obs.od_mode.assign(h.odm_count(), 0.0);
  std::vector<double> nest(h.od_count() * nn, 0.0);
  bool any_nest = false;
  std::vector<bool> got_o(h.origin_count()), got_od(h.od_count()), got_m(h.odm_count());
  std::vector<double> links;
  std::vector<std::string> modes = h.network().mode_names();
  for (const auto& r : read_records_file(path)) {
    const std::string& kind = r.fields[0];
    if (kind == "origin") {
      expect_fields(r, 3);
      std::size_t i = index_in(r, h.origins(), to_int(r, 1), "origin");
      obs.origin_totals[i] = to_double(r, 2);
      got_o[i] = true;
    } else if (kind == "od") {
      expect_fields(r, 4);
      std::size_t i = index_in(r, h.origins(), to_int(r, 1), "origin");
      std::size_t j = index_in(r, h.destinations(), to_int(r, 2), "destination");
      obs.od[h.od(i, j)] = to_double(r, 3);
      got_od[h.od(i, j)] = true;
    } else if (kind == "nest") {
      expect_fields(r, 5);
      std::size_t i = index_in(r, h.origins(), to_int(r, 1), "origin");
      std::size_t j = index_in(r, h.destinations(), to_int(r, 2), "destination");
      const auto& names = h.tree().nest_names;
      auto it = std::find(names.begin(), names.end(), r.fields[3]);
      if (it == names.end()) fail(r, "unknown nest " + r.fields[3]);
      nest[h.odn(i, j, static_cast<std::size_t>(it - names.begin()))] = to_double(r, 4);
      any_nest = true;
    } else if (kind == "mode") {
      expect_fields(r, 5);
      std::size_t i = index_in(r, h.origins(), to_int(r, 1), "origin");
      std::size_t j = index_in(r, h.destinations(), to_int(r, 2), "destination");
      std::size_t m = mode_of(r, r.fields[3], modes);
      obs.od_mode[h.odm(i, j, m)] = to_double(r, 4);
      got_m[h.odm(i, j, m)] = true;
    } else if (kind == "link") {
      expect_fields(r, 3);
      long id = to_int(r, 1);
      if (id < 0 || static_cast<std::size_t>(id) >= h.link_count()) fail(r, "unknown link id");
      links.resize(h.link_count(), 0.0);
      links[static_cast<std::size_t>(id)] = to_double(r, 2);
    } else {
      fail(r, "unknown observation kind " + kind);
    }
  }
  auto all = [](const std::vector<bool>& v) { return std::all_of(v.begin(), v.end(), [](bool b) { return b; }); };
  if (!all(got_o)) throw InputError("observations: missing origin totals");
  if (!all(got_od)) throw InputError("observations: missing od rows");
  if (!all(got_m)) throw InputError("observations: missing mode rows");
  if (any_nest) obs.od_nest = std::move(nest);
  obs.link_flows = std::move(links);
  (void)nm;
  ObservationBundle check = obs;
  check.complete_nest_totals(h);
  try {
    check.validate(h);
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
  return obs;
}

void write_observations(std::ostream& out, const ChoiceHierarchy& h,
                        const ObservationBundle& obs) {
  const auto& modes = h.network().mode_names();
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    out << "origin " << h.origins()[i] << ' ' << format_number(obs.origin_totals[i]) << '\n';
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      int oi = h.origins()[i], dj = h.destinations()[j];
      out << "od " << oi << ' ' << dj << ' ' << format_number(obs.od[h.od(i, j)]) << '\n';
      if (!obs.od_nest.empty())
        for (std::size_t n = 0; n < h.nest_count(); ++n)
          out << "nest " << oi << ' ' << dj << ' ' << h.tree().nest_names[n] << ' '
              << format_number(obs.od_nest[h.odn(i, j, n)]) << '\n';
      for (std::size_t m = 0; m < h.mode_count(); ++m)
        out << "mode " << oi << ' ' << dj << ' ' << modes[m] << ' '
            << format_number(obs.od_mode[h.odm(i, j, m)]) << '\n';
    }
  for (std::size_t a = 0; a < obs.link_flows.size(); ++a)
    out << "link " << a << ' ' << format_number(obs.link_flows[a]) << '\n';
}

std::vector<double> read_link_counts(const std::string& path, std::size_t link_count) {
  std::vector<double> f(link_count, 0.0);
  std::vector<bool> got(link_count, false);
  for (const auto& r : read_records_file(path)) {
    if (r.fields[0] != "link") continue;
    expect_fields(r, 3);
    long id = to_int(r, 1);
    if (id < 0 || static_cast<std::size_t>(id) >= link_count) fail(r, "unknown link id");
    f[static_cast<std::size_t>(id)] = to_double(r, 2);
    got[static_cast<std::size_t>(id)] = true;
  }
  for (std::size_t a = 0; a < link_count; ++a)
    if (!got[a]) throw InputError(path + ": missing count for link " + std::to_string(a));
  return f;
}

// ---------------------------------------------------------------------------

void write_parameters(std::ostream& out, const ChoiceHierarchy& h, const ModelParameters& p,
                      bool converged) {
  out << "status " << (converged ? "converged" : "nonconverged") << '\n';
  out << "theta_dest " << format_number(p.theta_dest) << '\n';
  out << "theta_mode " << format_number(p.theta_mode) << '\n';
  out << "theta_route " << format_number(p.theta_route) << '\n';
  for (std::size_t n = 0; n < h.nest_count(); ++n)
    out << "tau " << h.tree().nest_names[n] << ' ' << format_number(p.tau[n]) << '\n';
  out << "beta_dest";
  for (double b : p.beta_dest) out << ' ' << format_number(b);
  out << "\nbeta_mode";
  for (double b : p.beta_mode) out << ' ' << format_number(b);
  out << '\n';
}

ParameterFile read_parameters(const std::string& path, const ChoiceHierarchy& h,
                              std::size_t dest_attributes, std::size_t mode_attributes) {
  ParameterFile pf;
  auto& p = pf.parameters;
  bool has_status = false, has_td = false, has_tm = false, has_tr = false, has_bd = false,
       has_bm = false;
  std::vector<bool> has_tau(h.nest_count(), false);
  p.tau.assign(h.nest_count(), 1.0);
  for (const auto& r : read_records_file(path)) {
    const std::string& key = r.fields[0];
    if (key == "status") {
      expect_fields(r, 2);
      if (r.fields[1] != "converged" && r.fields[1] != "nonconverged") fail(r, "bad status");
      pf.converged = r.fields[1] == "converged";
      has_status = true;
    } else if (key == "theta_dest") {
      expect_fields(r, 2);
      p.theta_dest = to_double(r, 1);
      has_td = true;
    } else if (key == "theta_mode") {
      expect_fields(r, 2);
      p.theta_mode = to_double(r, 1);
      has_tm = true;
    } else if (key == "theta_route") {
      expect_fields(r, 2);
      p.theta_route = to_double(r, 1);
      has_tr = true;
    } else if (key == "tau") {
      expect_fields(r, 3);
      const auto& names = h.tree().nest_names;
      auto it = std::find(names.begin(), names.end(), r.fields[1]);
      if (it == names.end()) fail(r, "unknown nest " + r.fields[1]);
      auto n = static_cast<std::size_t>(it - names.begin());
      p.tau[n] = to_double(r, 2);
      has_tau[n] = true;
    } else if (key == "beta_dest" || key == "beta_mode") {
      auto& v = key == "beta_dest" ? p.beta_dest : p.beta_mode;
      for (std::size_t k = 1; k < r.fields.size(); ++k) v.push_back(to_double(r, k));
      (key == "beta_dest" ? has_bd : has_bm) = true;
    } else {
      fail(r, "unknown parameter " + key);
    }
  }
  std::string missing;
  if (!has_status) missing += " status";
  if (!has_td) missing += " theta_dest";
  if (!has_tm) missing += " theta_mode";
  if (!has_tr) missing += " theta_route";
  for (std::size_t n = 0; n < h.nest_count(); ++n)
    if (!has_tau[n]) missing += " tau:" + h.tree().nest_names[n];
  if (!has_bd) missing += " beta_dest";
  if (!has_bm) missing += " beta_mode";
  if (!missing.empty()) throw InputError(path + ": missing fields:" + missing);
  if (p.beta_dest.size() != dest_attributes)
    throw InputError(path + ": beta_dest has " + std::to_string(p.beta_dest.size()) +
                     " values, scenario has " + std::to_string(dest_attributes) + " attributes");
  if (p.beta_mode.size() != mode_attributes)
    throw InputError(path + ": beta_mode has " + std::to_string(p.beta_mode.size()) +
                     " values, scenario has " + std::to_string(mode_attributes) + " attributes");
  try {
    p.validate(h);
  } catch (const std::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return pf;
}

// ---------------------------------------------------------------------------

void write_trip_matrix(std::ostream& out, const ZonalSystem& zones, const TripMatrix& t) {
  out << "i,j,T\n";
  for (std::size_t i = 0; i < t.rows; ++i)
    for (std::size_t j = 0; j < t.cols; ++j)
      out << zones.zone_ids[i] << ',' << zones.zone_ids[j] << ',' << format_number(t(i, j))
          << '\n';
}

void write_od_trips(std::ostream& out, const ChoiceHierarchy& h, const TripTables& t) {
  out << "i,j,T\n";
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j)
      out << h.origins()[i] << ',' << h.destinations()[j] << ',' << format_number(t.od[h.od(i, j)])
          << '\n';
}

void write_od_mode_trips(std::ostream& out, const ChoiceHierarchy& h, const TripTables& t) {
  out << "i,j,mode,T\n";
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j)
      for (std::size_t m = 0; m < h.mode_count(); ++m)
        out << h.origins()[i] << ',' << h.destinations()[j] << ','
            << h.network().mode_names()[m] << ',' << format_number(t.od_mode[h.odm(i, j, m)])
            << '\n';
}

void write_route_trips(std::ostream& out, const ChoiceHierarchy& h, const TripTables& t) {
  out << "i,j,mode,route,nodes,T\n";
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j)
      for (std::size_t m = 0; m < h.mode_count(); ++m) {
        std::size_t c = h.odm(i, j, m);
        for (std::size_t r = h.route_begin(c); r < h.route_end(c); ++r) {
          out << h.origins()[i] << ',' << h.destinations()[j] << ','
              << h.network().mode_names()[m] << ',' << (r - h.route_begin(c)) << ',';
          const auto& nodes = h.route(r).nodes;
          for (std::size_t k = 0; k < nodes.size(); ++k) out << (k ? ">" : "") << nodes[k];
          out << ',' << format_number(t.route[r]) << '\n';
        }
      }
}

void write_link_flows(std::ostream& out, const ChoiceHierarchy& h,
                      const std::vector<double>& flows) {
  const auto& net = h.network();
  out << "link,mode,tail,head,flow,cost\n";
  for (std::size_t a = 0; a < flows.size(); ++a) {
    const auto& l = net.link(a);
    out << a << ',' << net.mode_names()[static_cast<std::size_t>(l.mode)] << ',' << l.tail << ','
        << l.head << ',' << format_number(flows[a]) << ','
        << format_number(net.link_cost(a, flows[a])) << '\n';
  }
}

void write_solution(std::ostream& out, const ConvexProgram& p, const std::vector<double>& x) {
  out << "# program " << p.name() << " variables " << p.dimension() << '\n';
  for (const auto& b : p.blocks())
    for (std::size_t k = 0; k < b.size; ++k)
      out << b.label << ' ' << k << ' ' << format_number(x[b.offset + k]) << '\n';
}

std::vector<double> read_solution(const std::string& path, std::size_t dimension) {
  std::vector<double> x;
  for (const auto& r : read_records_file(path)) {
    expect_fields(r, 3);
    x.push_back(to_double(r, 2));
  }
  if (x.size() != dimension)
    throw InputError(path + ": solution has " + std::to_string(x.size()) +
                     " values, program has " + std::to_string(dimension));
  return x;
}

}  // namespace demandforge::io

namespace demandforge::io {

void write_scenario(std::ostream& out, const SyntheticScenario& s, std::size_t k_routes) {
  const auto& h = *s.hierarchy;
  const auto& net = h.network();
  const auto& tree = h.tree();
  out << "[zones]\n";
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    out << h.origins()[i] << ' ' << format_number(s.demand[i]) << " 0\n";
  for (int d : h.destinations()) out << d << " 0 1\n";
  out << "[nests]\n";
  for (std::size_t n = 0; n < h.nest_count(); ++n) {
    double tau = s.parameters.tau.size() == h.nest_count() ? s.parameters.tau[n] : tree.tau[n];
    out << tree.nest_names[n] << ' ' << format_number(tau);
    for (std::size_t m : tree.members(n)) out << ' ' << net.mode_names()[m];
    out << '\n';
  }
  out << "[links]\n";
  for (const auto& l : net.links())
    out << net.mode_names()[static_cast<std::size_t>(l.mode)] << ' ' << l.tail << ' ' << l.head
        << ' ' << format_number(l.length) << ' ' << format_number(l.free_flow_time) << ' '
        << format_number(l.capacity) << ' ' << format_number(l.alpha) << ' '
        << format_number(l.beta) << ' ' << format_number(l.money_cost) << '\n';
  out << "[attributes]\n";
  const auto& x = s.attributes;
  for (std::size_t i = 0; i < h.origin_count(); ++i)
    for (std::size_t j = 0; j < h.destination_count(); ++j) {
      std::size_t od = h.od(i, j);
      for (std::size_t k = 0; k < x.dest_attribute_count; ++k)
        out << "dest " << h.origins()[i] << ' ' << h.destinations()[j] << ' ' << k << ' '
            << format_number(x.dest[od * x.dest_attribute_count + k]) << '\n';
      for (std::size_t m = 0; m < h.mode_count(); ++m)
        for (std::size_t q = 0; q < x.mode_attribute_count; ++q)
          out << "mode " << h.origins()[i] << ' ' << h.destinations()[j] << ' '
              << net.mode_names()[m] << ' ' << q << ' '
              << format_number(x.mode[h.odm(i, j, m) * x.mode_attribute_count + q]) << '\n';
    }
  const auto& p = s.parameters;
  out << "[parameters]\n";
  out << "theta_dest " << format_number(p.theta_dest) << '\n';
  out << "theta_mode " << format_number(p.theta_mode) << '\n';
  out << "theta_route " << format_number(p.theta_route) << '\n';
  out << "value_of_time " << format_number(net.value_of_time()) << '\n';
  out << "k_routes " << k_routes << '\n';
  out << "beta_dest";
  for (double b : p.beta_dest) out << ' ' << format_number(b);
  out << "\nbeta_mode";
  for (double b : p.beta_mode) out << ' ' << format_number(b);
  out << '\n';
  for (const auto& [q, v] : s.fixed_mode_coefficients)
    out << "fixed_mode " << q << ' ' << format_number(v) << '\n';
}

}  // namespace demandforge::io
