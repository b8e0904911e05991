#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "demandforge/routes.hpp"

using namespace demandforge;

namespace {

Link mk(int m, int a, int b, double len, double cost = 0.0) {
  return Link{m, a, b, len, len, 100.0, 0.15, 4.0, cost};
}

// Bidirectional 2x2 grid: 1-2 / 3-4.
ModalNetwork grid() {
  std::vector<Link> links;
  for (auto [a, b] : std::vector<std::pair<int, int>>{{1, 2}, {1, 3}, {2, 4}, {3, 4}}) {
    links.push_back(mk(0, a, b, 1.0));
    links.push_back(mk(0, b, a, 1.0));
  }
  return ModalNetwork({"car"}, links, 1.0);
}

// All simple paths by depth-first search, sorted by (cost, node sequence).
std::vector<std::pair<double, std::vector<int>>> all_paths(const ModalNetwork& n, int from,
                                                           int to) {
  std::vector<std::pair<double, std::vector<int>>> out;
  std::vector<int> stack = {from};
  std::function<void(int, double)> dfs = [&](int node, double cost) {
    if (node == to) {
      out.emplace_back(cost, stack);
      return;
    }
    for (std::size_t a : n.outgoing(0, node)) {
      int h = n.link(a).head;
      if (std::find(stack.begin(), stack.end(), h) != stack.end()) continue;
      stack.push_back(h);
      dfs(h, cost + n.link_cost(a, 0.0));
      stack.pop_back();
    }
  };
  dfs(from, 0.0);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_SUITE("routes") {
  TEST_CASE("path-size examples") {
    ModalNetwork n({"car"}, {mk(0, 1, 2, 1.0), mk(0, 2, 3, 1.0), mk(0, 2, 3, 1.0), mk(0, 1, 3, 4.0)},
                   1.0);
    Route shared{0, {1, 2, 3}, {0, 1}, 2.0, 0.0};
    Route twin{0, {1, 2, 3}, {0, 1}, 2.0, 0.0};
    Route half{0, {1, 2, 3}, {0, 2}, 2.0, 0.0};
    Route alone{0, {1, 3}, {3}, 4.0, 0.0};

    std::vector<Route> disjoint = {shared, alone};
    CHECK(path_size_factor(n, disjoint, 0) == 1.0);
    CHECK(path_size_factor(n, disjoint, 1) == 1.0);
    std::vector<Route> same = {shared, twin};
    CHECK(path_size_factor(n, same, 0) == doctest::Approx(0.5).epsilon(1e-15));
    std::vector<Route> part = {shared, half};
    CHECK(path_size_factor(n, part, 0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(link_route_counts(part).at(0) == 2);

    Route zero{0, {1}, {}, 0.0, 0.0};
    std::vector<Route> bad = {zero};
    CHECK_THROWS_AS(path_size_factor(n, bad, 0), std::invalid_argument);
  }

  TEST_CASE("2x2 grid has two simple paths") {
    auto n = grid();
    auto r = enumerate_routes(n, 1, 4, 0, 3);
    REQUIRE(r.size() == 2);
    CHECK(r[0].nodes == std::vector<int>{1, 2, 4});
    CHECK(r[1].nodes == std::vector<int>{1, 3, 4});
    auto one = enumerate_routes(n, 1, 4, 0, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].free_flow_cost == doctest::Approx(2.0));
  }

  TEST_CASE("parallel links") {
    ModalNetwork n({"car"}, {mk(0, 1, 2, 3.0), mk(0, 1, 2, 2.0)}, 1.0);
    auto r = enumerate_routes(n, 1, 2, 0, 2);
    REQUIRE(r.size() == 2);
    CHECK(r[0].links == std::vector<std::size_t>{1});
    CHECK(r[1].links == std::vector<std::size_t>{0});
  }

  TEST_CASE("disconnected pair names the triple") {
    ModalNetwork n({"car", "bus"}, {mk(0, 1, 2, 1.0), mk(1, 2, 1, 1.0)}, 1.0);
    try {
      enumerate_routes(n, 1, 2, 1, 3);
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      std::string msg = e.what();
      CHECK(msg.find('1') != std::string::npos);
      CHECK(msg.find('2') != std::string::npos);
    }
  }

  TEST_CASE("enumeration matches exhaustive search") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> len(1.0, 5.0), coin(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Link> links;
      for (int a = 1; a <= 6; ++a)
        for (int b = 1; b <= 6; ++b)
          if (a != b && coin(rng) < 0.45) links.push_back(mk(0, a, b, std::round(len(rng) * 4) / 4));
      ModalNetwork n({"car"}, links, 1.0);
      auto truth = all_paths(n, 1, 6);
      if (truth.empty()) {
        CHECK_THROWS(enumerate_routes(n, 1, 6, 0, 4));
        continue;
      }
      for (std::size_t k : {1u, 3u, 6u}) {
        auto r = enumerate_routes(n, 1, 6, 0, k);
        REQUIRE(r.size() == std::min(k, truth.size()));
        std::set<std::vector<int>> seen;
        for (std::size_t q = 0; q < r.size(); ++q) {
          CHECK(r[q].free_flow_cost == doctest::Approx(truth[q].first).epsilon(1e-12));
          CHECK(seen.insert(r[q].nodes).second);
          std::set<int> nodes(r[q].nodes.begin(), r[q].nodes.end());
          CHECK(nodes.size() == r[q].nodes.size());
          if (q > 0) CHECK(r[q].free_flow_cost >= r[q - 1].free_flow_cost - 1e-12);
        }
      }
    }
  }

  TEST_CASE("extending a route set never raises path size") {
    auto n = grid();
    auto all = enumerate_routes(n, 1, 4, 0, 2);
    RouteChoiceSet small{{all[0]}, {}}, big{{all[0], all[1], all[0]}, {}};
    build_incidence(n, small);
    build_incidence(n, big);
    CHECK(small.path_size[0] == 1.0);
    CHECK(big.path_size[0] <= small.path_size[0]);
    CHECK(big.path_size[0] == doctest::Approx(0.5));
  }

  TEST_CASE("route from nodes and route cost") {
    auto n = grid();
    std::vector<int> nodes = {1, 3, 4};
    auto r = route_from_nodes(n, 0, nodes);
    CHECK(r.links.size() == 2);
    CHECK(r.length == doctest::Approx(2.0));
    std::vector<double> f(n.link_count(), 0.0);
    CHECK(route_cost(n, f, r) == doctest::Approx(2.0));
    std::vector<int> bad = {1, 4};
    CHECK_THROWS(route_from_nodes(n, 0, bad));
  }

  TEST_CASE("route set enumerate skips intrazonal pairs") {
    auto n = grid();
    std::vector<int> zones = {1, 4};
    auto rs = RouteSet::enumerate(n, zones, zones, 2);
    CHECK(rs.contains(1, 4, 0));
    CHECK(rs.contains(4, 1, 0));
    CHECK_FALSE(rs.contains(1, 1, 0));
    CHECK_THROWS_AS(rs.at(1, 1, 0), std::out_of_range);
  }
}
