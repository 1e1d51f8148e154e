#pragma once

// Street graph, shortest paths and the travel-time oracle used by the
// simulator. A loaded graph routes along streets; without one every query
// falls back to great-circle travel.
//
// Graph file, one record per line, whitespace separated, '#' starts a comment:
//   N <id> <lat> <lon>
//   E <id1> <id2> <length_km> [speed_kmh]     directed edge
// With LoadOptions::undirected every E record is also added reversed.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ems/error.hpp"
#include "ems/geo.hpp"

namespace ems {

using NodeId = std::int64_t;

struct StreetEdge {
  std::size_t to = 0;
  double length_km = 0.0;
  std::optional<double> speed_kmh;
};

class StreetGraph {
 public:
  std::size_t node_count() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  const GeoPoint& point(std::size_t index) const { return points_.at(index); }
  NodeId id(std::size_t index) const { return ids_.at(index); }
  const std::vector<StreetEdge>& out_edges(std::size_t index) const { return adjacency_.at(index); }

  std::optional<std::size_t> index_of(NodeId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& out : adjacency_) n += out.size();
    return n;
  }

  std::size_t add_node(NodeId id, const GeoPoint& p) {
    if (!is_valid(p)) {
      throw Error(Errc::ValidationError, "node " + std::to_string(id) + " has invalid coordinates");
    }
    if (index_.contains(id)) {
      throw Error(Errc::ValidationError, "duplicate node id " + std::to_string(id));
    }
    const std::size_t idx = points_.size();
    points_.push_back(p);
    ids_.push_back(id);
    adjacency_.emplace_back();
    index_.emplace(id, idx);
    return idx;
  }

  void add_edge(NodeId from, NodeId to, double length_km,
                std::optional<double> speed_kmh = std::nullopt) {
    const auto a = index_of(from);
    const auto b = index_of(to);
    if (!a || !b) {
      throw Error(Errc::ValidationError, "edge " + std::to_string(from) + " -> " +
                                             std::to_string(to) + " references an unknown node");
    }
    if (!(length_km > 0.0) || !std::isfinite(length_km)) {
      throw Error(Errc::ValidationError, "edge " + std::to_string(from) + " -> " +
                                             std::to_string(to) + " has non-positive length");
    }
    if (speed_kmh && !(*speed_kmh > 0.0)) {
      throw Error(Errc::ValidationError, "edge " + std::to_string(from) + " -> " +
                                             std::to_string(to) + " has non-positive speed");
    }
    const double direct = great_circle_km(points_[*a], points_[*b]);
    if (length_km < direct * (1.0 - 1e-6)) {
      throw Error(Errc::ValidationError, "edge " + std::to_string(from) + " -> " +
                                             std::to_string(to) +
                                             " is shorter than the great-circle distance");
    }
    adjacency_[*a].push_back({*b, length_km, speed_kmh});
  }

  /// Nearest node by great-circle distance; ties go to the lowest node id.
  std::size_t nearest_node(const GeoPoint& p) const {
    if (empty()) throw Error(Errc::EmptyGraph, "graph has no nodes");
    const Point3 q = to_cartesian(p);
    std::size_t best = 0;
    double best_angle = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double angle = chord_angle(q, to_cartesian(points_[i]));
      if (angle < best_angle || (angle == best_angle && ids_[i] < ids_[best])) {
        best = i;
        best_angle = angle;
      }
    }
    return best;
  }

 private:
  std::vector<GeoPoint> points_;
  std::vector<NodeId> ids_;
  std::vector<std::vector<StreetEdge>> adjacency_;
  std::unordered_map<NodeId, std::size_t> index_;
};

struct LoadOptions {
  bool undirected = false;
};

inline StreetGraph load_graph(std::istream& in, LoadOptions options = {}) {
  struct PendingEdge {
    NodeId from, to;
    double length;
    std::optional<double> speed;
    int line;
  };
  StreetGraph graph;
  std::vector<PendingEdge> edges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    auto fail = [&] {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": malformed record");
    };
    if (tag == "N") {
      NodeId id;
      double lat, lon;
      if (!(ss >> id >> lat >> lon)) fail();
      std::string extra;
      if (ss >> extra) fail();
      try {
        graph.add_node(id, {lat, lon});
      } catch (const Error& e) {
        throw Error(Errc::ValidationError, "line " + std::to_string(line_no) + ": " + e.what());
      }
    } else if (tag == "E") {
      PendingEdge e{};
      e.line = line_no;
      if (!(ss >> e.from >> e.to >> e.length)) fail();
      double speed;
      if (ss >> speed) e.speed = speed;
      else if (!ss.eof()) fail();
      std::string extra;
      ss.clear();
      if (ss >> extra) fail();
      edges.push_back(e);
    } else {
      fail();
    }
  }
  for (const auto& e : edges) {
    try {
      graph.add_edge(e.from, e.to, e.length, e.speed);
      if (options.undirected) graph.add_edge(e.to, e.from, e.length, e.speed);
    } catch (const Error& err) {
      throw Error(Errc::ValidationError, "line " + std::to_string(e.line) + ": " + err.what());
    }
  }
  return graph;
}

inline StreetGraph load_graph_file(const std::string& path, LoadOptions options = {}) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open graph file " + path);
  return load_graph(in, options);
}

struct RoutePlan {
  std::vector<NodeId> node_sequence;
  std::vector<Timestamp> arrival_times;
  Duration total_time = 0.0;
};

namespace detail {

struct PathResult {
  std::vector<std::size_t> nodes;  // graph indices, origin first
  std::vector<Duration> offsets;   // time from origin to each node
};

inline Duration edge_seconds(const StreetEdge& e, double speed_kmh) {
  return travel_seconds(e.length_km, e.speed_kmh.value_or(speed_kmh));
}

inline PathResult dijkstra(const StreetGraph& g, std::size_t source, std::size_t target,
                           double speed_kmh) {
  const std::size_t n = g.node_count();
  std::vector<Duration> dist(n, std::numeric_limits<Duration>::infinity());
  std::vector<std::size_t> parent(n, n);
  using Item = std::pair<Duration, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[source] = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    if (u == target) break;
    for (const auto& e : g.out_edges(u)) {
      const Duration nd = d + edge_seconds(e, speed_kmh);
      if (nd < dist[e.to]) {
        dist[e.to] = nd;
        parent[e.to] = u;
        heap.push({nd, e.to});
      }
    }
  }
  if (!std::isfinite(dist[target])) {
    throw Error(Errc::Unreachable, "no street path from node " + std::to_string(g.id(source)) +
                                       " to node " + std::to_string(g.id(target)));
  }
  PathResult result;
  for (std::size_t v = target; v != n; v = parent[v]) {
    result.nodes.push_back(v);
    if (v == source) break;
  }
  std::reverse(result.nodes.begin(), result.nodes.end());
  for (auto v : result.nodes) result.offsets.push_back(dist[v]);
  return result;
}

}  // namespace detail

/// Time-minimal street route between the nodes nearest to origin and dest.
inline RoutePlan shortest_path(const StreetGraph& g, const GeoPoint& origin, const GeoPoint& dest,
                               Timestamp t0, double speed_kmh) {
  if (g.empty()) throw Error(Errc::EmptyGraph, "graph has no nodes");
  if (!(speed_kmh > 0.0)) throw Error(Errc::InvalidSpeed, "speed must be positive");
  const std::size_t s = g.nearest_node(origin);
  const std::size_t t = g.nearest_node(dest);
  const auto path = detail::dijkstra(g, s, t, speed_kmh);
  RoutePlan plan;
  for (std::size_t i = 0; i < path.nodes.size(); ++i) {
    plan.node_sequence.push_back(g.id(path.nodes[i]));
    plan.arrival_times.push_back(t0 + path.offsets[i]);
  }
  plan.total_time = path.offsets.back();
  return plan;
}

/// Street travel time when a non-empty graph is supplied, great-circle
/// travel time otherwise.
inline Duration travel_time(const StreetGraph* g, const GeoPoint& a, const GeoPoint& b,
                            Timestamp t0, double speed_kmh) {
  if (!(speed_kmh > 0.0)) throw Error(Errc::InvalidSpeed, "speed must be positive");
  if (a == b) return 0.0;
  if (g == nullptr || g->empty()) return travel_time_gc(a, b, t0, speed_kmh);
  return shortest_path(*g, a, b, t0, speed_kmh).total_time;
}

/// Travel-time and route oracle shared by the dispatcher, the engine and the
/// trajectory tools. Routes are cached per (origin node, destination node);
/// the cache is shared between copies and guarded by a mutex.
class Router {
 public:
  explicit Router(double speed_kmh = kDefaultSpeedKmh,
                  std::shared_ptr<const StreetGraph> graph = nullptr)
      : speed_kmh_(speed_kmh), graph_(std::move(graph)), cache_(std::make_shared<Cache>()) {
    if (!(speed_kmh_ > 0.0)) throw Error(Errc::InvalidSpeed, "speed must be positive");
  }

  double speed_kmh() const { return speed_kmh_; }
  bool has_graph() const { return graph_ && !graph_->empty(); }
  const StreetGraph* graph() const { return graph_.get(); }

  Duration travel_time(const GeoPoint& a, const GeoPoint& b, Timestamp t0) const {
    if (a == b) return 0.0;
    if (!has_graph()) return travel_time_gc(a, b, t0, speed_kmh_);
    return cached(a, b).offsets.back();
  }

  /// Polyline followed from a to b: the street nodes visited, with the true
  /// endpoints substituted for the snapped first and last node.
  std::vector<GeoPoint> polyline(const GeoPoint& a, const GeoPoint& b) const {
    if (!has_graph() || a == b) return {a, b};
    const auto& path = cached(a, b);
    std::vector<GeoPoint> out;
    out.push_back(a);
    for (std::size_t i = 1; i + 1 < path.nodes.size(); ++i) out.push_back(graph_->point(path.nodes[i]));
    out.push_back(b);
    return out;
  }

  /// Time offsets matching polyline(a, b).
  std::vector<Duration> polyline_offsets(const GeoPoint& a, const GeoPoint& b) const {
    if (!has_graph() || a == b) return {0.0, travel_time(a, b, 0.0)};
    const auto& path = cached(a, b);
    if (path.nodes.size() == 1) return {0.0, 0.0};
    return path.offsets;
  }

 private:
  struct Cache {
    std::mutex mutex;
    std::map<std::pair<std::size_t, std::size_t>, detail::PathResult> routes;
  };

  const detail::PathResult& cached(const GeoPoint& a, const GeoPoint& b) const {
    const std::size_t s = graph_->nearest_node(a);
    const std::size_t t = graph_->nearest_node(b);
    std::lock_guard lock(cache_->mutex);
    auto it = cache_->routes.find({s, t});
    if (it == cache_->routes.end()) {
      it = cache_->routes.emplace(std::pair{s, t}, detail::dijkstra(*graph_, s, t, speed_kmh_)).first;
    }
    return it->second;
  }

  double speed_kmh_;
  std::shared_ptr<const StreetGraph> graph_;
  std::shared_ptr<Cache> cache_;
};

}  // namespace ems
