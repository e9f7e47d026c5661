#pragma once

#include <algorithm>
#include <atomic>
#include <climits>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "coverblip/types.hpp"

namespace coverblip {

/// Euclidean distance between two vectors; complex entries are treated as
/// pairs of reals. Every search path in the library goes through this so
/// that equal distances compare equal bit for bit.
template <typename A, typename B>
inline double euclidean_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return (a - b).norm();
}

struct AnnsResult {
  Index index = -1;
  double distance = 0.0;
  /// Distance evaluations performed by this query.
  std::uint64_t cost = 0;
  /// Distance to the warm-start point, when one was supplied.
  std::optional<double> warm_start_distance;
};

struct TreeViolation {
  enum class Kind { structure, nesting, covering, separation, maxdist };
  Kind kind;
  Index node;
  std::string detail;
};

std::string to_string(TreeViolation::Kind kind);

/// Explicit cover tree over the rows of a point table.
///
/// Scale i has covering radius sigma * 2^-i, the root sits alone at scale 0
/// and sigma is the largest root-to-point distance seen at build time. Each
/// point is stored once: a node records the scale at which its point first
/// appears, and the implicit self-parent chain below that scale is not
/// materialised. Children are kept sorted by scale together with the exact
/// distance from the parent to the farthest point of each child's subtree,
/// which gives maxdist at any scale as a suffix maximum.
///
/// Points coincident with an existing node are kept in that node's
/// duplicate list; the node's own point always has the lowest id.
template <typename Scalar>
class CoverTree {
 public:
  using Points = RowTable<Scalar>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  static constexpr Index kNone = -1;

  struct Node {
    Index point = kNone;
    int scale = 0;
    Index parent = kNone;
    std::vector<Index> children;
    std::vector<int> child_scales;
    /// reach[k]: max distance from this point to any point under children[k].
    std::vector<double> reach;
    std::vector<double> suffix_reach;
    std::vector<Index> duplicates;
  };

  CoverTree() = default;

  /// Batch construction by repeated insertion in input order; point 0 is the root.
  static CoverTree build(Points points);

  /// Reassembles a tree from a stored node table (see save/load).
  static CoverTree from_node_table(Points points, double sigma, std::vector<Node> nodes,
                                   std::vector<std::pair<Index, Index>> duplicates);

  /// Appends a point and links it into the tree. Returns its point id.
  Index insert(const Eigen::Ref<const Vector>& point);

  /// (1+epsilon)-approximate nearest neighbour by branch and bound.
  /// epsilon = 0 descends to the finest scale and is exact.
  AnnsResult ann_search(const Eigen::Ref<const Vector>& query, double epsilon,
                        std::optional<Index> warm_start = std::nullopt) const;

  AnnsResult nearest(const Eigen::Ref<const Vector>& query) const { return ann_search(query, 0.0); }

  [[nodiscard]] double sigma() const { return sigma_; }
  [[nodiscard]] int max_scale() const { return max_scale_; }
  [[nodiscard]] Index root() const { return nodes_.empty() ? kNone : 0; }
  [[nodiscard]] Index dim() const { return points_.cols(); }
  [[nodiscard]] Index size() const { return points_.rows(); }
  [[nodiscard]] Index node_count() const { return static_cast<Index>(nodes_.size()); }
  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
  [[nodiscard]] const Points& points() const { return points_; }
  [[nodiscard]] Index node_of_point(Index point) const { return point_node_.at(static_cast<std::size_t>(point)); }

  /// Radius sigma * 2^-scale.
  [[nodiscard]] double radius(int scale) const { return std::ldexp(sigma_, -scale); }

  /// Max distance from a node to any of its descendants.
  [[nodiscard]] double maxdist(Index node) const;

  /// Max distance from a node to descendants that appear strictly below `scale`.
  [[nodiscard]] double maxdist_below(Index node, int scale) const;

  /// Distances evaluated while building and inserting.
  [[nodiscard]] std::uint64_t build_distance_count() const { return build_distances_; }

  /// Distances evaluated by all searches so far; safe under concurrent queries.
  [[nodiscard]] std::uint64_t query_distance_count() const { return query_distances_.value.load(); }

  [[nodiscard]] double distance_to(const Eigen::Ref<const Vector>& q, Index point) const {
    return euclidean_distance(points_.row(point).transpose(), q);
  }

 private:
  friend struct CoverTreeTestAccess;

  struct Counter {
    std::atomic<std::uint64_t> value{0};
    Counter() = default;
    Counter(const Counter& other) : value(other.value.load()) {}
    Counter& operator=(const Counter& other) {
      value.store(other.value.load());
      return *this;
    }
  };

  void link_point(Index point);
  void grow_sigma(double root_distance);
  void add_child(Index parent, Index child, double distance);
  void update_suffix(Index node, std::size_t from);
  void rebuild_reach();
  [[nodiscard]] double point_distance(Index a, Index b) const {
    return euclidean_distance(points_.row(a), points_.row(b));
  }

  Points points_;
  std::vector<Node> nodes_;
  std::vector<Index> point_node_;
  double sigma_ = 0.0;
  int max_scale_ = 0;
  std::uint64_t build_distances_ = 0;
  mutable Counter query_distances_;
};

/// Checks nesting, covering, separation and the maxdist values/bound at
/// every node. Empty result means the tree is valid.
template <typename Scalar>
std::vector<TreeViolation> verify_invariants(const CoverTree<Scalar>& tree, double rel_tol = 1e-9);

/// Max pairwise distance over min nonzero pairwise distance.
template <typename Scalar>
double aspect_ratio(const Eigen::Ref<const RowTable<Scalar>>& points);

/// Node-table file: header, dim, point count, sigma, then one record per
/// node (point id, scale, parent, maxdist) and the duplicate list.
template <typename Scalar>
void save_tree(const CoverTree<Scalar>& tree, const std::string& path);

/// Loads a node table and re-attaches it to `points`. Fails if the stored
/// maxdist values do not match the supplied points.
template <typename Scalar>
CoverTree<Scalar> load_tree(const std::string& path, RowTable<Scalar> points);

// ---------------------------------------------------------------------------

template <typename Scalar>
CoverTree<Scalar> CoverTree<Scalar>::build(Points points) {
  if (points.rows() == 0) throw InvalidArgument("empty dataset");
  if (points.cols() == 0) throw InvalidArgument("points must have positive dimension");
  CoverTree tree;
  tree.points_ = std::move(points);
  const Index count = tree.points_.rows();
  tree.point_node_.assign(static_cast<std::size_t>(count), kNone);
  for (Index j = 1; j < count; ++j) {
    tree.sigma_ = std::max(tree.sigma_, tree.point_distance(0, j));
  }
  tree.build_distances_ += static_cast<std::uint64_t>(count - 1);
  tree.nodes_.reserve(static_cast<std::size_t>(count));
  for (Index j = 0; j < count; ++j) tree.link_point(j);
  return tree;
}

template <typename Scalar>
Index CoverTree<Scalar>::insert(const Eigen::Ref<const Vector>& point) {
  if (!nodes_.empty() && point.size() != dim()) {
    throw InvalidArgument("dimension mismatch: tree has dim " + std::to_string(dim()) +
                          ", point has " + std::to_string(point.size()));
  }
  if (point.size() == 0) throw InvalidArgument("points must have positive dimension");
  const Index id = points_.rows();
  points_.conservativeResize(id + 1, point.size());
  points_.row(id) = point.transpose();
  point_node_.push_back(kNone);
  link_point(id);
  return id;
}

template <typename Scalar>
void CoverTree<Scalar>::grow_sigma(double root_distance) {
  int shift = 0;
  double grown = sigma_;
  while (grown < root_distance) {
    grown *= 2.0;
    ++shift;
  }
  for (std::size_t k = 1; k < nodes_.size(); ++k) nodes_[k].scale += shift;
  for (auto& node : nodes_) {
    for (auto& s : node.child_scales) s += shift;
  }
  if (nodes_.size() > 1) max_scale_ += shift;
  sigma_ = grown;
}

template <typename Scalar>
void CoverTree<Scalar>::link_point(Index point) {
  if (nodes_.empty()) {
    Node root;
    root.point = point;
    nodes_.push_back(std::move(root));
    point_node_[static_cast<std::size_t>(point)] = 0;
    return;
  }

  const double root_distance = point_distance(nodes_[0].point, point);
  ++build_distances_;
  if (root_distance == 0.0) {
    nodes_[0].duplicates.push_back(point);
    point_node_[static_cast<std::size_t>(point)] = 0;
    return;
  }
  if (sigma_ == 0.0) {
    sigma_ = root_distance;
  } else if (root_distance > sigma_) {
    grow_sigma(root_distance);
  }

  using Candidate = std::pair<Index, double>;
  std::vector<std::vector<Candidate>> levels;
  levels.push_back({{0, root_distance}});
  std::unordered_map<Index, double> known{{0, root_distance}};

  int scale = 0;
  for (;;) {
    const double r = radius(scale);
    std::vector<Candidate> expanded;
    double closest = std::numeric_limits<double>::infinity();
    for (const auto& [q, dq] : levels.back()) {
      expanded.emplace_back(q, dq);
      closest = std::min(closest, dq);
      const Node& node = nodes_[static_cast<std::size_t>(q)];
      auto it = std::lower_bound(node.child_scales.begin(), node.child_scales.end(), scale + 1);
      for (; it != node.child_scales.end() && *it == scale + 1; ++it) {
        const Index c = node.children[static_cast<std::size_t>(it - node.child_scales.begin())];
        const double dc = point_distance(nodes_[static_cast<std::size_t>(c)].point, point);
        ++build_distances_;
        if (dc == 0.0) {
          nodes_[static_cast<std::size_t>(c)].duplicates.push_back(point);
          point_node_[static_cast<std::size_t>(point)] = c;
          return;
        }
        known.emplace(c, dc);
        expanded.emplace_back(c, dc);
        closest = std::min(closest, dc);
      }
    }
    if (closest > r) break;
    std::vector<Candidate> kept;
    for (const auto& cand : expanded) {
      if (cand.second <= r) kept.push_back(cand);
    }
    levels.push_back(std::move(kept));
    ++scale;
  }

  // Deepest scale whose candidate set covers the point becomes the parent scale.
  for (int s = scale; s >= 0; --s) {
    const double r = radius(s);
    Index parent = kNone;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [q, dq] : levels[static_cast<std::size_t>(s)]) {
      if (dq > r) continue;
      const Index qp = nodes_[static_cast<std::size_t>(q)].point;
      if (dq < best || (dq == best && qp < nodes_[static_cast<std::size_t>(parent)].point)) {
        best = dq;
        parent = q;
      }
    }
    if (parent == kNone) continue;

    const Index id = static_cast<Index>(nodes_.size());
    Node node;
    node.point = point;
    node.scale = s + 1;
    node.parent = parent;
    nodes_.push_back(std::move(node));
    point_node_[static_cast<std::size_t>(point)] = id;
    max_scale_ = std::max(max_scale_, s + 1);
    add_child(parent, id, best);

    // Propagate the new point's distance into every ancestor's reach.
    Index child = parent;
    Index ancestor = nodes_[static_cast<std::size_t>(parent)].parent;
    while (ancestor != kNone) {
      double d;
      if (auto it = known.find(ancestor); it != known.end()) {
        d = it->second;
      } else {
        d = point_distance(nodes_[static_cast<std::size_t>(ancestor)].point, point);
        ++build_distances_;
      }
      Node& a = nodes_[static_cast<std::size_t>(ancestor)];
      const auto pos = static_cast<std::size_t>(
          std::find(a.children.begin(), a.children.end(), child) - a.children.begin());
      if (d > a.reach[pos]) {
        a.reach[pos] = d;
        update_suffix(ancestor, pos);
      }
      child = ancestor;
      ancestor = a.parent;
    }
    return;
  }
  // The root always covers the point after sigma has been grown.
  throw Error("cover tree insert failed to find a parent");
}

template <typename Scalar>
void CoverTree<Scalar>::add_child(Index parent, Index child, double distance) {
  Node& p = nodes_[static_cast<std::size_t>(parent)];
  const int s = nodes_[static_cast<std::size_t>(child)].scale;
  const auto pos = static_cast<std::size_t>(
      std::upper_bound(p.child_scales.begin(), p.child_scales.end(), s) - p.child_scales.begin());
  const auto off = static_cast<std::ptrdiff_t>(pos);
  p.children.insert(p.children.begin() + off, child);
  p.child_scales.insert(p.child_scales.begin() + off, s);
  p.reach.insert(p.reach.begin() + off, distance);
  p.suffix_reach.insert(p.suffix_reach.begin() + off, 0.0);
  update_suffix(parent, pos);
}

template <typename Scalar>
void CoverTree<Scalar>::update_suffix(Index node, std::size_t from) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  const std::size_t count = n.reach.size();
  for (std::size_t k = std::min(from, count - 1) + 1; k-- > 0;) {
    const double tail = k + 1 < count ? n.suffix_reach[k + 1] : 0.0;
    n.suffix_reach[k] = std::max(n.reach[k], tail);
  }
}

template <typename Scalar>
double CoverTree<Scalar>::maxdist(Index node) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(node));
  return n.suffix_reach.empty() ? 0.0 : n.suffix_reach.front();
}

template <typename Scalar>
double CoverTree<Scalar>::maxdist_below(Index node, int scale) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const auto pos = static_cast<std::size_t>(
      std::upper_bound(n.child_scales.begin(), n.child_scales.end(), scale) - n.child_scales.begin());
  return pos < n.suffix_reach.size() ? n.suffix_reach[pos] : 0.0;
}

template <typename Scalar>
AnnsResult CoverTree<Scalar>::ann_search(const Eigen::Ref<const Vector>& query, double epsilon,
                                         std::optional<Index> warm_start) const {
  if (nodes_.empty()) throw InvalidArgument("search on an empty tree");
  if (query.size() != dim()) {
    throw InvalidArgument("dimension mismatch: tree has dim " + std::to_string(dim()) +
                          ", query has " + std::to_string(query.size()));
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");

  AnnsResult result;
  const Node& root = nodes_.front();
  const double root_distance = distance_to(query, root.point);
  result.cost = 1;
  result.index = root.point;
  result.distance = root_distance;

  if (warm_start) {
    const Index w = *warm_start;
    if (w < 0 || w >= size()) throw InvalidArgument("warm start out of range");
    const double dw = w == root.point ? root_distance : distance_to(query, w);
    if (w != root.point) ++result.cost;
    result.warm_start_distance = dw;
    if (!(root_distance < dw || (root_distance == dw && root.point < w))) {
      result.index = w;
      result.distance = dw;
    }
  }

  struct Candidate {
    Index node;
    double distance;
  };
  std::vector<Candidate> current{{0, root_distance}};
  std::vector<Candidate> expanded;
  const double slack = 1e-12;
  const double stop_factor = epsilon > 0.0 ? 1.0 + 1.0 / epsilon : 0.0;

  int scale = 0;
  while (scale < max_scale_ && !current.empty()) {
    // Jump over scales where no candidate gains a child.
    int next = INT_MAX;
    for (const auto& c : current) {
      const Node& n = nodes_[static_cast<std::size_t>(c.node)];
      auto it = std::upper_bound(n.child_scales.begin(), n.child_scales.end(), scale);
      if (it != n.child_scales.end()) next = std::min(next, *it);
    }
    if (next == INT_MAX) break;
    scale = next - 1;
    if (epsilon > 0.0 && std::ldexp(sigma_, -scale + 1) * stop_factor <= result.distance) break;

    expanded.clear();
    for (const auto& c : current) {
      expanded.push_back(c);
      const Node& n = nodes_[static_cast<std::size_t>(c.node)];
      auto it = std::lower_bound(n.child_scales.begin(), n.child_scales.end(), next);
      for (; it != n.child_scales.end() && *it == next; ++it) {
        const Index child = n.children[static_cast<std::size_t>(it - n.child_scales.begin())];
        const Index point = nodes_[static_cast<std::size_t>(child)].point;
        const double d = distance_to(query, point);
        ++result.cost;
        expanded.push_back({child, d});
        if (d < result.distance || (d == result.distance && point < result.index)) {
          result.distance = d;
          result.index = point;
        }
      }
    }

    current.clear();
    for (const auto& c : expanded) {
      const double reach = maxdist_below(c.node, next);
      if (c.distance <= (result.distance + reach) * (1.0 + slack)) current.push_back(c);
    }
    scale = next;
  }

  query_distances_.value.fetch_add(result.cost, std::memory_order_relaxed);
  return result;
}

template <typename Scalar>
void CoverTree<Scalar>::rebuild_reach() {
  for (auto& n : nodes_) {
    n.reach.assign(n.children.size(), 0.0);
    n.suffix_reach.assign(n.children.size(), 0.0);
  }
  auto raise = [&](Index ancestor, Index child_on_path, Index point) {
    Node& a = nodes_[static_cast<std::size_t>(ancestor)];
    const auto pos = static_cast<std::size_t>(
        std::find(a.children.begin(), a.children.end(), child_on_path) - a.children.begin());
    a.reach[pos] = std::max(a.reach[pos], point_distance(a.point, point));
  };
  for (std::size_t k = 1; k < nodes_.size(); ++k) {
    const Index point = nodes_[k].point;
    Index child = static_cast<Index>(k);
    Index ancestor = nodes_[k].parent;
    while (ancestor != kNone) {
      raise(ancestor, child, point);
      child = ancestor;
      ancestor = nodes_[static_cast<std::size_t>(ancestor)].parent;
    }
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (!nodes_[k].reach.empty()) update_suffix(static_cast<Index>(k), nodes_[k].reach.size() - 1);
  }
}

template <typename Scalar>
CoverTree<Scalar> CoverTree<Scalar>::from_node_table(Points points, double sigma, std::vector<Node> nodes,
                                                     std::vector<std::pair<Index, Index>> duplicates) {
  CoverTree tree;
  tree.points_ = std::move(points);
  tree.sigma_ = sigma;
  tree.nodes_ = std::move(nodes);
  const auto count = static_cast<std::size_t>(tree.points_.rows());
  tree.point_node_.assign(count, kNone);
  if (tree.nodes_.empty() || tree.nodes_.front().parent != kNone) throw FormatError("node table has no root");
  for (std::size_t k = 0; k < tree.nodes_.size(); ++k) {
    Node& n = tree.nodes_[k];
    if (n.point < 0 || static_cast<std::size_t>(n.point) >= count) throw FormatError("node point out of range");
    if (tree.point_node_[static_cast<std::size_t>(n.point)] != kNone) throw FormatError("point stored twice");
    tree.point_node_[static_cast<std::size_t>(n.point)] = static_cast<Index>(k);
    n.children.clear();
    n.child_scales.clear();
    n.duplicates.clear();
    tree.max_scale_ = std::max(tree.max_scale_, n.scale);
  }
  for (std::size_t k = 1; k < tree.nodes_.size(); ++k) {
    const Index p = tree.nodes_[k].parent;
    if (p < 0 || static_cast<std::size_t>(p) >= k) throw FormatError("node parent out of order");
    Node& parent = tree.nodes_[static_cast<std::size_t>(p)];
    const int s = tree.nodes_[k].scale;
    const auto pos = std::upper_bound(parent.child_scales.begin(), parent.child_scales.end(), s) -
                     parent.child_scales.begin();
    parent.children.insert(parent.children.begin() + pos, static_cast<Index>(k));
    parent.child_scales.insert(parent.child_scales.begin() + pos, s);
  }
  for (const auto& [point, node] : duplicates) {
    if (point < 0 || static_cast<std::size_t>(point) >= count || node < 0 ||
        static_cast<std::size_t>(node) >= tree.nodes_.size() ||
        tree.point_node_[static_cast<std::size_t>(point)] != kNone) {
      throw FormatError("bad duplicate record");
    }
    tree.nodes_[static_cast<std::size_t>(node)].duplicates.push_back(point);
    tree.point_node_[static_cast<std::size_t>(point)] = node;
  }
  for (auto id : tree.point_node_) {
    if (id == kNone) throw FormatError("node table does not cover every point");
  }
  tree.rebuild_reach();
  return tree;
}

template <typename Scalar>
std::vector<TreeViolation> verify_invariants(const CoverTree<Scalar>& tree, double rel_tol) {
  using Kind = TreeViolation::Kind;
  std::vector<TreeViolation> out;
  const auto& nodes = tree.nodes();
  const auto& pts = tree.points();
  if (nodes.empty()) return out;
  auto dist = [&](Index a, Index b) { return euclidean_distance(pts.row(a), pts.row(b)); };
  auto report = [&](Kind k, Index node, std::string detail) { out.push_back({k, node, std::move(detail)}); };
  const double sigma = tree.sigma();
  const std::size_t count = nodes.size();

  // Structure and nesting: a child appears strictly below its parent and the
  // stored child lists agree with the parent links.
  if (nodes[0].parent != CoverTree<Scalar>::kNone || nodes[0].scale != 0) {
    report(Kind::structure, 0, "root must have no parent and scale 0");
  }
  std::vector<char> seen(static_cast<std::size_t>(tree.size()), 0);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& n = nodes[k];
    const Index id = static_cast<Index>(k);
    seen[static_cast<std::size_t>(n.point)] += 1;
    for (Index dup : n.duplicates) {
      seen[static_cast<std::size_t>(dup)] += 1;
      if (dist(n.point, dup) != 0.0) report(Kind::structure, id, "duplicate is not coincident");
      if (dup < n.point) report(Kind::structure, id, "duplicate has lower id than its node");
    }
    if (n.children.size() != n.child_scales.size() || n.children.size() != n.reach.size()) {
      report(Kind::structure, id, "child arrays out of sync");
      continue;
    }
    if (!std::is_sorted(n.child_scales.begin(), n.child_scales.end())) {
      report(Kind::structure, id, "children not sorted by scale");
    }
    for (std::size_t c = 0; c < n.children.size(); ++c) {
      const auto& child = nodes[static_cast<std::size_t>(n.children[c])];
      if (child.parent != id || child.scale != n.child_scales[c]) {
        report(Kind::structure, id, "child link inconsistent");
      }
      if (child.scale <= n.scale) {
        report(Kind::nesting, n.children[c],
               "child scale " + std::to_string(child.scale) + " not below parent scale " + std::to_string(n.scale));
      }
      if (child.scale > tree.max_scale()) report(Kind::nesting, n.children[c], "scale beyond max_scale");
    }
    if (k > 0) {
      const Index p = n.parent;
      if (p < 0 || static_cast<std::size_t>(p) >= count) {
        report(Kind::structure, id, "dangling parent");
        continue;
      }
      const double d = dist(nodes[static_cast<std::size_t>(p)].point, n.point);
      const double r = std::ldexp(sigma, -(n.scale - 1));
      if (d > r * (1.0 + rel_tol)) {
        report(Kind::covering, id,
               "distance to parent " + std::to_string(d) + " exceeds radius " + std::to_string(r));
      }
    }
  }
  for (std::size_t p = 0; p < seen.size(); ++p) {
    if (seen[p] != 1) report(Kind::structure, CoverTree<Scalar>::kNone, "point " + std::to_string(p) + " stored " + std::to_string(int(seen[p])) + " times");
  }

  // Separation: two nodes coexist from the larger of their scales downwards,
  // so the tightest requirement is at that scale.
  for (std::size_t a = 0; a < count; ++a) {
    for (std::size_t b = a + 1; b < count; ++b) {
      const int s = std::max(nodes[a].scale, nodes[b].scale);
      const double d = dist(nodes[a].point, nodes[b].point);
      const double r = std::ldexp(sigma, -s);
      if (!(d > r * (1.0 - rel_tol))) {
        report(Kind::separation, static_cast<Index>(b),
               "nodes " + std::to_string(a) + "," + std::to_string(b) + " at scale " + std::to_string(s) +
                   " only " + std::to_string(d) + " apart");
      }
    }
  }

  // maxdist: exact values by walking every point up to the root.
  std::vector<std::vector<double>> reach(count);
  for (std::size_t k = 0; k < count; ++k) reach[k].assign(nodes[k].children.size(), 0.0);
  for (std::size_t k = 1; k < count; ++k) {
    Index child = static_cast<Index>(k);
    Index anc = nodes[k].parent;
    std::size_t guard = 0;
    while (anc != CoverTree<Scalar>::kNone && guard++ <= count) {
      const auto& a = nodes[static_cast<std::size_t>(anc)];
      const auto pos = static_cast<std::size_t>(std::find(a.children.begin(), a.children.end(), child) - a.children.begin());
      if (pos < reach[static_cast<std::size_t>(anc)].size()) {
        auto& slot = reach[static_cast<std::size_t>(anc)][pos];
        slot = std::max(slot, dist(a.point, nodes[k].point));
      }
      child = anc;
      anc = a.parent;
    }
    if (guard > count) {
      report(Kind::structure, static_cast<Index>(k), "parent cycle");
      return out;
    }
  }
  for (std::size_t k = 0; k < count; ++k) {
    const auto& n = nodes[k];
    double exact = 0.0;
    for (std::size_t c = 0; c < reach[k].size() && c < n.reach.size(); ++c) {
      exact = std::max(exact, reach[k][c]);
      if (std::abs(reach[k][c] - n.reach[c]) > rel_tol * std::max(1.0, reach[k][c])) {
        report(Kind::maxdist, static_cast<Index>(k), "stored subtree reach differs from exact value");
      }
    }
    const double stored = tree.maxdist(static_cast<Index>(k));
    if (std::abs(stored - exact) > rel_tol * std::max(1.0, exact)) {
      report(Kind::maxdist, static_cast<Index>(k),
             "maxdist " + std::to_string(stored) + " differs from exact " + std::to_string(exact));
    }
    const double bound = std::ldexp(sigma, -n.scale + 1);
    if (!(exact < bound * (1.0 + rel_tol)) && exact > 0.0) {
      report(Kind::maxdist, static_cast<Index>(k), "maxdist above sigma*2^(1-scale)");
    }
  }
  return out;
}

template <typename Scalar>
double aspect_ratio(const Eigen::Ref<const RowTable<Scalar>>& points) {
  double largest = 0.0;
  double smallest = std::numeric_limits<double>::infinity();
  for (Index a = 0; a < points.rows(); ++a) {
    for (Index b = a + 1; b < points.rows(); ++b) {
      const double d = euclidean_distance(points.row(a), points.row(b));
      largest = std::max(largest, d);
      if (d > 0.0) smallest = std::min(smallest, d);
    }
  }
  if (!std::isfinite(smallest)) throw InvalidArgument("degenerate aspect ratio");
  return largest / smallest;
}

extern template class CoverTree<double>;
extern template class CoverTree<Complex>;

}  // namespace coverblip
