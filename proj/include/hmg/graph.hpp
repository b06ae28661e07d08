#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hmg/error.hpp"
#include "hmg/rng.hpp"

namespace hmg {

// Mikel's eight emotion categories; code 8 is the synthetic "non-existent"
// class used only when training with negative edges.
inline constexpr std::uint8_t kNumEmotions = 8;
inline constexpr std::uint8_t kNonExistent = 8;
inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "Amusement", "Anger", "Awe", "Contentment", "Disgust", "Excitement", "Fear", "Sadness"};

// Row-major float32 table, matching the on-disk HMGE payload.
struct FeatureTable {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;

  static FeatureTable zeros(std::uint32_t rows, std::uint32_t dim) {
    return FeatureTable{rows, dim, std::vector<float>(static_cast<std::size_t>(rows) * dim, 0.0f)};
  }

  std::span<float> row(std::size_t r) { return {data.data() + r * dim, dim}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * dim, dim}; }

  bool well_formed() const { return data.size() == static_cast<std::size_t>(rows) * dim; }

  // Bit-level equality (NaN payloads compare by bits).
  friend bool operator==(const FeatureTable& a, const FeatureTable& b) {
    return a.rows == b.rows && a.dim == b.dim && a.data.size() == b.data.size() &&
           (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  }
};

inline constexpr std::uint32_t kNoAttrRow = 0xFFFFFFFFu;

struct ViewsEdge {
  std::uint32_t user = 0;
  std::uint32_t image = 0;
  std::uint8_t label = 0;
  bool attr_missing = true;
  std::uint32_t attr_row = kNoAttrRow;

  friend bool operator==(const ViewsEdge&, const ViewsEdge&) = default;
};

enum class NodeType { kUser, kImage };
enum class Relation { kConnects, kViews, kViewedBy };

struct NodeRef {
  NodeType type;
  std::uint32_t index;
};

struct GraphStats {
  std::uint32_t users = 0;
  std::uint32_t images = 0;
  std::size_t connects = 0;  // undirected pairs
  std::size_t views = 0;
  std::uint32_t user_dim = 0;
  std::uint32_t image_dim = 0;
  std::uint32_t attr_dim = 0;
  std::size_t comments_present = 0;
};

class HeteroGraph;

HeteroGraph build_graph(std::uint32_t users, std::uint32_t images,
                        std::vector<std::pair<std::uint32_t, std::uint32_t>> connects, std::vector<ViewsEdge> views,
                        FeatureTable user_features, FeatureTable image_features, FeatureTable comment_attrs);

// Immutable after build_graph(); adjacency is kept in CSR form per relation.
class HeteroGraph {
 public:
  HeteroGraph() = default;

  std::uint32_t user_count() const { return users_; }
  std::uint32_t image_count() const { return images_; }

  // Undirected contact pairs, each stored once with first < second, sorted.
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& connects() const { return connects_; }
  const std::vector<ViewsEdge>& views() const { return views_; }
  const FeatureTable& user_features() const { return user_feat_; }
  const FeatureTable& image_features() const { return image_feat_; }
  const FeatureTable& comment_attrs() const { return comments_; }

  // Ascending, duplicate-free neighbor indices. `views` maps a user to the
  // images it viewed; `viewed-by` maps an image to its viewers.
  std::span<const std::uint32_t> neighbors(NodeRef node, Relation rel) const {
    const Csr& csr = csr_for(node, rel);
    return csr.neighbors(node.index);
  }

  // Views edge ids aligned element-wise with neighbors(node, views|viewed-by).
  std::span<const std::uint32_t> edge_ids(NodeRef node, Relation rel) const {
    if (rel == Relation::kConnects) throw Error(ErrorKind::kTypeMismatch, "connects edges carry no edge ids");
    const Csr& csr = csr_for(node, rel);
    return csr.edge_ids(node.index);
  }

  std::optional<std::uint32_t> find_view(std::uint32_t user, std::uint32_t image) const {
    if (user >= users_) return std::nullopt;
    auto imgs = view_csr_.neighbors(user);
    auto it = std::lower_bound(imgs.begin(), imgs.end(), image);
    if (it == imgs.end() || *it != image) return std::nullopt;
    return view_csr_.edge_ids(user)[static_cast<std::size_t>(it - imgs.begin())];
  }

  GraphStats stats() const {
    GraphStats s;
    s.users = users_;
    s.images = images_;
    s.connects = connects_.size();
    s.views = views_.size();
    s.user_dim = user_feat_.dim;
    s.image_dim = image_feat_.dim;
    s.attr_dim = comments_.dim;
    s.comments_present = static_cast<std::size_t>(
        std::count_if(views_.begin(), views_.end(), [](const ViewsEdge& e) { return !e.attr_missing; }));
    return s;
  }

  friend bool operator==(const HeteroGraph& a, const HeteroGraph& b) {
    return a.users_ == b.users_ && a.images_ == b.images_ && a.connects_ == b.connects_ && a.views_ == b.views_ &&
           a.user_feat_ == b.user_feat_ && a.image_feat_ == b.image_feat_ && a.comments_ == b.comments_;
  }

 private:
  struct Csr {
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> targets;
    std::vector<std::uint32_t> ids;

    std::span<const std::uint32_t> neighbors(std::uint32_t n) const {
      return {targets.data() + offsets[n], offsets[n + 1] - offsets[n]};
    }
    std::span<const std::uint32_t> edge_ids(std::uint32_t n) const {
      return {ids.data() + offsets[n], offsets[n + 1] - offsets[n]};
    }

    // entries: (source, target, id), sorted by (source, target) on return
    static Csr build(std::size_t n, std::vector<std::array<std::uint32_t, 3>> entries) {
      std::sort(entries.begin(), entries.end());
      Csr c;
      c.offsets.assign(n + 1, 0);
      c.targets.reserve(entries.size());
      c.ids.reserve(entries.size());
      for (const auto& e : entries) {
        ++c.offsets[e[0] + 1];
        c.targets.push_back(e[1]);
        c.ids.push_back(e[2]);
      }
      for (std::size_t i = 0; i < n; ++i) c.offsets[i + 1] += c.offsets[i];
      return c;
    }
  };

  const Csr& csr_for(NodeRef node, Relation rel) const {
    const bool user_rel = rel == Relation::kConnects || rel == Relation::kViews;
    if ((node.type == NodeType::kUser) != user_rel) {
      throw Error(ErrorKind::kTypeMismatch, "relation does not start at this node type");
    }
    const std::uint32_t limit = node.type == NodeType::kUser ? users_ : images_;
    if (node.index >= limit) throw Error(ErrorKind::kOutOfRange, "node index " + std::to_string(node.index));
    switch (rel) {
      case Relation::kConnects: return conn_csr_;
      case Relation::kViews: return view_csr_;
      case Relation::kViewedBy: return viewed_by_csr_;
    }
    return conn_csr_;
  }

  friend HeteroGraph build_graph(std::uint32_t, std::uint32_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>,
                                 std::vector<ViewsEdge>, FeatureTable, FeatureTable, FeatureTable);

  std::uint32_t users_ = 0;
  std::uint32_t images_ = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> connects_;
  std::vector<ViewsEdge> views_;
  FeatureTable user_feat_;
  FeatureTable image_feat_;
  FeatureTable comments_;
  Csr conn_csr_;
  Csr view_csr_;
  Csr viewed_by_csr_;
};

// Validates and indexes a graph. `connects` may list a pair in either or
// both directions; it is stored undirected. Duplicate views pairs are an
// error: deduplication belongs to the ingester.
inline HeteroGraph build_graph(std::uint32_t users, std::uint32_t images,
                               std::vector<std::pair<std::uint32_t, std::uint32_t>> connects,
                               std::vector<ViewsEdge> views, FeatureTable user_features, FeatureTable image_features,
                               FeatureTable comment_attrs) {
  if (!user_features.well_formed() || !image_features.well_formed() || !comment_attrs.well_formed()) {
    throw Error(ErrorKind::kDimensionMismatch, "feature table payload does not match rows*dim");
  }
  if (user_features.rows != users) {
    throw Error(ErrorKind::kDimensionMismatch, "user feature rows " + std::to_string(user_features.rows) +
                                                   " != user count " + std::to_string(users));
  }
  if (image_features.rows != images) {
    throw Error(ErrorKind::kDimensionMismatch, "image feature rows " + std::to_string(image_features.rows) +
                                                   " != image count " + std::to_string(images));
  }

  for (auto& [a, b] : connects) {
    if (a >= users || b >= users) {
      throw Error(ErrorKind::kOutOfRange, "connects edge (" + std::to_string(a) + "," + std::to_string(b) +
                                              ") with user_count " + std::to_string(users));
    }
    if (a == b) throw Error(ErrorKind::kInvalidArgument, "connects self-loop at user " + std::to_string(a));
    if (a > b) std::swap(a, b);
  }
  std::sort(connects.begin(), connects.end());
  connects.erase(std::unique(connects.begin(), connects.end()), connects.end());

  for (std::size_t k = 0; k < views.size(); ++k) {
    const ViewsEdge& e = views[k];
    if (e.user >= users || e.image >= images) {
      throw Error(ErrorKind::kOutOfRange, "views edge " + std::to_string(k) + " (" + std::to_string(e.user) + "," +
                                              std::to_string(e.image) + ") exceeds node counts");
    }
    if (e.label >= kNumEmotions) {
      throw Error(ErrorKind::kOutOfRange, "views edge " + std::to_string(k) + " label " + std::to_string(e.label));
    }
    if (!e.attr_missing && e.attr_row >= comment_attrs.rows) {
      throw Error(ErrorKind::kOutOfRange, "views edge " + std::to_string(k) + " attribute row " +
                                              std::to_string(e.attr_row) + " beyond table");
    }
  }

  HeteroGraph g;
  g.users_ = users;
  g.images_ = images;

  std::vector<std::array<std::uint32_t, 3>> conn_entries;
  conn_entries.reserve(connects.size() * 2);
  for (const auto& [a, b] : connects) {
    conn_entries.push_back({a, b, 0});
    conn_entries.push_back({b, a, 0});
  }
  g.conn_csr_ = HeteroGraph::Csr::build(users, std::move(conn_entries));

  std::vector<std::array<std::uint32_t, 3>> fwd, rev;
  fwd.reserve(views.size());
  rev.reserve(views.size());
  for (std::uint32_t k = 0; k < views.size(); ++k) {
    fwd.push_back({views[k].user, views[k].image, k});
    rev.push_back({views[k].image, views[k].user, k});
  }
  g.view_csr_ = HeteroGraph::Csr::build(users, std::move(fwd));
  for (std::uint32_t u = 0; u < users; ++u) {
    auto imgs = g.view_csr_.neighbors(u);
    auto dup = std::adjacent_find(imgs.begin(), imgs.end());
    if (dup != imgs.end()) {
      throw Error(ErrorKind::kDuplicateEdge, "duplicate views edge (" + std::to_string(u) + "," +
                                                 std::to_string(*dup) + ")");
    }
  }
  g.viewed_by_csr_ = HeteroGraph::Csr::build(images, std::move(rev));

  g.connects_ = std::move(connects);
  g.views_ = std::move(views);
  g.user_feat_ = std::move(user_features);
  g.image_feat_ = std::move(image_features);
  g.comments_ = std::move(comment_attrs);
  return g;
}

struct EdgeSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> val;
  std::vector<std::uint32_t> test;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Seeded shuffle then partition: val and test get floor(ratio * n), train
// takes the remainder. Each part is returned in ascending order.
inline EdgeSplit split_edges(const HeteroGraph& graph, SplitRatios ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::kInvalidArgument, "split ratios must be nonnegative and sum to 1");
  }
  const std::size_t n = graph.views().size();
  std::vector<std::uint32_t> ids(n);
  for (std::uint32_t k = 0; k < n; ++k) ids[k] = k;
  Rng rng(seed, 0x5B117);
  rng.shuffle(std::span<std::uint32_t>(ids));
  const auto floor_part = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
  const std::size_t n_val = floor_part(ratios.val);
  const std::size_t n_test = floor_part(ratios.test);
  EdgeSplit s;
  s.seed = seed;
  s.val.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val),
                ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// Uniform (user, image) pairs absent from the views relation, drawn without
// replacement by rejection sampling.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_negative_edges(const HeteroGraph& graph,
                                                                                   std::size_t count,
                                                                                   std::uint64_t seed) {
  const std::uint64_t universe = static_cast<std::uint64_t>(graph.user_count()) * graph.image_count();
  const std::uint64_t free_pairs = universe - graph.views().size();
  if (count > free_pairs) {
    throw Error(ErrorKind::kInfeasible, "requested " + std::to_string(count) + " negative edges, only " +
                                            std::to_string(free_pairs) + " absent pairs exist");
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  if (count == 0) return out;
  out.reserve(count);
  Rng rng(seed, 0x4E6);
  const auto key = [&](std::uint32_t u, std::uint32_t i) { return static_cast<std::uint64_t>(u) * graph.image_count() + i; };

  if (count * 2 > free_pairs) {
    // dense regime: enumerate the complement and take a uniform prefix
    std::vector<std::uint64_t> pool;
    pool.reserve(free_pairs);
    for (std::uint32_t u = 0; u < graph.user_count(); ++u) {
      for (std::uint32_t i = 0; i < graph.image_count(); ++i) {
        if (!graph.find_view(u, i)) pool.push_back(key(u, i));
      }
    }
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      out.emplace_back(static_cast<std::uint32_t>(pool[k] / graph.image_count()),
                       static_cast<std::uint32_t>(pool[k] % graph.image_count()));
    }
    return out;
  }

  std::unordered_set<std::uint64_t> taken;
  taken.reserve(count * 2);
  while (out.size() < count) {
    const auto u = static_cast<std::uint32_t>(rng.below(graph.user_count()));
    const auto i = static_cast<std::uint32_t>(rng.below(graph.image_count()));
    if (graph.find_view(u, i) || !taken.insert(key(u, i)).second) continue;
    out.emplace_back(u, i);
  }
  return out;
}

}  // namespace hmg
