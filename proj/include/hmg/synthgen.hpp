#pragma once

// Planted-partition generator for benchmark bundles. Every user and image
// gets a cluster in [0, K); the label of a views edge is
// (cluster(user) + cluster(image)) mod 8, so neither endpoint alone
// determines it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "hmg/bundle.hpp"
#include "hmg/error.hpp"
#include "hmg/graph.hpp"
#include "hmg/rng.hpp"
#include "json.hpp"

namespace hmg {

// Full-size reference counts the scale factor applies to.
inline constexpr std::uint64_t kRefUsers = 108899;
inline constexpr std::uint64_t kRefImages = 85157;
inline constexpr std::uint64_t kRefConnects = 1649058;
inline constexpr std::uint64_t kRefViews = 197561;

struct SynthCounts {
  std::uint32_t users = 0, images = 0;
  std::size_t connects = 0, views = 0;
};

struct SynthConfig {
  double scale = 1.0 / 20.0;
  std::uint32_t clusters = 8;
  double sigma = 0.1;             // Gaussian feature noise
  double rho = 0.34;              // fraction of views edges with a comment
  double node_signal = 5.0;       // one-hot amplitude on node features; at 1.0 the
                                  // code drowns in 120 noise dims after projection
  double comment_signal = 1.0;    // one-hot amplitude on comment blocks
  double intra_cluster = 0.8;     // chance a contact stays inside its cluster
  double degree_exponent = 2.5;   // Pareto tail of contact propensities
  std::uint64_t seed = 0;
  std::uint32_t user_dim = 128, image_dim = 128, comment_dim = 256;
  // Nonzero values override the scaled reference counts.
  std::uint32_t users = 0, images = 0;
  std::size_t connects = 0, views = 0;

  SynthCounts counts() const {
    auto scaled = [&](std::uint64_t ref) { return static_cast<std::size_t>(std::llround(static_cast<double>(ref) * scale)); };
    return {users ? users : static_cast<std::uint32_t>(scaled(kRefUsers)),
            images ? images : static_cast<std::uint32_t>(scaled(kRefImages)), connects ? connects : scaled(kRefConnects),
            views ? views : scaled(kRefViews)};
  }

  void validate() const {
    if (!(scale > 0.0)) throw Error(ErrorKind::kConfig, "scale must be positive");
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorKind::kConfig, "rho must lie in [0,1]");
    if (!(sigma >= 0.0)) throw Error(ErrorKind::kConfig, "sigma must be >= 0");
    if (clusters == 0) throw Error(ErrorKind::kConfig, "clusters must be positive");
    if (!(intra_cluster >= 0.0 && intra_cluster <= 1.0)) throw Error(ErrorKind::kConfig, "intra_cluster must lie in [0,1]");
    if (!(degree_exponent > 1.0)) throw Error(ErrorKind::kConfig, "degree_exponent must exceed 1");
    if (user_dim < clusters || image_dim < clusters) throw Error(ErrorKind::kConfig, "node dims must hold a one-hot cluster code");
    if (comment_dim < kNumEmotions) throw Error(ErrorKind::kConfig, "comment_dim must be at least 8");
    const SynthCounts c = counts();
    if (c.users < 2 || c.images < 1) throw Error(ErrorKind::kConfig, "scale leaves too few nodes");
    const double pairs = 0.5 * static_cast<double>(c.users) * static_cast<double>(c.users - 1);
    if (static_cast<double>(c.connects) > 0.5 * pairs) {
      throw Error(ErrorKind::kInfeasible, std::to_string(c.connects) + " contacts among " + std::to_string(c.users) +
                                              " users is too dense to sample");
    }
    if (static_cast<double>(c.views) > 0.5 * static_cast<double>(c.users) * static_cast<double>(c.images)) {
      throw Error(ErrorKind::kInfeasible, std::to_string(c.views) + " views too dense for the node counts");
    }
  }
};

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"scale", c.scale},
          {"clusters", c.clusters},
          {"sigma", c.sigma},
          {"rho", c.rho},
          {"node_signal", c.node_signal},
          {"comment_signal", c.comment_signal},
          {"intra_cluster", c.intra_cluster},
          {"degree_exponent", c.degree_exponent},
          {"seed", c.seed},
          {"user_dim", c.user_dim},
          {"image_dim", c.image_dim},
          {"comment_dim", c.comment_dim},
          {"users", c.users},
          {"images", c.images},
          {"connects", c.connects},
          {"views", c.views}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c = {}) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "synth config must be a JSON object");
  const auto known = synth_config_to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorKind::kConfig, "unknown key '" + key + "'");
  }
  try {
    c.scale = j.value("scale", c.scale);
    c.clusters = j.value("clusters", c.clusters);
    c.sigma = j.value("sigma", c.sigma);
    c.rho = j.value("rho", c.rho);
    c.node_signal = j.value("node_signal", c.node_signal);
    c.comment_signal = j.value("comment_signal", c.comment_signal);
    c.intra_cluster = j.value("intra_cluster", c.intra_cluster);
    c.degree_exponent = j.value("degree_exponent", c.degree_exponent);
    c.seed = j.value("seed", c.seed);
    c.user_dim = j.value("user_dim", c.user_dim);
    c.image_dim = j.value("image_dim", c.image_dim);
    c.comment_dim = j.value("comment_dim", c.comment_dim);
    c.users = j.value("users", c.users);
    c.images = j.value("images", c.images);
    c.connects = j.value("connects", c.connects);
    c.views = j.value("views", c.views);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
  c.validate();
  return c;
}

struct SynthData {
  HeteroGraph graph;
  std::vector<std::uint32_t> user_cluster, image_cluster;
};

namespace detail {

// Independent streams so each component is unaffected by the others' draws.
enum SynthStream : std::uint64_t {
  kStreamUserCluster = 1,
  kStreamImageCluster,
  kStreamUserFeat,
  kStreamImageFeat,
  kStreamPropensity,
  kStreamConnects,
  kStreamViews,
  kStreamCommentMask,
  kStreamCommentFeat,
};

// Sampling proportional to weights via a cumulative table.
class WeightedPicker {
 public:
  WeightedPicker() = default;
  WeightedPicker(std::vector<std::uint32_t> items, const std::vector<double>& weight_of) : items_(std::move(items)) {
    double acc = 0.0;
    for (auto it : items_) {
      acc += weight_of[it];
      cum_.push_back(acc);
    }
  }
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  std::uint32_t pick(Rng& rng) const {
    const double x = rng.uniform() * cum_.back();
    auto k = static_cast<std::size_t>(std::upper_bound(cum_.begin(), cum_.end(), x) - cum_.begin());
    return items_[std::min(k, items_.size() - 1)];
  }

 private:
  std::vector<std::uint32_t> items_;
  std::vector<double> cum_;
};

inline void fill_node_features(FeatureTable& t, const std::vector<std::uint32_t>& cluster, double signal, double sigma,
                               Rng rng) {
  for (std::uint32_t r = 0; r < t.rows; ++r) {
    auto row = t.row(r);
    for (float& v : row) v = static_cast<float>(sigma * rng.normal());
    row[cluster[r]] += static_cast<float>(signal);
  }
}

inline std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

}  // namespace detail

inline SynthData generate_graph(const SynthConfig& cfg) {
  cfg.validate();
  using namespace detail;
  const SynthCounts n = cfg.counts();
  const std::uint64_t seed = cfg.seed;

  SynthData out;
  out.user_cluster.resize(n.users);
  out.image_cluster.resize(n.images);
  {
    Rng r(seed, kStreamUserCluster);
    for (auto& c : out.user_cluster) c = static_cast<std::uint32_t>(r.below(cfg.clusters));
    Rng s(seed, kStreamImageCluster);
    for (auto& c : out.image_cluster) c = static_cast<std::uint32_t>(s.below(cfg.clusters));
  }

  FeatureTable uf = FeatureTable::zeros(n.users, cfg.user_dim);
  FeatureTable imf = FeatureTable::zeros(n.images, cfg.image_dim);
  fill_node_features(uf, out.user_cluster, cfg.node_signal, cfg.sigma, Rng(seed, kStreamUserFeat));
  fill_node_features(imf, out.image_cluster, cfg.node_signal, cfg.sigma, Rng(seed, kStreamImageFeat));

  // Contacts: Chung-Lu style with Pareto propensities, biased toward the
  // same cluster.
  std::vector<double> prop(n.users);
  {
    Rng r(seed, kStreamPropensity);
    const double inv = 1.0 / (cfg.degree_exponent - 1.0);
    for (auto& w : prop) w = std::pow(1.0 - r.uniform(), -inv);
  }
  std::vector<std::uint32_t> all(n.users);
  for (std::uint32_t u = 0; u < n.users; ++u) all[u] = u;
  const WeightedPicker global(all, prop);
  std::vector<std::vector<std::uint32_t>> members(cfg.clusters);
  for (std::uint32_t u = 0; u < n.users; ++u) members[out.user_cluster[u]].push_back(u);
  std::vector<WeightedPicker> local;
  for (auto& m : members) local.emplace_back(m, prop);

  std::vector<std::pair<std::uint32_t, std::uint32_t>> connects;
  connects.reserve(n.connects);
  {
    Rng r(seed, kStreamConnects);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(n.connects * 2);
    while (connects.size() < n.connects) {
      const std::uint32_t a = global.pick(r);
      const auto& pool = local[out.user_cluster[a]];
      const bool intra = r.uniform() < cfg.intra_cluster && pool.size() > 1;
      const std::uint32_t b = intra ? pool.pick(r) : global.pick(r);
      if (a == b) continue;
      const auto key = pair_key(std::min(a, b), std::max(a, b));
      if (!seen.insert(key).second) continue;
      connects.emplace_back(std::min(a, b), std::max(a, b));
    }
  }

  std::vector<ViewsEdge> views;
  views.reserve(n.views);
  {
    Rng r(seed, kStreamViews);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(n.views * 2);
    while (views.size() < n.views) {
      const auto u = static_cast<std::uint32_t>(r.below(n.users));
      const auto i = static_cast<std::uint32_t>(r.below(n.images));
      if (!seen.insert(pair_key(u, i)).second) continue;
      ViewsEdge e;
      e.user = u;
      e.image = i;
      e.label = static_cast<std::uint8_t>((out.user_cluster[u] + out.image_cluster[i]) % kNumEmotions);
      views.push_back(e);
    }
    std::sort(views.begin(), views.end(),
              [](const ViewsEdge& x, const ViewsEdge& y) { return std::tie(x.user, x.image) < std::tie(y.user, y.image); });
  }

  // Exactly round(rho * E) edges carry a comment: one block per label set to
  // comment_signal, plus noise everywhere.
  const auto n_present = static_cast<std::size_t>(std::llround(cfg.rho * static_cast<double>(n.views)));
  std::vector<std::uint32_t> order(n.views);
  for (std::uint32_t k = 0; k < n.views; ++k) order[k] = k;
  Rng(seed, kStreamCommentMask).shuffle(std::span<std::uint32_t>(order));
  std::vector<char> present(n.views, 0);
  for (std::size_t k = 0; k < n_present; ++k) present[order[k]] = 1;

  FeatureTable comments = FeatureTable::zeros(static_cast<std::uint32_t>(n_present), cfg.comment_dim);
  {
    Rng r(seed, kStreamCommentFeat);
    const std::uint32_t block = cfg.comment_dim / kNumEmotions;
    std::uint32_t row = 0;
    for (std::size_t k = 0; k < views.size(); ++k) {
      if (!present[k]) continue;
      ViewsEdge& e = views[k];
      e.attr_missing = false;
      e.attr_row = row;
      auto dst = comments.row(row++);
      for (float& v : dst) v = static_cast<float>(cfg.sigma * r.normal());
      for (std::uint32_t d = 0; d < block; ++d) dst[e.label * block + d] += static_cast<float>(cfg.comment_signal);
    }
  }

  out.graph = build_graph(n.users, n.images, std::move(connects), std::move(views), std::move(uf), std::move(imf),
                          std::move(comments));
  return out;
}

// Writes the bundle plus synth_meta.json.
inline HeteroGraph generate(const SynthConfig& cfg, const std::filesystem::path& dir) {
  SynthData d = generate_graph(cfg);
  save_graph(d.graph, dir);
  const SynthCounts n = cfg.counts();
  nlohmann::json meta = {
      {"format", "hmg-synth/1"},
      {"seed", cfg.seed},
      {"config", synth_config_to_json(cfg)},
      {"targets", {{"users", n.users}, {"images", n.images}, {"connects", n.connects}, {"views", n.views}}},
  };
  io::write_text(dir / "synth_meta.json", meta.dump(2) + "\n");
  return std::move(d.graph);
}

struct DegreeSummary {
  std::uint64_t min = 0, median = 0, max = 0;
  double mean = 0.0;
};

inline DegreeSummary summarize_degrees(std::vector<std::uint64_t> deg) {
  DegreeSummary s;
  if (deg.empty()) return s;
  std::sort(deg.begin(), deg.end());
  s.min = deg.front();
  s.max = deg.back();
  s.median = deg[deg.size() / 2];
  double sum = 0.0;
  for (auto d : deg) sum += static_cast<double>(d);
  s.mean = sum / static_cast<double>(deg.size());
  return s;
}

struct Description {
  GraphStats stats;
  std::array<std::size_t, kNumEmotions> label_histogram{};
  double comment_availability = 0.0;
  double label_chi2 = 0.0;  // Pearson statistic against uniform, 7 dof
  DegreeSummary contact_degree, user_views, image_views;
};

inline Description describe(const HeteroGraph& g) {
  Description d;
  d.stats = g.stats();
  for (const ViewsEdge& e : g.views()) ++d.label_histogram[e.label];
  const auto n = static_cast<double>(g.views().size());
  if (n > 0) {
    d.comment_availability = static_cast<double>(d.stats.comments_present) / n;
    const double expect = n / kNumEmotions;
    for (auto c : d.label_histogram) d.label_chi2 += (static_cast<double>(c) - expect) * (static_cast<double>(c) - expect) / expect;
  }
  auto degrees = [&](NodeType t, std::uint32_t count, Relation rel) {
    std::vector<std::uint64_t> deg(count);
    for (std::uint32_t k = 0; k < count; ++k) deg[k] = g.neighbors({t, k}, rel).size();
    return summarize_degrees(std::move(deg));
  };
  d.contact_degree = degrees(NodeType::kUser, g.user_count(), Relation::kConnects);
  d.user_views = degrees(NodeType::kUser, g.user_count(), Relation::kViews);
  d.image_views = degrees(NodeType::kImage, g.image_count(), Relation::kViewedBy);
  return d;
}

inline Description describe(const std::filesystem::path& bundle) { return describe(load_graph(bundle)); }

inline nlohmann::json description_to_json(const Description& d) {
  auto deg = [](const DegreeSummary& s) {
    return nlohmann::json{{"min", s.min}, {"median", s.median}, {"mean", s.mean}, {"max", s.max}};
  };
  nlohmann::json hist = nlohmann::json::object();
  for (std::size_t k = 0; k < kNumEmotions; ++k) hist[std::string(kEmotionNames[k])] = d.label_histogram[k];
  return {{"counts", {{"users", d.stats.users}, {"images", d.stats.images}, {"connects", d.stats.connects},
                      {"views", d.stats.views}}},
          {"dims", {{"user", d.stats.user_dim}, {"image", d.stats.image_dim}, {"comment", d.stats.attr_dim}}},
          {"label_histogram", hist},
          {"label_chi2", d.label_chi2},
          {"comment_availability", d.comment_availability},
          {"degrees", {{"connects", deg(d.contact_degree)}, {"user_views", deg(d.user_views)},
                       {"image_viewed_by", deg(d.image_views)}}}};
}

inline std::string format_description(const Description& d) {
  std::ostringstream os;
  char buf[160];
  auto line = [&](const char* key, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-22s %s\n", key, value.c_str());
    os << buf;
  };
  line("users", std::to_string(d.stats.users));
  line("images", std::to_string(d.stats.images));
  line("connects", std::to_string(d.stats.connects));
  line("views", std::to_string(d.stats.views));
  line("dims (user/image/cmt)", std::to_string(d.stats.user_dim) + "/" + std::to_string(d.stats.image_dim) + "/" +
                                    std::to_string(d.stats.attr_dim));
  std::snprintf(buf, sizeof buf, "%.4f", d.comment_availability);
  line("comment availability", buf);
  for (std::size_t k = 0; k < kNumEmotions; ++k) {
    line(("  " + std::string(kEmotionNames[k])).c_str(), std::to_string(d.label_histogram[k]));
  }
  std::snprintf(buf, sizeof buf, "%.3f", d.label_chi2);
  line("label chi2 (7 dof)", buf);
  auto deg = [&](const char* key, const DegreeSummary& s) {
    std::snprintf(buf, sizeof buf, "min %llu  median %llu  mean %.2f  max %llu", static_cast<unsigned long long>(s.min),
                  static_cast<unsigned long long>(s.median), s.mean, static_cast<unsigned long long>(s.max));
    line(key, buf);
  };
  deg("contact degree", d.contact_degree);
  deg("views per user", d.user_views);
  deg("viewers per image", d.image_views);
  return os.str();
}

}  // namespace hmg
