#pragma once

// Heterogeneous message passing over a computation graph whose nodes are
// laid out users first, then images, in one combined row space.
//
// Attention layer, for destination i and neighbor j under relation r:
//
//   logit(i,j) = LeakyReLU(a_s[r] . Θx_i + a_t[r] . Θx_j + a_e[r] . Θ_e e_ij)
//   α(i,·)     = softmax over N(i) ∪ {i}
//   x'_i       = Σ_j α(i,j) Θx_j          (j ranges over N(i) ∪ {i})
//
// The edge term exists only for views / viewed-by edges. The self term uses
// its own attention pair and no edge term.

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hmg/autodiff.hpp"
#include "hmg/error.hpp"
#include "hmg/graph.hpp"

namespace hmg {

enum class Backbone { kGat, kSage, kConv };

inline std::string_view backbone_name(Backbone b) {
  switch (b) {
    case Backbone::kGat: return "gat";
    case Backbone::kSage: return "sage";
    case Backbone::kConv: return "conv";
  }
  return "?";
}

inline Backbone backbone_from_string(std::string_view s) {
  if (s == "gat") return Backbone::kGat;
  if (s == "sage") return Backbone::kSage;
  if (s == "conv") return Backbone::kConv;
  throw Error(ErrorKind::kConfig, "unknown backbone '" + std::string(s) + "'");
}

// Message-passing relations in the order their edges are laid out.
enum class MpRelation { kSelf = 0, kConnects = 1, kViews = 2, kViewedBy = 3 };
inline constexpr std::array<MpRelation, 4> kMpRelations = {MpRelation::kSelf, MpRelation::kConnects,
                                                           MpRelation::kViews, MpRelation::kViewedBy};

inline std::string_view relation_name(MpRelation r) {
  switch (r) {
    case MpRelation::kSelf: return "self";
    case MpRelation::kConnects: return "connects";
    case MpRelation::kViews: return "views";
    case MpRelation::kViewedBy: return "viewed_by";
  }
  return "?";
}

inline bool carries_attr(MpRelation r) { return r == MpRelation::kViews || r == MpRelation::kViewedBy; }

struct StackConfig {
  Backbone backbone = Backbone::kGat;
  std::uint32_t num_layers = 5;
  std::uint32_t hidden_dim = 64;
  std::uint32_t user_dim = 128;
  std::uint32_t image_dim = 128;
  std::uint32_t attr_dim = 256;
  double leaky_slope = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  bool use_comments = true;

  void validate() const {
    if (num_layers < 1) throw Error(ErrorKind::kConfig, "num_layers must be >= 1");
    if (hidden_dim == 0 || user_dim == 0 || image_dim == 0 || attr_dim == 0) {
      throw Error(ErrorKind::kConfig, "dimensions must be positive");
    }
    if (!(leaky_slope >= 0.0)) throw Error(ErrorKind::kConfig, "leaky slope must be >= 0");
  }
};

// Computation graph for one forward pass. Edges are (dst <- src) in the
// combined node space; attribute rows index the dense per-edge comment table.
struct MessageGraph {
  std::uint32_t num_users = 0;
  std::uint32_t num_images = 0;
  std::vector<std::uint32_t> user_ids;   // local -> global user index
  std::vector<std::uint32_t> image_ids;  // local -> global image index

  struct RelEdges {
    Index dst;
    Index src;
    Index view_edge;  // global views edge id, for attribute relations
    IndexPtr dst_ptr;  // shared copies handed to gather ops
    IndexPtr src_ptr;
    std::size_t size() const { return dst.size(); }
  };
  std::array<RelEdges, 4> rel;  // indexed by MpRelation

  // self + connects + views + viewed_by, concatenated in that order
  EdgeIndexPtr attention_edges;
  // connects + views + viewed_by, no self edges
  EdgeIndexPtr neighbor_edges;
  Tensor mean_weights;  // 1/|N(dst)| per neighbor edge; empty when no edges

  std::array<Tensor, 4> attrs;  // per relation [E_r, attr_dim]; filled by attach_attributes

  std::uint32_t num_nodes() const { return num_users + num_images; }
  std::uint32_t image_row(std::uint32_t local_image) const { return num_users + local_image; }
};

namespace detail {

inline void finalize_message_graph(MessageGraph& mg) {
  const std::size_t n = mg.num_nodes();
  auto& self = mg.rel[static_cast<int>(MpRelation::kSelf)];
  self.dst.resize(n);
  self.src.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) self.dst[i] = self.src[i] = i;

  Index all_src, all_dst, nb_src, nb_dst;
  for (MpRelation r : kMpRelations) {
    auto& e = mg.rel[static_cast<int>(r)];
    e.dst_ptr = std::make_shared<const Index>(e.dst);
    e.src_ptr = std::make_shared<const Index>(e.src);
    all_src.insert(all_src.end(), e.src.begin(), e.src.end());
    all_dst.insert(all_dst.end(), e.dst.begin(), e.dst.end());
    if (r == MpRelation::kSelf) continue;
    nb_src.insert(nb_src.end(), e.src.begin(), e.src.end());
    nb_dst.insert(nb_dst.end(), e.dst.begin(), e.dst.end());
  }
  std::vector<std::size_t> deg(n, 0);
  for (auto d : nb_dst) ++deg[d];
  if (!nb_dst.empty()) {
    mg.mean_weights = Tensor({nb_dst.size(), 1});
    for (std::size_t k = 0; k < nb_dst.size(); ++k) mg.mean_weights[k] = 1.0 / static_cast<double>(deg[nb_dst[k]]);
  } else {
    mg.mean_weights = Tensor{};
  }
  mg.attention_edges = EdgeIndex::make(std::move(all_src), std::move(all_dst), n, n);
  mg.neighbor_edges = EdgeIndex::make(std::move(nb_src), std::move(nb_dst), n, n);
}

// Adds every edge of the graph whose endpoints are both present.
inline void collect_edges(const HeteroGraph& g, MessageGraph& mg, const std::vector<std::int64_t>& user_local,
                          const std::vector<std::int64_t>& image_local) {
  auto& conn = mg.rel[static_cast<int>(MpRelation::kConnects)];
  auto& views = mg.rel[static_cast<int>(MpRelation::kViews)];
  auto& viewed = mg.rel[static_cast<int>(MpRelation::kViewedBy)];
  for (std::uint32_t lu = 0; lu < mg.num_users; ++lu) {
    const std::uint32_t u = mg.user_ids[lu];
    for (std::uint32_t v : g.neighbors({NodeType::kUser, u}, Relation::kConnects)) {
      if (user_local[v] < 0) continue;
      conn.dst.push_back(lu);
      conn.src.push_back(static_cast<std::uint32_t>(user_local[v]));
    }
    auto imgs = g.neighbors({NodeType::kUser, u}, Relation::kViews);
    auto ids = g.edge_ids({NodeType::kUser, u}, Relation::kViews);
    for (std::size_t k = 0; k < imgs.size(); ++k) {
      if (image_local[imgs[k]] < 0) continue;
      views.dst.push_back(lu);
      views.src.push_back(mg.image_row(static_cast<std::uint32_t>(image_local[imgs[k]])));
      views.view_edge.push_back(ids[k]);
    }
  }
  for (std::uint32_t li = 0; li < mg.num_images; ++li) {
    const std::uint32_t i = mg.image_ids[li];
    auto users = g.neighbors({NodeType::kImage, i}, Relation::kViewedBy);
    auto ids = g.edge_ids({NodeType::kImage, i}, Relation::kViewedBy);
    for (std::size_t k = 0; k < users.size(); ++k) {
      if (user_local[users[k]] < 0) continue;
      viewed.dst.push_back(mg.image_row(li));
      viewed.src.push_back(static_cast<std::uint32_t>(user_local[users[k]]));
      viewed.view_edge.push_back(ids[k]);
    }
  }
}

}  // namespace detail

inline MessageGraph full_message_graph(const HeteroGraph& g) {
  MessageGraph mg;
  mg.num_users = g.user_count();
  mg.num_images = g.image_count();
  mg.user_ids.resize(mg.num_users);
  mg.image_ids.resize(mg.num_images);
  std::vector<std::int64_t> ul(mg.num_users), il(mg.num_images);
  for (std::uint32_t u = 0; u < mg.num_users; ++u) ul[u] = mg.user_ids[u] = u;
  for (std::uint32_t i = 0; i < mg.num_images; ++i) il[i] = mg.image_ids[i] = i;
  detail::collect_edges(g, mg, ul, il);
  detail::finalize_message_graph(mg);
  return mg;
}

// Hop distance from the nearest seed over connects, views and viewed-by,
// in the combined node space (users, then images); -1 beyond `hops`.
inline std::vector<std::int32_t> hop_distances(const HeteroGraph& g, const std::vector<std::uint32_t>& seed_users,
                                               const std::vector<std::uint32_t>& seed_images, std::uint32_t hops) {
  const std::uint32_t nu = g.user_count();
  std::vector<std::int32_t> dist(static_cast<std::size_t>(nu) + g.image_count(), -1);
  std::vector<std::uint32_t> frontier;
  for (auto u : seed_users) {
    if (u >= nu) throw Error(ErrorKind::kOutOfRange, "seed user " + std::to_string(u));
    if (dist[u] < 0) dist[u] = 0, frontier.push_back(u);
  }
  for (auto i : seed_images) {
    if (i >= g.image_count()) throw Error(ErrorKind::kOutOfRange, "seed image " + std::to_string(i));
    if (dist[nu + i] < 0) dist[nu + i] = 0, frontier.push_back(nu + i);
  }
  std::size_t reached = frontier.size();
  for (std::uint32_t h = 1; h <= hops && !frontier.empty() && reached < dist.size(); ++h) {
    std::vector<std::uint32_t> next;
    auto visit = [&](std::uint32_t node) {
      if (dist[node] < 0) {
        dist[node] = static_cast<std::int32_t>(h);
        next.push_back(node);
      }
    };
    for (std::uint32_t node : frontier) {
      if (node < nu) {
        for (auto v : g.neighbors({NodeType::kUser, node}, Relation::kConnects)) visit(v);
        for (auto i : g.neighbors({NodeType::kUser, node}, Relation::kViews)) visit(nu + i);
      } else {
        for (auto u : g.neighbors({NodeType::kImage, node - nu}, Relation::kViewedBy)) visit(u);
      }
    }
    reached += next.size();
    frontier = std::move(next);
  }
  return dist;
}

inline MessageGraph induced_subgraph_from(const HeteroGraph& g, const std::vector<std::int32_t>& dist) {
  const std::uint32_t nu = g.user_count();
  MessageGraph mg;
  std::vector<std::int64_t> ul(nu, -1), il(g.image_count(), -1);
  for (std::uint32_t u = 0; u < nu; ++u) {
    if (dist[u] >= 0) ul[u] = mg.num_users++, mg.user_ids.push_back(u);
  }
  for (std::uint32_t i = 0; i < g.image_count(); ++i) {
    if (dist[nu + i] >= 0) il[i] = mg.num_images++, mg.image_ids.push_back(i);
  }
  detail::collect_edges(g, mg, ul, il);
  detail::finalize_message_graph(mg);
  return mg;
}

// Nodes within `hops` of any seed, with every graph edge among them. Seed
// embeddings after `hops` layers match the full-graph computation whenever
// batch statistics are not used.
inline MessageGraph induced_subgraph(const HeteroGraph& g, const std::vector<std::uint32_t>& seed_users,
                                     const std::vector<std::uint32_t>& seed_images, std::uint32_t hops) {
  return induced_subgraph_from(g, hop_distances(g, seed_users, seed_images, hops));
}

// Gathers the dense per-edge comment rows for the attribute relations.
inline void attach_attributes(MessageGraph& mg, const FeatureTable& per_edge_attrs) {
  for (MpRelation r : {MpRelation::kViews, MpRelation::kViewedBy}) {
    const auto& e = mg.rel[static_cast<int>(r)];
    Tensor& t = mg.attrs[static_cast<int>(r)];
    if (e.size() == 0) {
      t = Tensor{};
      continue;
    }
    t = Tensor({e.size(), per_edge_attrs.dim});
    for (std::size_t k = 0; k < e.size(); ++k) {
      if (e.view_edge[k] >= per_edge_attrs.rows) {
        throw Error(ErrorKind::kMissingAttribute, "no attribute row for views edge " + std::to_string(e.view_edge[k]));
      }
      auto row = per_edge_attrs.row(e.view_edge[k]);
      std::copy(row.begin(), row.end(), t.row(k).begin());
    }
  }
}

// Parameter names used by the stack.
namespace names {
inline std::string layer(Backbone b, std::uint32_t l) { return std::string(backbone_name(b)) + std::to_string(l); }
inline std::string attn(std::uint32_t l, MpRelation r, const char* which) {
  return "gat" + std::to_string(l) + "." + std::string(relation_name(r)) + "." + which;
}
inline std::string bn(std::uint32_t l, NodeType t, const char* which) {
  return "bn" + std::to_string(l) + (t == NodeType::kUser ? ".user." : ".image.") + which;
}
}  // namespace names

// Tape handles for one attention layer.
struct GatLayerParams {
  Var theta;                      // [d_in, d_out]
  std::optional<Var> theta_e;     // [d_attr, d_out]
  std::array<Var, 4> a_s;         // [d_out, 1] per relation
  std::array<Var, 4> a_t;         // [d_out, 1] per relation
  std::array<std::optional<Var>, 4> a_e;  // views and viewed_by only
  std::array<std::optional<Var>, 4> attrs;  // tape copies of mg.attrs, shared across layers

  static GatLayerParams bind(Tape& tape, const ParamStore& store, std::uint32_t layer, bool with_attrs) {
    GatLayerParams p;
    p.theta = tape.param(store, "gat" + std::to_string(layer) + ".theta");
    if (with_attrs) p.theta_e = tape.param(store, "gat" + std::to_string(layer) + ".theta_e");
    for (MpRelation r : kMpRelations) {
      const int k = static_cast<int>(r);
      p.a_s[k] = tape.param(store, names::attn(layer, r, "a_s"));
      p.a_t[k] = tape.param(store, names::attn(layer, r, "a_t"));
      if (with_attrs && carries_attr(r)) p.a_e[k] = tape.param(store, names::attn(layer, r, "a_e"));
    }
    return p;
  }
};

struct GatOutput {
  Var nodes;  // [N, d_out]
  Var alpha;  // one coefficient per attention edge
};

inline GatOutput gat_layer_forward(const MessageGraph& mg, Var x, const GatLayerParams& p, double slope) {
  Tape& tape = *x.tape;
  if (x.shape().size() != 2 || x.shape()[0] != mg.num_nodes()) {
    throw Error(ErrorKind::kDimensionMismatch, "gat layer input " + shape_str(x.shape()) + " for " +
                                                   std::to_string(mg.num_nodes()) + " nodes");
  }
  Var h = matmul(x, p.theta);
  std::vector<Var> parts;
  for (MpRelation r : kMpRelations) {
    const int k = static_cast<int>(r);
    const auto& e = mg.rel[k];
    if (e.size() == 0) continue;
    Var s = matmul(h, p.a_s[k]);
    Var t = matmul(h, p.a_t[k]);
    Var logit;
    if (r == MpRelation::kSelf) {
      logit = add(s, t);
    } else {
      logit = add(gather_rows(s, e.dst_ptr), gather_rows(t, e.src_ptr));
    }
    if (carries_attr(r) && p.a_e[k]) {
      if (mg.attrs[k].empty()) throw Error(ErrorKind::kMissingAttribute, "edge attributes not attached");
      Var edge_score = matmul(*p.theta_e, *p.a_e[k]);  // Θ_e a_e, so a_eᵀΘ_e e = eᵀ(Θ_e a_e)
      Var ea = p.attrs[k] ? *p.attrs[k] : tape.constant(mg.attrs[k]);
      logit = add(logit, matmul(ea, edge_score));
    }
    parts.push_back(logit);
  }
  Var alpha = segment_softmax(leaky_relu(concat_rows(parts), slope), mg.attention_edges);
  return {spmm(h, alpha, mg.attention_edges), alpha};
}

// x'_i = W_self x_i + W_neigh · mean_{j in N(i)} x_j
inline Var sage_layer_forward(const MessageGraph& mg, Var x, Var w_self, Var w_neigh) {
  Var out = matmul(x, w_self);
  if (mg.neighbor_edges->size() == 0) return out;
  Var agg = spmm(x, x.tape->constant(mg.mean_weights), mg.neighbor_edges);
  return add(out, matmul(agg, w_neigh));
}

// x'_i = W_self x_i + W_neigh · Σ_{j in N(i)} x_j
inline Var conv_layer_forward(const MessageGraph& mg, Var x, Var w_self, Var w_neigh) {
  Var out = matmul(x, w_self);
  if (mg.neighbor_edges->size() == 0) return out;
  return add(out, matmul(spmm(x, mg.neighbor_edges), w_neigh));
}

enum class Mode { kTrain, kEval };

struct StackOutput {
  Var nodes;                // [N, hidden], users first
  std::vector<Var> alphas;  // per attention layer
};

// Per-type input projection, then [layer -> batch norm (per node type) ->
// ReLU] for every layer.
inline StackOutput stack_forward(Tape& tape, const MessageGraph& mg, const Tensor& user_x, const Tensor& image_x,
                                 ParamStore& store, const StackConfig& cfg, Mode mode) {
  cfg.validate();
  if (mg.num_nodes() == 0) throw Error(ErrorKind::kDimensionMismatch, "empty computation graph");
  std::vector<Var> proj;
  if (mg.num_users > 0) {
    if (user_x.rows() != mg.num_users || user_x.cols() != cfg.user_dim) {
      throw Error(ErrorKind::kDimensionMismatch, "user input " + shape_str(user_x.shape()));
    }
    proj.push_back(add_bias(matmul(tape.constant(user_x), tape.param(store, "input.user.weight")),
                            tape.param(store, "input.user.bias")));
  }
  if (mg.num_images > 0) {
    if (image_x.rows() != mg.num_images || image_x.cols() != cfg.image_dim) {
      throw Error(ErrorKind::kDimensionMismatch, "image input " + shape_str(image_x.shape()));
    }
    proj.push_back(add_bias(matmul(tape.constant(image_x), tape.param(store, "input.image.weight")),
                            tape.param(store, "input.image.bias")));
  }
  Var x = proj.size() == 1 ? proj[0] : concat_rows(proj);
  StackOutput out;
  const bool train = mode == Mode::kTrain;
  std::array<std::optional<Var>, 4> attr_vars;
  if (cfg.backbone == Backbone::kGat && cfg.use_comments) {
    for (MpRelation r : kMpRelations) {
      const int k = static_cast<int>(r);
      if (carries_attr(r) && mg.rel[k].size() > 0 && !mg.attrs[k].empty()) attr_vars[k] = tape.constant(mg.attrs[k]);
    }
  }
  for (std::uint32_t l = 0; l < cfg.num_layers; ++l) {
    Var h;
    switch (cfg.backbone) {
      case Backbone::kGat: {
        auto p = GatLayerParams::bind(tape, store, l, cfg.use_comments);
        p.attrs = attr_vars;
        auto r = gat_layer_forward(mg, x, p, cfg.leaky_slope);
        h = r.nodes;
        out.alphas.push_back(r.alpha);
        break;
      }
      case Backbone::kSage:
      case Backbone::kConv: {
        const std::string base = names::layer(cfg.backbone, l);
        Var ws = tape.param(store, base + ".w_self");
        Var wn = tape.param(store, base + ".w_neigh");
        h = cfg.backbone == Backbone::kSage ? sage_layer_forward(mg, x, ws, wn) : conv_layer_forward(mg, x, ws, wn);
        break;
      }
    }
    std::vector<Var> normed;
    auto norm_part = [&](NodeType type, std::size_t begin, std::size_t end) {
      if (begin == end) return;
      Var part = (begin == 0 && end == mg.num_nodes()) ? h : slice_rows(h, begin, end);
      BatchNormOptions bo;
      bo.train = train;
      bo.eps = cfg.bn_eps;
      bo.momentum = cfg.bn_momentum;
      bo.running_mean = &store.at(names::bn(l, type, "running_mean")).value;
      bo.running_var = &store.at(names::bn(l, type, "running_var")).value;
      normed.push_back(relu(batch_norm(part, tape.param(store, names::bn(l, type, "gamma")),
                                       tape.param(store, names::bn(l, type, "beta")), bo)));
    };
    norm_part(NodeType::kUser, 0, mg.num_users);
    norm_part(NodeType::kImage, mg.num_users, mg.num_nodes());
    x = normed.size() == 1 ? normed[0] : concat_rows(normed);
  }
  out.nodes = x;
  return out;
}

}  // namespace hmg
