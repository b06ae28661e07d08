#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "hmg/autodiff.hpp"
#include "hmg/bundle.hpp"
#include "hmg/fusion.hpp"
#include "hmg/graph.hpp"
#include "hmg/layers.hpp"
#include "hmg/rng.hpp"
#include "json.hpp"

namespace hmg {

struct ModelConfig {
  StackConfig stack;
  HeadConfig head;
  std::uint32_t heads = 1;

  // Fields the head mirrors from the stack.
  void sync() {
    head.input_dim = stack.hidden_dim;
    head.leaky_slope = stack.leaky_slope;
  }

  void validate() const {
    stack.validate();
    head.validate();
    if (heads != 1) throw Error(ErrorKind::kConfig, "only single-head attention is supported (heads=1)");
    if (head.input_dim != stack.hidden_dim) throw Error(ErrorKind::kConfig, "head input dim must equal hidden dim");
  }
};

// Reads the `model` section. Unknown keys are rejected by name.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig cfg = {}) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "model section must be an object");
  static const std::set<std::string> known = {"backbone", "num_layers", "hidden_dim", "user_dim", "image_dim",
                                              "comment_dim", "leaky_slope", "dropout", "heads", "mlp_hidden",
                                              "combine", "use_comments", "use_ac", "bn_eps", "bn_momentum",
                                              "num_classes"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::kConfig, "unknown key 'model." + key + "'");
  }
  try {
    if (j.contains("backbone")) cfg.stack.backbone = backbone_from_string(j["backbone"].get<std::string>());
    if (j.contains("num_layers")) cfg.stack.num_layers = j["num_layers"].get<std::uint32_t>();
    if (j.contains("hidden_dim")) cfg.stack.hidden_dim = j["hidden_dim"].get<std::uint32_t>();
    if (j.contains("user_dim")) cfg.stack.user_dim = j["user_dim"].get<std::uint32_t>();
    if (j.contains("image_dim")) cfg.stack.image_dim = j["image_dim"].get<std::uint32_t>();
    if (j.contains("comment_dim")) cfg.stack.attr_dim = j["comment_dim"].get<std::uint32_t>();
    if (j.contains("leaky_slope")) cfg.stack.leaky_slope = j["leaky_slope"].get<double>();
    if (j.contains("bn_eps")) cfg.stack.bn_eps = j["bn_eps"].get<double>();
    if (j.contains("bn_momentum")) cfg.stack.bn_momentum = j["bn_momentum"].get<double>();
    if (j.contains("use_comments")) cfg.stack.use_comments = j["use_comments"].get<bool>();
    if (j.contains("dropout")) cfg.head.dropout = j["dropout"].get<double>();
    if (j.contains("mlp_hidden")) cfg.head.hidden = j["mlp_hidden"].get<std::vector<std::uint32_t>>();
    if (j.contains("combine")) cfg.head.combine = combine_from_string(j["combine"].get<std::string>());
    if (j.contains("use_ac")) cfg.head.use_ac = j["use_ac"].get<bool>();
    if (j.contains("num_classes")) cfg.head.num_classes = j["num_classes"].get<std::uint32_t>();
    if (j.contains("heads")) cfg.heads = j["heads"].get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("model section: ") + e.what());
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {
      {"backbone", backbone_name(c.stack.backbone)},
      {"num_layers", c.stack.num_layers},
      {"hidden_dim", c.stack.hidden_dim},
      {"user_dim", c.stack.user_dim},
      {"image_dim", c.stack.image_dim},
      {"comment_dim", c.stack.attr_dim},
      {"leaky_slope", c.stack.leaky_slope},
      {"bn_eps", c.stack.bn_eps},
      {"bn_momentum", c.stack.bn_momentum},
      {"use_comments", c.stack.use_comments},
      {"dropout", c.head.dropout},
      {"mlp_hidden", c.head.hidden},
      {"combine", combine_name(c.head.combine)},
      {"use_ac", c.head.use_ac},
      {"num_classes", c.head.num_classes},
      {"heads", c.heads},
  };
}

struct Model {
  ModelConfig config;
  ParamStore params;
};

namespace detail {

inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace detail

// Glorot-uniform weights, zero biases, unit batch-norm scale, and a zero
// gate (β = 0.5) for the adaptive combination.
inline Model init_model(ModelConfig cfg, std::uint64_t seed) {
  cfg.sync();
  cfg.validate();
  Model m;
  m.config = cfg;
  ParamStore& p = m.params;
  Rng rng(seed, 0x1417);
  const auto& s = cfg.stack;
  const std::size_t hd = s.hidden_dim;
  p.add("input.user.weight", detail::glorot(s.user_dim, hd, rng));
  p.add("input.user.bias", Tensor({hd}));
  p.add("input.image.weight", detail::glorot(s.image_dim, hd, rng));
  p.add("input.image.bias", Tensor({hd}));
  for (std::uint32_t l = 0; l < s.num_layers; ++l) {
    if (s.backbone == Backbone::kGat) {
      p.add("gat" + std::to_string(l) + ".theta", detail::glorot(hd, hd, rng));
      p.add("gat" + std::to_string(l) + ".theta_e", detail::glorot(s.attr_dim, hd, rng));
      for (MpRelation r : kMpRelations) {
        p.add(names::attn(l, r, "a_s"), detail::glorot(hd, 1, rng));
        p.add(names::attn(l, r, "a_t"), detail::glorot(hd, 1, rng));
        if (carries_attr(r)) p.add(names::attn(l, r, "a_e"), detail::glorot(hd, 1, rng));
      }
    } else {
      const std::string base = names::layer(s.backbone, l);
      p.add(base + ".w_self", detail::glorot(hd, hd, rng));
      p.add(base + ".w_neigh", detail::glorot(hd, hd, rng));
    }
    for (NodeType t : {NodeType::kUser, NodeType::kImage}) {
      p.add(names::bn(l, t, "gamma"), Tensor({hd}, 1.0));
      p.add(names::bn(l, t, "beta"), Tensor({hd}, 0.0));
      p.add(names::bn(l, t, "running_mean"), Tensor({hd}, 0.0), false);
      p.add(names::bn(l, t, "running_var"), Tensor({hd}, 1.0), false);
    }
  }
  if (cfg.head.use_ac) {
    p.add("ac.w_u", Tensor::scalar(0.0));
    p.add("ac.w_i", Tensor::scalar(0.0));
  }
  std::size_t in = cfg.head.fused_dim();
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t out = k < 3 ? cfg.head.hidden[k] : cfg.head.num_classes;
    p.add(names::fc(k, "weight"), detail::glorot(in, out, rng));
    p.add(names::fc(k, "bias"), Tensor({out}));
    in = out;
  }
  return m;
}

// Stack inputs for the nodes of a computation graph, in local order.
inline std::pair<Tensor, Tensor> gather_node_inputs(const HeteroGraph& g, const MessageGraph& mg) {
  auto take = [](const FeatureTable& table, const std::vector<std::uint32_t>& ids) {
    if (ids.empty() || table.dim == 0) return Tensor{};
    Tensor t({ids.size(), table.dim});
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto row = table.row(ids[k]);
      std::copy(row.begin(), row.end(), t.row(k).begin());
    }
    return t;
  };
  return {take(g.user_features(), mg.user_ids), take(g.image_features(), mg.image_ids)};
}

// A computation graph with its inputs and (if used) edge attributes resolved.
struct PreparedGraph {
  MessageGraph mg;
  Tensor user_x;
  Tensor image_x;
  std::vector<std::int64_t> user_local;   // global -> local, -1 when absent
  std::vector<std::int64_t> image_local;

  static PreparedGraph make(const HeteroGraph& g, MessageGraph mg, const FeatureTable* dense_attrs) {
    PreparedGraph p;
    if (dense_attrs) attach_attributes(mg, *dense_attrs);
    std::tie(p.user_x, p.image_x) = gather_node_inputs(g, mg);
    p.user_local.assign(g.user_count(), -1);
    p.image_local.assign(g.image_count(), -1);
    for (std::uint32_t k = 0; k < mg.num_users; ++k) p.user_local[mg.user_ids[k]] = k;
    for (std::uint32_t k = 0; k < mg.num_images; ++k) p.image_local[mg.image_ids[k]] = k;
    p.mg = std::move(mg);
    return p;
  }
};

// Logits for edges (users[k], images[k]) given in global indices.
inline Var forward_edges(Tape& tape, const PreparedGraph& pg, Model& model, const std::vector<std::uint32_t>& users,
                         const std::vector<std::uint32_t>& images, Mode mode, std::uint64_t dropout_seed = 0) {
  if (users.size() != images.size() || users.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "edge batch must be nonempty with matching endpoints");
  }
  StackOutput st = stack_forward(tape, pg.mg, pg.user_x, pg.image_x, model.params, model.config.stack, mode);
  auto u_idx = std::make_shared<Index>(users.size());
  auto i_idx = std::make_shared<Index>(images.size());
  for (std::size_t k = 0; k < users.size(); ++k) {
    const std::int64_t lu = pg.user_local.at(users[k]);
    const std::int64_t li = pg.image_local.at(images[k]);
    if (lu < 0 || li < 0) throw Error(ErrorKind::kOutOfRange, "edge endpoint outside the computation graph");
    (*u_idx)[k] = static_cast<std::uint32_t>(lu);
    (*i_idx)[k] = pg.mg.image_row(static_cast<std::uint32_t>(li));
  }
  Var xu = gather_rows(st.nodes, u_idx);
  Var xi = gather_rows(st.nodes, i_idx);
  return classify_edges(xu, xi, model.params, model.config.head, mode, dropout_seed);
}

// Model file: "HMGM", u32 version, u64 manifest length, JSON manifest
// (config, extra metadata, tensor table), then float64 little-endian payload.
inline constexpr std::uint32_t kModelFileVersion = 1;

inline void save_model(const Model& m, const std::filesystem::path& path, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : m.params) {
    tensors.push_back({{"name", name}, {"shape", p.value.shape()}, {"trainable", p.trainable}, {"offset", offset}});
    offset += p.value.size();
  }
  nlohmann::json manifest = {{"format", "hmg-model/1"}, {"config", model_config_to_json(m.config)}, {"meta", meta},
                             {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::vector<unsigned char> buf = {'H', 'M', 'G', 'M'};
  io::put<std::uint32_t>(buf, kModelFileVersion);
  io::put<std::uint64_t>(buf, text.size());
  buf.insert(buf.end(), text.begin(), text.end());
  for (const auto& [name, p] : m.params) {
    for (double v : p.value.values()) io::put<double>(buf, v);
  }
  io::write_file(path, buf);
}

inline Model load_model(const std::filesystem::path& path, nlohmann::json* meta = nullptr) {
  io::Reader in(io::read_file(path), path.string());
  char magic[4];
  in.read_bytes(magic, 4);
  if (std::memcmp(magic, "HMGM", 4) != 0) throw Error(ErrorKind::kMalformedHeader, path.string() + ": bad magic");
  if (in.get<std::uint32_t>() != kModelFileVersion) throw Error(ErrorKind::kMalformedHeader, "unsupported model version");
  const auto len = in.get<std::uint64_t>();
  if (len > in.remaining()) throw Error(ErrorKind::kTruncated, path.string() + ": manifest truncated");
  std::string text(len, '\0');
  in.read_bytes(text.data(), len);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedHeader, path.string() + ": " + e.what());
  }
  Model m;
  m.config = model_config_from_json(manifest.at("config"));
  for (const auto& t : manifest.at("tensors")) {
    Tensor v(t.at("shape").get<Shape>());
    for (double& x : v.values()) x = in.get<double>();
    m.params.add(t.at("name").get<std::string>(), std::move(v), t.at("trainable").get<bool>());
  }
  if (in.remaining() != 0) throw Error(ErrorKind::kCountMismatch, path.string() + ": trailing bytes");
  // Layout must match what the config would build.
  const Model fresh = init_model(m.config, 0);
  if (fresh.params.size() != m.params.size()) throw Error(ErrorKind::kCountMismatch, "parameter count differs from config");
  for (const auto& [name, p] : fresh.params) {
    if (!m.params.contains(name) || m.params.at(name).value.shape() != p.value.shape()) {
      throw Error(ErrorKind::kDimensionMismatch, "parameter " + name + " missing or misshapen");
    }
  }
  if (meta) *meta = manifest.value("meta", nlohmann::json::object());
  return m;
}

}  // namespace hmg
