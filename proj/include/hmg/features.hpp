#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hmg/bundle.hpp"
#include "hmg/error.hpp"
#include "hmg/graph.hpp"
#include "hmg/rng.hpp"
#include "json.hpp"

namespace hmg {

struct FeatureDims {
  std::uint32_t user = 128;
  std::uint32_t image = 128;
  std::uint32_t comment = 256;
};

// Special-interest group embeddings f(s) plus each user's memberships S_i.
struct GroupTable {
  FeatureTable embeddings;                             // one row per group
  std::vector<std::vector<std::uint32_t>> memberships;  // per user, group rows

  void validate() const {
    if (!embeddings.well_formed()) throw Error(ErrorKind::kDimensionMismatch, "group embedding payload size");
    for (std::size_t u = 0; u < memberships.size(); ++u) {
      for (std::uint32_t s : memberships[u]) {
        if (s >= embeddings.rows) {
          throw Error(ErrorKind::kOutOfRange, "user " + std::to_string(u) + " references group row " + std::to_string(s));
        }
      }
    }
  }
};

// Group context of a user: the mean of its groups' embeddings, or the zero
// vector when the user joined no group.
inline std::vector<double> aggregate_group_context(const GroupTable& table, std::uint32_t user) {
  if (user >= table.memberships.size()) throw Error(ErrorKind::kOutOfRange, "user " + std::to_string(user));
  std::vector<double> g(table.embeddings.dim, 0.0);
  const auto& groups = table.memberships[user];
  if (groups.empty()) return g;
  for (std::uint32_t s : groups) {
    auto row = table.embeddings.row(s);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(groups.size());
  for (double& v : g) v *= inv;
  return g;
}

inline FeatureTable user_features_from_groups(const GroupTable& table) {
  table.validate();
  const auto users = static_cast<std::uint32_t>(table.memberships.size());
  FeatureTable out = FeatureTable::zeros(users, table.embeddings.dim);
  for (std::uint32_t u = 0; u < users; ++u) {
    const auto g = aggregate_group_context(table, u);
    auto row = out.row(u);
    for (std::size_t k = 0; k < g.size(); ++k) row[k] = static_cast<float>(g[k]);
  }
  return out;
}

// groups.json: [{"group_id": ..., "embedding_file_row": ...}, ...]
// memberships.json: {"<user index>": [group_id, ...], ...}
inline GroupTable load_group_table(const std::filesystem::path& groups_json, const std::filesystem::path& memberships_json,
                                   const std::filesystem::path& embeddings_hmge, std::uint32_t user_count) {
  auto parse = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(ErrorKind::kIo, "cannot open " + p.string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kMalformedHeader, p.string() + ": " + e.what());
    }
  };
  const FeatureTable emb = read_hmge(embeddings_hmge);
  GroupTable table;
  table.embeddings.dim = emb.dim;
  std::map<std::string, std::uint32_t> group_row;
  try {
    const auto groups = parse(groups_json);
    for (const auto& g : groups) {
      const auto src_row = g.at("embedding_file_row").get<std::uint32_t>();
      if (src_row >= emb.rows) throw Error(ErrorKind::kOutOfRange, "embedding_file_row " + std::to_string(src_row));
      const std::string id = g.at("group_id").is_string() ? g.at("group_id").get<std::string>() : g.at("group_id").dump();
      if (!group_row.emplace(id, table.embeddings.rows).second) {
        throw Error(ErrorKind::kDuplicateEdge, "duplicate group_id " + id);
      }
      auto row = emb.row(src_row);
      table.embeddings.data.insert(table.embeddings.data.end(), row.begin(), row.end());
      ++table.embeddings.rows;
    }
    table.memberships.assign(user_count, {});
    const auto members = parse(memberships_json);
    for (const auto& [user_key, ids] : members.items()) {
      const unsigned long u = std::stoul(user_key);
      if (u >= user_count) throw Error(ErrorKind::kOutOfRange, "membership for user " + user_key);
      for (const auto& id : ids) {
        const std::string key = id.is_string() ? id.get<std::string>() : id.dump();
        auto it = group_row.find(key);
        if (it == group_row.end()) throw Error(ErrorKind::kOutOfRange, "unknown group_id " + key);
        table.memberships[u].push_back(it->second);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedHeader, std::string("group data: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorKind::kMalformedHeader, "memberships.json: user keys must be integers");
  }
  table.validate();
  return table;
}

// Dense per-edge comment table: present rows are copied, MISSING rows get
// i.i.d. Uniform[0,1) values from a stream keyed by (seed, edge index).
inline FeatureTable fill_missing_comment_attrs(const HeteroGraph& graph, std::uint64_t seed,
                                               std::uint32_t default_dim = 256) {
  const FeatureTable& src = graph.comment_attrs();
  const std::uint32_t dim = src.dim > 0 ? src.dim : default_dim;
  const auto edges = static_cast<std::uint32_t>(graph.views().size());
  FeatureTable out = FeatureTable::zeros(edges, dim);
  for (std::uint32_t k = 0; k < edges; ++k) {
    const ViewsEdge& e = graph.views()[k];
    auto dst = out.row(k);
    if (!e.attr_missing) {
      auto row = src.row(e.attr_row);
      std::copy(row.begin(), row.end(), dst.begin());
      continue;
    }
    Rng rng(seed, k);
    // 24-bit mantissa draws are exact in float and strictly below 1
    for (float& v : dst) v = static_cast<float>(rng.next_u64() >> 40) * 0x1.0p-24f;
  }
  return out;
}

// Installs feature tables on a graph, checking them against the configured
// dims and the graph's node and attribute-row counts.
inline HeteroGraph attach_embeddings(const HeteroGraph& graph, FeatureTable user_vecs, FeatureTable image_vecs,
                                     FeatureTable comment_vecs, const FeatureDims& dims = {}) {
  auto check = [](const FeatureTable& t, std::uint32_t rows, std::uint32_t dim, const char* what) {
    if (!t.well_formed() || t.rows != rows || t.dim != dim) {
      throw Error(ErrorKind::kDimensionMismatch, std::string(what) + " table is " + std::to_string(t.rows) + "x" +
                                                     std::to_string(t.dim) + ", expected " + std::to_string(rows) +
                                                     "x" + std::to_string(dim));
    }
  };
  check(user_vecs, graph.user_count(), dims.user, "user");
  check(image_vecs, graph.image_count(), dims.image, "image");
  std::uint32_t needed_rows = 0;
  for (const ViewsEdge& e : graph.views()) {
    if (!e.attr_missing) needed_rows = std::max(needed_rows, e.attr_row + 1);
  }
  if (comment_vecs.rows < needed_rows || comment_vecs.dim != dims.comment || !comment_vecs.well_formed()) {
    throw Error(ErrorKind::kDimensionMismatch, "comment table is " + std::to_string(comment_vecs.rows) + "x" +
                                                   std::to_string(comment_vecs.dim) + ", expected >=" +
                                                   std::to_string(needed_rows) + "x" + std::to_string(dims.comment));
  }
  return build_graph(graph.user_count(), graph.image_count(), graph.connects(), graph.views(), std::move(user_vecs),
                     std::move(image_vecs), std::move(comment_vecs));
}

}  // namespace hmg
