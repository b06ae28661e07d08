#include <gtest/gtest.h>

#include <fstream>

#include "hmg/features.hpp"
#include "test_util.hpp"

namespace hmg {
namespace {

using test::random_graph;
using test::RandomGraphSpec;
using test::TempDir;

GroupTable two_groups() {
  GroupTable t;
  t.embeddings = FeatureTable::zeros(2, 2);
  t.embeddings.data = {1.0f, 0.0f, 0.0f, 1.0f};
  t.memberships = {{0, 1}, {1}, {}};
  return t;
}

TEST(GroupContext, MeanSingleAndEmpty) {
  const GroupTable t = two_groups();
  EXPECT_EQ(aggregate_group_context(t, 0), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(aggregate_group_context(t, 1), (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(aggregate_group_context(t, 2), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(aggregate_group_context(t, 3), Error);
}

TEST(GroupContext, PermutationInvariantAndLinear) {
  Rng rng(31);
  GroupTable t;
  t.embeddings = FeatureTable::zeros(6, 5);
  for (float& v : t.embeddings.data) v = static_cast<float>(rng.normal());
  t.memberships = {{0, 3, 5, 1}, {5, 1, 0, 3}};
  const auto a = aggregate_group_context(t, 0);
  const auto b = aggregate_group_context(t, 1);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-15);

  GroupTable scaled = t;
  for (float& v : scaled.embeddings.data) v *= 4.0f;  // power of two keeps floats exact
  const auto c = aggregate_group_context(scaled, 0);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(c[k], 4.0 * a[k], 1e-14);
}

TEST(GroupContext, LoadFromFiles) {
  TempDir dir("groups");
  FeatureTable emb = FeatureTable::zeros(3, 2);
  emb.data = {9.0f, 9.0f, 1.0f, 0.0f, 0.0f, 1.0f};
  write_hmge(dir.path / "emb.bin", emb);
  std::ofstream(dir.path / "groups.json") << R"([{"group_id": "a", "embedding_file_row": 1},
                                               {"group_id": 7, "embedding_file_row": 2}])";
  std::ofstream(dir.path / "members.json") << R"({"0": ["a", 7], "2": [7]})";
  const GroupTable t = load_group_table(dir.path / "groups.json", dir.path / "members.json", dir.path / "emb.bin", 3);
  const FeatureTable uf = user_features_from_groups(t);
  EXPECT_EQ(uf.rows, 3u);
  EXPECT_EQ(uf.data, (std::vector<float>{0.5f, 0.5f, 0.0f, 0.0f, 0.0f, 1.0f}));

  std::ofstream(dir.path / "bad.json") << R"({"0": ["zzz"]})";
  EXPECT_THROW(load_group_table(dir.path / "groups.json", dir.path / "bad.json", dir.path / "emb.bin", 3), Error);
}

TEST(FillMissing, PresentRowsUntouchedFilledInUnitInterval) {
  Rng rng(32);
  RandomGraphSpec spec;
  spec.views = 20;
  spec.users = 8;
  spec.images = 6;
  const HeteroGraph g = random_graph(spec, rng);
  const FeatureTable a = fill_missing_comment_attrs(g, 11);
  EXPECT_EQ(a.rows, g.views().size());
  EXPECT_EQ(a.dim, spec.attr_dim);
  EXPECT_TRUE(a == fill_missing_comment_attrs(g, 11));
  EXPECT_FALSE(a == fill_missing_comment_attrs(g, 12));
  for (std::size_t k = 0; k < g.views().size(); ++k) {
    const ViewsEdge& e = g.views()[k];
    auto row = a.row(k);
    if (!e.attr_missing) {
      auto src = g.comment_attrs().row(e.attr_row);
      EXPECT_TRUE(std::equal(row.begin(), row.end(), src.begin()));
    } else {
      for (float v : row) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LT(v, 1.0f);
      }
    }
  }
}

TEST(FillMissing, NoMissingRowsLeavesTableUnchanged) {
  Rng rng(33);
  RandomGraphSpec spec;
  spec.comment_rate = 1.0;
  const HeteroGraph g = random_graph(spec, rng);
  const FeatureTable a = fill_missing_comment_attrs(g, 1);
  // rows are assigned in edge order, so the dense table is the source table
  EXPECT_TRUE(a == g.comment_attrs());
}

TEST(FillMissing, ReferenceShapedFillCount) {
  constexpr std::uint32_t kEdges = 197561;
  const auto present = static_cast<std::uint32_t>(std::llround(0.34 * kEdges));
  std::vector<ViewsEdge> views(kEdges);
  for (std::uint32_t k = 0; k < kEdges; ++k) {
    views[k].user = k;
    views[k].image = 0;
    if (k < present) {
      views[k].attr_missing = false;
      views[k].attr_row = k;
    }
  }
  const HeteroGraph g = build_graph(kEdges, 1, {}, std::move(views), FeatureTable::zeros(kEdges, 1),
                                    FeatureTable::zeros(1, 1), FeatureTable::zeros(present, 2));
  const FeatureTable dense = fill_missing_comment_attrs(g, 4);
  std::size_t filled = 0;
  for (std::uint32_t k = 0; k < kEdges; ++k) {
    auto row = dense.row(k);
    filled += std::any_of(row.begin(), row.end(), [](float v) { return v != 0.0f; }) ? 1 : 0;
  }
  EXPECT_EQ(filled, 130390u);
}

TEST(AttachEmbeddings, DimsAndRoundTrip) {
  Rng rng(34);
  RandomGraphSpec spec;
  const HeteroGraph g = random_graph(spec, rng);
  auto table = [&](std::uint32_t rows, std::uint32_t dim) {
    FeatureTable t = FeatureTable::zeros(rows, dim);
    for (float& v : t.data) v = static_cast<float>(rng.normal());
    return t;
  };
  const FeatureDims dims{};
  const HeteroGraph h = attach_embeddings(g, table(g.user_count(), 128), table(g.image_count(), 128),
                                          table(g.comment_attrs().rows, 256));
  EXPECT_EQ(h.stats().user_dim, 128u);
  EXPECT_EQ(h.stats().image_dim, 128u);
  EXPECT_EQ(h.stats().attr_dim, 256u);
  TempDir dir("attach");
  save_graph(h, dir.path);
  EXPECT_TRUE(load_graph(dir.path) == h);

  try {
    attach_embeddings(g, table(g.user_count(), 64), table(g.image_count(), 128), table(g.comment_attrs().rows, 256),
                      dims);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}

TEST(Hmge, HeaderErrors) {
  TempDir dir("hmge");
  FeatureTable t = FeatureTable::zeros(2, 2);
  write_hmge(dir.path / "t.bin", t);
  auto bytes = io::read_file(dir.path / "t.bin");
  auto expect_kind = [&](std::vector<unsigned char> b, ErrorKind kind) {
    io::write_file(dir.path / "x.bin", b);
    try {
      read_hmge(dir.path / "x.bin");
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind);
    }
  };
  auto bad_version = bytes;
  bad_version[4] = 2;
  expect_kind(bad_version, ErrorKind::kMalformedHeader);
  auto longer = bytes;
  longer.push_back(0);
  expect_kind(longer, ErrorKind::kCountMismatch);
  expect_kind({'H', 'M', 'G'}, ErrorKind::kTruncated);
}

}  // namespace
}  // namespace hmg
