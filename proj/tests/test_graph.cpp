#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "hmg/bundle.hpp"
#include "hmg/graph.hpp"
#include "test_util.hpp"

namespace hmg {
namespace {

using test::random_graph;
using test::RandomGraphSpec;
using test::TempDir;
using Pairs = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

HeteroGraph bare_graph(std::uint32_t users, std::uint32_t images, Pairs connects, std::vector<ViewsEdge> views) {
  return build_graph(users, images, std::move(connects), std::move(views), FeatureTable::zeros(users, 2),
                     FeatureTable::zeros(images, 2), FeatureTable::zeros(0, 4));
}

ViewsEdge view(std::uint32_t u, std::uint32_t i, std::uint8_t label = 0) {
  ViewsEdge e;
  e.user = u;
  e.image = i;
  e.label = label;
  return e;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

std::vector<std::uint32_t> seq(std::span<const std::uint32_t> s) { return {s.begin(), s.end()}; }

// Table-1-shaped counts with dim-1 feature tables to keep memory small.
TEST(BuildGraph, ReferenceShapedStatsEcho) {
  constexpr std::uint32_t kUsers = 108899, kImages = 85157;
  constexpr std::size_t kConnects = 1649058, kViews = 197561;
  Pairs connects;
  connects.reserve(kConnects);
  // distinct pairs (a, a + d) enumerated in order
  for (std::uint32_t d = 1; connects.size() < kConnects; ++d)
    for (std::uint32_t a = 0; a + d < kUsers && connects.size() < kConnects; ++a) connects.emplace_back(a, a + d);
  std::vector<ViewsEdge> views;
  views.reserve(kViews);
  for (std::uint32_t k = 0; k < kViews; ++k) views.push_back(view(k % kUsers, (k * 7919u) % kImages, k % 8));
  const HeteroGraph g = build_graph(kUsers, kImages, std::move(connects), std::move(views),
                                    FeatureTable::zeros(kUsers, 1), FeatureTable::zeros(kImages, 1),
                                    FeatureTable::zeros(0, 1));
  const GraphStats s = g.stats();
  EXPECT_EQ(s.users, kUsers);
  EXPECT_EQ(s.images, kImages);
  EXPECT_EQ(s.connects, kConnects);
  EXPECT_EQ(s.views, kViews);

  const EdgeSplit split = split_edges(g, {}, 3);
  EXPECT_EQ(split.train.size(), 158049u);
  EXPECT_EQ(split.val.size(), 19756u);
  EXPECT_EQ(split.test.size(), 19756u);
}

TEST(BuildGraph, EmptyEdgeSets) {
  const HeteroGraph g = bare_graph(2, 2, {}, {});
  for (std::uint32_t u = 0; u < 2; ++u) {
    EXPECT_TRUE(g.neighbors({NodeType::kUser, u}, Relation::kConnects).empty());
    EXPECT_TRUE(g.neighbors({NodeType::kUser, u}, Relation::kViews).empty());
    EXPECT_TRUE(g.neighbors({NodeType::kImage, u}, Relation::kViewedBy).empty());
  }
}

TEST(BuildGraph, ErrorKindsAreDistinct) {
  EXPECT_EQ(kind_of([] { bare_graph(2, 2, {}, {view(0, 2)}); }), ErrorKind::kOutOfRange);
  EXPECT_EQ(kind_of([] { bare_graph(2, 2, {{0, 2}}, {}); }), ErrorKind::kOutOfRange);
  EXPECT_EQ(kind_of([] { bare_graph(2, 2, {}, {view(0, 1), view(0, 1, 3)}); }), ErrorKind::kDuplicateEdge);
  EXPECT_EQ(kind_of([] {
              build_graph(3, 2, {}, {}, FeatureTable::zeros(2, 2), FeatureTable::zeros(2, 2), FeatureTable::zeros(0, 4));
            }),
            ErrorKind::kDimensionMismatch);
  EXPECT_EQ(kind_of([] { bare_graph(2, 2, {}, {view(0, 1, 8)}); }), ErrorKind::kOutOfRange);
  EXPECT_EQ(kind_of([] {
              ViewsEdge e = view(0, 0);
              e.attr_missing = false;
              e.attr_row = 0;
              bare_graph(2, 2, {}, {e});
            }),
            ErrorKind::kOutOfRange);
}

TEST(Neighbors, OrderingAndSymmetry) {
  const HeteroGraph g = bare_graph(3, 4, {{0, 1}, {2, 0}, {1, 2}}, {view(0, 3), view(0, 1), view(2, 1)});
  EXPECT_EQ(seq(g.neighbors({NodeType::kUser, 0}, Relation::kViews)), (std::vector<std::uint32_t>{1, 3}));
  EXPECT_EQ(seq(g.neighbors({NodeType::kUser, 0}, Relation::kConnects)), (std::vector<std::uint32_t>{1, 2}));
  EXPECT_EQ(seq(g.neighbors({NodeType::kUser, 2}, Relation::kConnects)), (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(seq(g.neighbors({NodeType::kImage, 1}, Relation::kViewedBy)), (std::vector<std::uint32_t>{0, 2}));
  EXPECT_TRUE(g.neighbors({NodeType::kUser, 1}, Relation::kViews).empty());
  // edge ids line up with neighbor positions
  auto imgs = g.neighbors({NodeType::kUser, 0}, Relation::kViews);
  auto ids = g.edge_ids({NodeType::kUser, 0}, Relation::kViews);
  for (std::size_t k = 0; k < imgs.size(); ++k) EXPECT_EQ(g.views()[ids[k]].image, imgs[k]);
}

TEST(Neighbors, TypeMismatch) {
  const HeteroGraph g = bare_graph(2, 2, {{0, 1}}, {view(0, 0)});
  EXPECT_EQ(kind_of([&] { g.neighbors({NodeType::kImage, 0}, Relation::kConnects); }), ErrorKind::kTypeMismatch);
  EXPECT_EQ(kind_of([&] { g.neighbors({NodeType::kImage, 0}, Relation::kViews); }), ErrorKind::kTypeMismatch);
  EXPECT_EQ(kind_of([&] { g.neighbors({NodeType::kUser, 0}, Relation::kViewedBy); }), ErrorKind::kTypeMismatch);
}

TEST(Neighbors, SortedDuplicateFreeAndReverseConsistent) {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    RandomGraphSpec spec;
    spec.users = 15;
    spec.images = 9;
    spec.connects = 30;
    spec.views = 40;
    const HeteroGraph g = random_graph(spec, rng);
    std::size_t fwd = 0, rev = 0;
    for (std::uint32_t u = 0; u < spec.users; ++u) {
      for (Relation r : {Relation::kConnects, Relation::kViews}) {
        auto n = g.neighbors({NodeType::kUser, u}, r);
        EXPECT_TRUE(std::adjacent_find(n.begin(), n.end(), std::greater_equal<>()) == n.end());
        if (r == Relation::kViews) fwd += n.size();
        if (r == Relation::kConnects)
          for (std::uint32_t v : n) {
            auto back = g.neighbors({NodeType::kUser, v}, Relation::kConnects);
            EXPECT_TRUE(std::binary_search(back.begin(), back.end(), u));
          }
      }
    }
    for (std::uint32_t i = 0; i < spec.images; ++i) {
      auto n = g.neighbors({NodeType::kImage, i}, Relation::kViewedBy);
      rev += n.size();
      for (std::uint32_t u : n) EXPECT_TRUE(g.find_view(u, i).has_value());
    }
    EXPECT_EQ(fwd, g.views().size());
    EXPECT_EQ(rev, g.views().size());
  }
}

TEST(Split, RoundingContract) {
  std::vector<ViewsEdge> views;
  for (std::uint32_t k = 0; k < 10; ++k) views.push_back(view(k, 0));
  const HeteroGraph g = bare_graph(10, 1, {}, views);
  const EdgeSplit s = split_edges(g, {}, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, DeterministicDisjointExhaustive) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    RandomGraphSpec spec;
    spec.users = 20;
    spec.images = 12;
    spec.views = 5 + rng.below(100);
    const HeteroGraph g = random_graph(spec, rng);
    const EdgeSplit a = split_edges(g, {}, 1000 + trial);
    const EdgeSplit b = split_edges(g, {}, 1000 + trial);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);
    std::set<std::uint32_t> all;
    for (const auto* part : {&a.train, &a.val, &a.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), g.views().size());
    EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), g.views().size());
  }
}

TEST(Split, InvalidRatios) {
  const HeteroGraph g = bare_graph(2, 2, {}, {view(0, 0)});
  EXPECT_EQ(kind_of([&] { split_edges(g, {0.8, 0.1, 0.2}, 0); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { split_edges(g, {1.2, -0.1, -0.1}, 0); }), ErrorKind::kInvalidArgument);
}

TEST(NegativeSampling, ForcedAndInfeasible) {
  const HeteroGraph full = bare_graph(1, 1, {}, {view(0, 0)});
  EXPECT_EQ(kind_of([&] { sample_negative_edges(full, 1, 0); }), ErrorKind::kInfeasible);
  EXPECT_TRUE(sample_negative_edges(full, 0, 0).empty());

  const HeteroGraph g = bare_graph(2, 2, {}, {view(0, 0), view(0, 1), view(1, 1)});
  const auto neg = sample_negative_edges(g, 1, 5);
  ASSERT_EQ(neg.size(), 1u);
  EXPECT_EQ(neg[0], (std::pair<std::uint32_t, std::uint32_t>{1, 0}));
}

TEST(NegativeSampling, NoCollisionsNoDuplicatesDeterministic) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    RandomGraphSpec spec;
    spec.users = 10;
    spec.images = 8;
    spec.views = 30;
    const HeteroGraph g = random_graph(spec, rng);
    // sparse and dense regimes
    for (std::size_t count : {std::size_t{5}, std::size_t{45}}) {
      const auto a = sample_negative_edges(g, count, trial);
      EXPECT_EQ(a, sample_negative_edges(g, count, trial));
      ASSERT_EQ(a.size(), count);
      std::set<std::pair<std::uint32_t, std::uint32_t>> seen(a.begin(), a.end());
      EXPECT_EQ(seen.size(), count);
      for (const auto& [u, i] : a) EXPECT_FALSE(g.find_view(u, i).has_value());
    }
  }
}

TEST(Bundle, RoundTripIsExact) {
  Rng rng(24);
  RandomGraphSpec spec;
  spec.users = 3;
  spec.images = 2;
  spec.connects = 2;
  spec.views = 4;
  HeteroGraph g = random_graph(spec, rng);
  TempDir dir("bundle");
  save_graph(g, dir.path);
  const HeteroGraph back = load_graph(dir.path);
  EXPECT_TRUE(back == g);
  for (float v : back.user_features().data) EXPECT_TRUE(std::isfinite(v));

  // bit-exact payloads, including values float formatting would mangle
  FeatureTable odd = FeatureTable::zeros(2, 3);
  odd.data = {1e-45f, -0.0f, 3.4028235e38f, 0.1f, -7.25f, 1.0f / 3.0f};
  write_hmge(dir.path / "odd.bin", odd);
  EXPECT_TRUE(read_hmge(dir.path / "odd.bin") == odd);
}

TEST(Bundle, RandomGraphsRoundTrip) {
  Rng rng(25);
  TempDir dir("bundle_rand");
  for (int trial = 0; trial < 10; ++trial) {
    const HeteroGraph g = random_graph({}, rng);
    save_graph(g, dir.path / std::to_string(trial));
    EXPECT_TRUE(load_graph(dir.path / std::to_string(trial)) == g);
  }
}

TEST(Bundle, CorruptFiles) {
  Rng rng(26);
  const HeteroGraph g = random_graph({}, rng);
  TempDir dir("bundle_bad");
  auto fresh = [&](const std::string& tag) {
    const auto p = dir.path / tag;
    save_graph(g, p);
    return p;
  };
  {
    const auto p = fresh("magic");
    std::fstream f(p / "feat_user.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    EXPECT_EQ(kind_of([&] { load_graph(p); }), ErrorKind::kMalformedHeader);
  }
  {
    const auto p = fresh("trunc");
    std::filesystem::resize_file(p / "feat_image.bin", std::filesystem::file_size(p / "feat_image.bin") - 4);
    EXPECT_EQ(kind_of([&] { load_graph(p); }), ErrorKind::kTruncated);
  }
  {
    const auto p = fresh("count");
    std::filesystem::resize_file(p / "edges_views.bin", std::filesystem::file_size(p / "edges_views.bin") - 14);
    EXPECT_EQ(kind_of([&] { load_graph(p); }), ErrorKind::kCountMismatch);
  }
  {
    const auto p = fresh("manifest");
    std::ofstream(p / "manifest.json") << "{\"format\": \"other/9\"}";
    EXPECT_EQ(kind_of([&] { load_graph(p); }), ErrorKind::kMalformedHeader);
  }
}

}  // namespace
}  // namespace hmg
