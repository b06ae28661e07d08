#pragma once

// Full-model gradient check: backward() against central differences on a
// small random heterograph, with dropout off and batch norm in eval mode.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hmg/autodiff.hpp"
#include "hmg/features.hpp"
#include "hmg/graph.hpp"
#include "hmg/model.hpp"
#include "hmg/rng.hpp"

namespace hmg {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double eps = 1e-5;          // finite-difference step
  double tolerance = 1e-4;    // on max relative error
  double denom_floor = 1e-5;  // |a - n| / max(|a|, |n|, floor)
  bool corrupt = false;      // negative control: perturb one analytic entry
};

struct GroupError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0, numeric = 0.0;
};

struct GradcheckResult {
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
  bool passed = false;
  double seconds = 0.0;
  std::size_t scalars = 0;
  std::size_t nonzero = 0;  // analytic entries above the floor
};

struct GradcheckInstance {
  HeteroGraph graph;
  Model model;
  FeatureTable dense_attrs;
};

// 12 users + 8 images, a few contacts and labeled views, half of which carry
// a comment vector. Parameters are jittered off their init (so the AC gate is
// away from its kink at 0) and running statistics randomized.
inline GradcheckInstance make_gradcheck_instance(std::uint64_t seed) {
  Rng rng(seed, 0x6C4EC);
  constexpr std::uint32_t kUsers = 12, kImages = 8, kUserDim = 5, kImageDim = 4, kAttrDim = 4;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> connects;
  while (connects.size() < 18) {
    auto a = static_cast<std::uint32_t>(rng.below(kUsers));
    auto b = static_cast<std::uint32_t>(rng.below(kUsers));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (std::find(connects.begin(), connects.end(), std::pair{a, b}) == connects.end()) connects.emplace_back(a, b);
  }
  std::vector<ViewsEdge> views;
  std::uint32_t attr_rows = 0;
  while (views.size() < 16) {
    ViewsEdge e;
    e.user = static_cast<std::uint32_t>(rng.below(kUsers));
    e.image = static_cast<std::uint32_t>(rng.below(kImages));
    bool dup = false;
    for (const auto& v : views) dup = dup || (v.user == e.user && v.image == e.image);
    if (dup) continue;
    e.label = static_cast<std::uint8_t>(rng.below(kNumEmotions));
    if (views.size() % 2 == 0) {
      e.attr_missing = false;
      e.attr_row = attr_rows++;
    }
    views.push_back(e);
  }
  auto table = [&](std::uint32_t rows, std::uint32_t dim) {
    FeatureTable t = FeatureTable::zeros(rows, dim);
    for (float& v : t.data) v = static_cast<float>(rng.normal());
    return t;
  };
  FeatureTable uf = table(kUsers, kUserDim);
  FeatureTable imf = table(kImages, kImageDim);
  FeatureTable cm = table(attr_rows, kAttrDim);

  GradcheckInstance inst;
  inst.graph = build_graph(kUsers, kImages, connects, views, uf, imf, cm);
  inst.dense_attrs = fill_missing_comment_attrs(inst.graph, seed, kAttrDim);

  ModelConfig mc;
  mc.stack.backbone = Backbone::kGat;
  mc.stack.num_layers = 2;
  mc.stack.hidden_dim = 6;
  mc.stack.user_dim = kUserDim;
  mc.stack.image_dim = kImageDim;
  mc.stack.attr_dim = kAttrDim;
  mc.stack.use_comments = true;
  mc.head.hidden = {6, 5, 4};
  mc.head.use_ac = true;
  mc.sync();
  inst.model = init_model(mc, seed);
  for (auto& [name, p] : inst.model.params) {
    const bool var = name.ends_with("running_var");
    const bool mean = name.ends_with("running_mean");
    for (double& v : p.value.values()) {
      if (var) v = rng.uniform(0.5, 2.0);
      else if (mean) v = 0.2 * rng.normal();
      else v += 0.2 * rng.normal();
    }
  }
  return inst;
}

inline GradcheckResult run_gradcheck(const GradcheckOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckInstance inst = make_gradcheck_instance(opt.seed);
  const PreparedGraph pg = PreparedGraph::make(inst.graph, full_message_graph(inst.graph), &inst.dense_attrs);
  std::vector<std::uint32_t> users, images;
  auto labels = std::make_shared<Index>();
  for (const ViewsEdge& e : inst.graph.views()) {
    users.push_back(e.user);
    images.push_back(e.image);
    labels->push_back(e.label);
  }
  Model& model = inst.model;
  auto loss_of = [&](Tape& tape) {
    return cross_entropy(forward_edges(tape, pg, model, users, images, Mode::kEval), labels);
  };

  model.params.zero_grad();
  Tape tape;
  GradTable analytic = tape.backward(loss_of(tape), &model.params);
  if (opt.corrupt && !analytic.empty()) analytic.begin()->second[0] += 1e-2 + std::abs(analytic.begin()->second[0]);

  const GradTable numeric = finite_diff_grad(
      [&](const ParamStore&) {
        Tape t;
        return loss_of(t).value().item();
      },
      model.params, opt.eps);

  GradcheckResult r;
  r.passed = true;
  for (const auto& [name, a] : analytic) {
    const Tensor& n = numeric.at(name);
    GroupError ge{name, 0.0, 0, 0.0, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double denom = std::max({std::abs(a[i]), std::abs(n[i]), opt.denom_floor});
      const double rel = std::abs(a[i] - n[i]) / denom;
      if (rel > ge.max_rel_error || i == 0) ge = {name, rel, i, a[i], n[i]};
    }
    r.scalars += a.size();
    for (double v : a.values()) r.nonzero += std::abs(v) > opt.denom_floor ? 1 : 0;
    r.max_rel_error = std::max(r.max_rel_error, ge.max_rel_error);
    r.passed = r.passed && ge.max_rel_error < opt.tolerance;
    r.groups.push_back(ge);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace hmg
