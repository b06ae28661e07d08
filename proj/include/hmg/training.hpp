#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "hmg/autodiff.hpp"
#include "hmg/features.hpp"
#include "hmg/graph.hpp"
#include "hmg/metrics.hpp"
#include "hmg/model.hpp"
#include "json.hpp"

namespace hmg {

struct TrainConfig {
  ModelConfig model;
  std::uint32_t epochs = 20;
  std::uint32_t batch_size = 512;
  double base_lr = 0.005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool negative_sampling = false;
  double neg_ratio = 1.0;
  std::uint32_t folds = 3;
  std::uint64_t fold_seed_stride = 1;  // fold k trains with seed + k * stride
  bool class_weighting = false;
  double max_grad_norm = 0.0;  // 0 disables clipping
  bool select_best_val = true;
  SplitRatios split;
  std::uint64_t comment_fill_seed = 0;
  std::uint32_t threads = 0;  // concurrent folds; 0 = one per core

  std::uint32_t num_classes() const { return negative_sampling ? kNumEmotions + 1 : kNumEmotions; }

  void validate() const {
    model.validate();
    if (epochs == 0 || batch_size == 0) throw Error(ErrorKind::kConfig, "epochs and batch_size must be positive");
    if (!(base_lr > 0.0)) throw Error(ErrorKind::kConfig, "base_lr must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
      throw Error(ErrorKind::kConfig, "adam coefficients out of range");
    }
    if (negative_sampling && !(neg_ratio > 0.0)) throw Error(ErrorKind::kConfig, "neg_ratio must be positive");
    if (folds == 0) throw Error(ErrorKind::kConfig, "folds must be positive");
    if (max_grad_norm < 0.0) throw Error(ErrorKind::kConfig, "max_grad_norm must be >= 0");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::kConfig, "unknown key '" + section + "." + key + "'");
  }
}

}  // namespace detail

// Config file: {"model": {...}, "train": {...}, "data": {...}}; every
// section and key is optional, unknown keys are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg = {}) {
  detail::reject_unknown(j, {"model", "train", "data"}, "config");
  try {
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"], cfg.model);
    if (j.contains("train")) {
      const auto& t = j["train"];
      detail::reject_unknown(t, {"epochs", "batch_size", "base_lr", "adam_beta1", "adam_beta2", "adam_eps", "seed",
                                 "negative_sampling", "neg_ratio", "folds", "fold_seed_stride", "class_weighting",
                                 "max_grad_norm", "select_best_val", "threads"},
                             "train");
      cfg.epochs = t.value("epochs", cfg.epochs);
      cfg.batch_size = t.value("batch_size", cfg.batch_size);
      cfg.base_lr = t.value("base_lr", cfg.base_lr);
      cfg.adam_beta1 = t.value("adam_beta1", cfg.adam_beta1);
      cfg.adam_beta2 = t.value("adam_beta2", cfg.adam_beta2);
      cfg.adam_eps = t.value("adam_eps", cfg.adam_eps);
      cfg.seed = t.value("seed", cfg.seed);
      cfg.negative_sampling = t.value("negative_sampling", cfg.negative_sampling);
      cfg.neg_ratio = t.value("neg_ratio", cfg.neg_ratio);
      cfg.folds = t.value("folds", cfg.folds);
      cfg.fold_seed_stride = t.value("fold_seed_stride", cfg.fold_seed_stride);
      cfg.class_weighting = t.value("class_weighting", cfg.class_weighting);
      cfg.max_grad_norm = t.value("max_grad_norm", cfg.max_grad_norm);
      cfg.select_best_val = t.value("select_best_val", cfg.select_best_val);
      cfg.threads = t.value("threads", cfg.threads);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      detail::reject_unknown(d, {"split", "comment_fill_seed"}, "data");
      if (d.contains("split")) {
        const auto r = d["split"].get<std::vector<double>>();
        if (r.size() != 3) throw Error(ErrorKind::kConfig, "data.split needs three ratios");
        cfg.split = {r[0], r[1], r[2]};
        if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw Error(ErrorKind::kConfig, "data.split must sum to 1");
      }
      cfg.comment_fill_seed = d.value("comment_fill_seed", cfg.comment_fill_seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json model = model_config_to_json(c.model);
  model.erase("num_classes");
  return {
      {"model", model},
      {"train",
       {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"base_lr", c.base_lr}, {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps}, {"seed", c.seed},
        {"negative_sampling", c.negative_sampling}, {"neg_ratio", c.neg_ratio}, {"folds", c.folds},
        {"fold_seed_stride", c.fold_seed_stride}, {"class_weighting", c.class_weighting},
        {"max_grad_norm", c.max_grad_norm}, {"select_best_val", c.select_best_val}, {"threads", c.threads}}},
      {"data", {{"split", {c.split.train, c.split.val, c.split.test}}, {"comment_fill_seed", c.comment_fill_seed}}},
  };
}

// Cosine annealing from base_lr at epoch 0 to 0 at epoch T = epochs.
inline double lr_at(std::uint32_t epoch, const TrainConfig& cfg) {
  if (epoch > cfg.epochs) {
    throw Error(ErrorKind::kOutOfRange, "epoch " + std::to_string(epoch) + " beyond " + std::to_string(cfg.epochs));
  }
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return 0.5 * cfg.base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      if (!p.trainable) continue;
      auto [it, fresh] = state_.try_emplace(name);
      if (fresh) {
        it->second.m = Tensor::zeros_like(p.value);
        it->second.v = Tensor::zeros_like(p.value);
      }
      Tensor& m = it->second.m;
      Tensor& v = it->second.v;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  double b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

inline double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : params) {
    if (!p.trainable) continue;
    for (double g : p.grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, p] : params) {
      if (p.trainable) {
        for (double& g : p.grad.values()) g *= s;
      }
    }
  }
  return norm;
}

struct EpochLog {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct EvalResult {
  ConfusionMatrix confusion{kNumEmotions};
  Scores weighted;
  Scores macro;
  std::size_t count = 0;
};

struct FoldReport {
  std::uint32_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  std::vector<EpochLog> epochs;
  std::uint32_t best_epoch = 0;
  std::optional<EvalResult> test;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return r;
}

// Table-style cell, e.g. "0.77 ± 0.003".
inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.3f", m.mean, m.std);
  return buf;
}

struct TrainReport {
  TrainConfig config;
  std::vector<FoldReport> folds;
  double wall_clock_seconds = 0.0;

  MeanStd summary(bool weighted, double Scores::*field) const {
    std::vector<double> xs;
    for (const auto& f : folds) {
      if (f.test) xs.push_back((weighted ? f.test->weighted : f.test->macro).*field);
    }
    return mean_std(xs);
  }
};

// Everything one run needs, resolved once: per-edge comment table and the
// full-graph computation graph.
struct TrainingContext {
  const HeteroGraph* graph = nullptr;
  FeatureTable dense_attrs;
  PreparedGraph full;
  bool use_comments = false;

  static TrainingContext make(const HeteroGraph& g, const ModelConfig& mc, std::uint64_t fill_seed) {
    const auto& s = mc.stack;
    const GraphStats st = g.stats();
    if (st.user_dim != s.user_dim || st.image_dim != s.image_dim) {
      throw Error(ErrorKind::kDimensionMismatch, "graph feature dims " + std::to_string(st.user_dim) + "/" +
                                                     std::to_string(st.image_dim) + " vs model " +
                                                     std::to_string(s.user_dim) + "/" + std::to_string(s.image_dim));
    }
    if (st.attr_dim != 0 && st.attr_dim != s.attr_dim) {
      throw Error(ErrorKind::kDimensionMismatch, "comment dim " + std::to_string(st.attr_dim) + " vs model " +
                                                     std::to_string(s.attr_dim));
    }
    TrainingContext c;
    c.graph = &g;
    c.use_comments = s.backbone == Backbone::kGat && s.use_comments;
    if (c.use_comments && !g.views().empty()) c.dense_attrs = fill_missing_comment_attrs(g, fill_seed, s.attr_dim);
    c.full = PreparedGraph::make(g, full_message_graph(g), c.use_comments ? &c.dense_attrs : nullptr);
    return c;
  }

  // Computation graph for a batch: the hop-limited neighborhood of its
  // endpoints, or the cached full graph when that neighborhood is everything.
  std::optional<PreparedGraph> batch_graph(const std::vector<std::uint32_t>& users,
                                           const std::vector<std::uint32_t>& images, std::uint32_t hops) const {
    auto dist = hop_distances(*graph, users, images, hops);
    if (std::all_of(dist.begin(), dist.end(), [](std::int32_t d) { return d >= 0; })) return std::nullopt;
    return PreparedGraph::make(*graph, induced_subgraph_from(*graph, dist), use_comments ? &dense_attrs : nullptr);
  }
};

// Eval-mode logits for the given edges from one full-graph pass.
inline Tensor predict_logits(const TrainingContext& ctx, Model& model, const std::vector<std::uint32_t>& users,
                             const std::vector<std::uint32_t>& images) {
  Tape tape;
  return forward_edges(tape, ctx.full, model, users, images, Mode::kEval).value();
}

inline std::vector<std::uint32_t> argmax_rows(const Tensor& logits) {
  std::vector<std::uint32_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

// Eval-mode metrics on real views edges. A "non-existent" prediction counts
// as a miss for the edge's true class; that class has no support, so it
// carries no weight in the averages.
inline EvalResult evaluate(const TrainingContext& ctx, Model& model, const std::vector<std::uint32_t>& edge_ids) {
  if (edge_ids.empty()) throw Error(ErrorKind::kEmptySplit, "evaluate on an empty edge set");
  std::vector<std::uint32_t> users, images, labels;
  for (auto id : edge_ids) {
    const ViewsEdge& e = ctx.graph->views().at(id);
    users.push_back(e.user);
    images.push_back(e.image);
    labels.push_back(e.label);
  }
  const Tensor logits = predict_logits(ctx, model, users, images);
  EvalResult r;
  r.confusion = confusion(labels, argmax_rows(logits), model.config.head.num_classes);
  r.weighted = weighted_scores(r.confusion);
  r.macro = macro_scores(r.confusion);
  r.count = edge_ids.size();
  return r;
}

inline Tensor inverse_frequency_weights(const HeteroGraph& g, const std::vector<std::uint32_t>& train,
                                        std::uint32_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (auto id : train) counts[g.views()[id].label] += 1.0;
  if (classes > kNumEmotions) counts[kNonExistent] = static_cast<double>(train.size());
  Tensor w({classes});
  double present = 0.0;
  for (double c : counts) present += c > 0 ? 1.0 : 0.0;
  for (std::uint32_t c = 0; c < classes; ++c) {
    w[c] = counts[c] > 0 ? static_cast<double>(train.size()) / (present * counts[c]) : 0.0;
  }
  return w;
}

inline double eval_loss(const TrainingContext& ctx, Model& model, const std::vector<std::uint32_t>& edge_ids) {
  std::vector<std::uint32_t> users, images;
  auto labels = std::make_shared<Index>();
  for (auto id : edge_ids) {
    const ViewsEdge& e = ctx.graph->views()[id];
    users.push_back(e.user);
    images.push_back(e.image);
    labels->push_back(e.label);
  }
  Tape tape;
  Var logits = forward_edges(tape, ctx.full, model, users, images, Mode::kEval);
  return cross_entropy(logits, labels).value().item();
}

struct TrainResult {
  Model model;
  FoldReport report;
};

// One supervised run: mini-batches of training edges (plus per-epoch
// negatives when enabled), Adam with the cosine schedule, and the parameters
// of the best validation-loss epoch retained.
inline TrainResult train(const HeteroGraph& graph, const EdgeSplit& split, const TrainConfig& cfg_in,
                         const TrainingContext* shared_ctx = nullptr) {
  TrainConfig cfg = cfg_in;
  cfg.model.head.num_classes = cfg.num_classes();
  cfg.validate();
  if (split.train.empty()) throw Error(ErrorKind::kEmptySplit, "training split is empty");
  std::optional<TrainingContext> own_ctx;
  if (!shared_ctx) own_ctx = TrainingContext::make(graph, cfg.model, cfg.comment_fill_seed);
  const TrainingContext& ctx = shared_ctx ? *shared_ctx : *own_ctx;

  TrainResult result{init_model(cfg.model, cfg.seed), {}};
  Model& model = result.model;
  FoldReport& rep = result.report;
  rep.seed = cfg.seed;
  rep.train_size = split.train.size();
  rep.val_size = split.val.size();
  rep.test_size = split.test.size();

  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  const Tensor class_w = cfg.class_weighting ? inverse_frequency_weights(graph, split.train, cfg.num_classes()) : Tensor{};
  std::optional<ParamStore> best;
  double best_val = std::numeric_limits<double>::infinity();

  struct Item {
    std::uint32_t user, image, label;
  };
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::vector<Item> items;
    items.reserve(split.train.size() * 2);
    for (auto id : split.train) {
      const ViewsEdge& e = graph.views()[id];
      items.push_back({e.user, e.image, e.label});
    }
    if (cfg.negative_sampling) {
      const auto n_neg = static_cast<std::size_t>(std::llround(cfg.neg_ratio * static_cast<double>(split.train.size())));
      for (const auto& [u, i] : sample_negative_edges(graph, n_neg, derive_seed(cfg.seed, 0xE9000 + epoch))) {
        items.push_back({u, i, kNonExistent});
      }
    }
    Rng(cfg.seed, 0x5A0000 + epoch).shuffle(std::span<Item>(items));

    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < items.size(); start += cfg.batch_size, ++batch) {
      const std::size_t stop = std::min(items.size(), start + cfg.batch_size);
      std::vector<std::uint32_t> users, images;
      auto labels = std::make_shared<Index>();
      for (std::size_t k = start; k < stop; ++k) {
        users.push_back(items[k].user);
        images.push_back(items[k].image);
        labels->push_back(items[k].label);
      }
      const auto sub = ctx.batch_graph(users, images, cfg.model.stack.num_layers);
      const PreparedGraph& pg = sub ? *sub : ctx.full;
      Tape tape;
      const std::uint64_t drop_seed = derive_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) | batch);
      Var logits = forward_edges(tape, pg, model, users, images, Mode::kTrain, drop_seed);
      Var loss = cross_entropy(logits, labels, class_w);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw Error(ErrorKind::kNonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch) +
                                                   " batch " + std::to_string(batch) + "; last good epoch " +
                                                   (epoch == 0 ? std::string("none") : std::to_string(epoch - 1)));
      }
      model.params.zero_grad();
      tape.backward(loss, &model.params);
      clip_grad_norm(model.params, cfg.max_grad_norm);
      adam.step(model.params, lr);
      loss_sum += lv * static_cast<double>(stop - start);
    }
    EpochLog log{epoch, lr, loss_sum / static_cast<double>(items.size()), std::nullopt};
    if (!split.val.empty()) {
      log.val_loss = eval_loss(ctx, model, split.val);
      if (cfg.select_best_val && *log.val_loss < best_val) {
        best_val = *log.val_loss;
        best = model.params;
        rep.best_epoch = epoch;
      }
    }
    rep.epochs.push_back(log);
  }
  if (best) {
    model.params = std::move(*best);
  } else {
    rep.best_epoch = cfg.epochs - 1;
  }
  model.params.zero_grad();
  if (!split.test.empty()) rep.test = evaluate(ctx, model, split.test);
  return result;
}

// Repeated random sub-sampling: fold k re-splits and trains with
// seed + k * fold_seed_stride. Folds run on up to cfg.threads threads; the
// report does not depend on scheduling.
inline std::uint32_t fold_workers(const TrainConfig& cfg) {
  std::uint32_t n = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HMG_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min(n, static_cast<std::uint32_t>(cap));
  }
  return std::min(n, cfg.folds);
}

inline TrainReport cross_validate(const HeteroGraph& graph, const TrainConfig& cfg,
                                  std::vector<Model>* models_out = nullptr) {
  cfg.validate();
  if (cfg.folds < 2) throw Error(ErrorKind::kConfig, "cross-validation needs folds >= 2");
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig run_cfg = cfg;
  run_cfg.model.head.num_classes = cfg.num_classes();
  const TrainingContext ctx = TrainingContext::make(graph, run_cfg.model, cfg.comment_fill_seed);

  TrainReport report;
  report.config = cfg;
  report.folds.resize(cfg.folds);
  std::vector<std::optional<Model>> models(cfg.folds);
  std::vector<std::exception_ptr> errors(cfg.folds);
  auto run_fold = [&](std::uint32_t k) {
    try {
      TrainConfig fc = cfg;
      fc.seed = cfg.seed + k * cfg.fold_seed_stride;
      const EdgeSplit split = split_edges(graph, cfg.split, fc.seed);
      TrainResult r = train(graph, split, fc, &ctx);
      r.report.fold = k;
      report.folds[k] = std::move(r.report);
      models[k] = std::move(r.model);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::uint32_t workers = fold_workers(cfg);
  if (workers <= 1) {
    for (std::uint32_t k = 0; k < cfg.folds; ++k) run_fold(k);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::uint32_t> next{0};
    for (std::uint32_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::uint32_t k = next++; k < cfg.folds; k = next++) run_fold(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (models_out) {
    models_out->clear();
    for (auto& m : models) models_out->push_back(std::move(*m));
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline nlohmann::json scores_json(const Scores& s) {
  return {{"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}};
}

inline nlohmann::json report_to_json(const TrainReport& r, bool include_wall_clock = true) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : f.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr)}});
    }
    nlohmann::json fj = {{"fold", f.fold},
                         {"seed", f.seed},
                         {"sizes", {{"train", f.train_size}, {"val", f.val_size}, {"test", f.test_size}}},
                         {"best_epoch", f.best_epoch},
                         {"epochs", epochs}};
    if (f.test) fj["test"] = {{"weighted", scores_json(f.test->weighted)}, {"macro", scores_json(f.test->macro)},
                              {"count", f.test->count}};
    folds.push_back(fj);
  }
  auto summary = [&](bool weighted) {
    nlohmann::json s;
    for (auto [name, field] : {std::pair{"f1", &Scores::f1}, std::pair{"precision", &Scores::precision},
                               std::pair{"recall", &Scores::recall}}) {
      const MeanStd m = r.summary(weighted, field);
      s[name] = {{"mean", m.mean}, {"std", m.std}};
    }
    return s;
  };
  nlohmann::json j = {{"schema", "hmg-report/1"},
                      {"seed", r.config.seed},
                      {"config", train_config_to_json(r.config)},
                      {"folds", folds},
                      {"summary", {{"weighted", summary(true)}, {"macro", summary(false)}}}};
  if (include_wall_clock) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

// Baselines used to frame the model's scores.

// Predicts the most frequent training label everywhere.
inline Scores majority_baseline(const HeteroGraph& g, const EdgeSplit& split) {
  std::vector<std::size_t> counts(kNumEmotions, 0);
  for (auto id : split.train) ++counts[g.views()[id].label];
  const auto major = static_cast<std::uint32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  std::vector<std::uint32_t> labels, preds;
  for (auto id : split.test) {
    labels.push_back(g.views()[id].label);
    preds.push_back(major);
  }
  return weighted_scores(confusion(labels, preds, kNumEmotions));
}

// MLP on the comment attribute of each edge alone (no graph, no node
// features), trained with the same optimizer recipe.
inline Scores comment_only_baseline(const HeteroGraph& g, const EdgeSplit& split, const TrainConfig& cfg) {
  if (split.train.empty() || split.test.empty()) throw Error(ErrorKind::kEmptySplit, "baseline needs train and test edges");
  const std::uint32_t dim = cfg.model.stack.attr_dim;
  const FeatureTable attrs = fill_missing_comment_attrs(g, cfg.comment_fill_seed, dim);
  ParamStore params;
  Rng rng(cfg.seed, 0xC0111);
  std::size_t in = dim;
  const auto& hidden = cfg.model.head.hidden;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t out = k < 3 ? hidden[k] : kNumEmotions;
    params.add(names::fc(k, "weight"), detail::glorot(in, out, rng));
    params.add(names::fc(k, "bias"), Tensor({out}));
    in = out;
  }
  auto rows_of = [&](const std::vector<std::uint32_t>& ids) {
    Tensor x({ids.size(), dim});
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto row = attrs.row(ids[k]);
      std::copy(row.begin(), row.end(), x.row(k).begin());
    }
    return x;
  };
  auto mlp = [&](Tape& tape, Var h, Mode mode, std::uint64_t seed) {
    for (std::size_t k = 0; k < 4; ++k) {
      h = add_bias(matmul(h, tape.param(params, names::fc(k, "weight"))), tape.param(params, names::fc(k, "bias")));
      if (k == 3) break;
      h = relu(h);
      if (k < 2) h = dropout(h, cfg.model.head.dropout, mode == Mode::kTrain, derive_seed(seed, k));
    }
    return h;
  };
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::vector<std::uint32_t> order = split.train;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng(cfg.seed, 0xC0200 + epoch).shuffle(std::span<std::uint32_t>(order));
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      std::vector<std::uint32_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      auto labels = std::make_shared<Index>();
      for (auto id : ids) labels->push_back(g.views()[id].label);
      Tape tape;
      Var loss = cross_entropy(mlp(tape, tape.constant(rows_of(ids)), Mode::kTrain, derive_seed(cfg.seed, epoch * 131071ULL + b)), labels);
      params.zero_grad();
      tape.backward(loss, &params);
      adam.step(params, lr_at(epoch, cfg));
    }
  }
  Tape tape;
  const Tensor logits = mlp(tape, tape.constant(rows_of(split.test)), Mode::kEval, 0).value();
  std::vector<std::uint32_t> labels;
  for (auto id : split.test) labels.push_back(g.views()[id].label);
  return weighted_scores(confusion(labels, argmax_rows(logits), kNumEmotions));
}

}  // namespace hmg
