// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance --work-dir DIR [--only 1,2,...]
//
// Exits 0 iff every selected criterion passes. A JSON summary with the
// measured numbers lands in DIR/acceptance.json.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "hmg/bundle.hpp"
#include "hmg/model.hpp"
#include "hmg/synthgen.hpp"
#include "hmg/training.hpp"
#include "json.hpp"
#include "layer_oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hmg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) {
  std::fprintf(stderr, "[acceptance] %s\n", msg.c_str());
  std::fflush(stderr);
}

struct Outcome {
  bool pass = false;
  std::string detail;
  json data = json::object();
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1: full-model gradient check through the CLI.
Outcome gradient_integrity(const fs::path& work) {
  const auto t0 = Clock::now();
  const std::string cmd = std::string(HMG_CLI_PATH) + " gradcheck --json > " + (work / "gradcheck.json").string();
  const int status = std::system(cmd.c_str());
  const double secs = seconds_since(t0);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  Outcome o;
  double max_err = -1.0;
  try {
    std::ifstream in(work / "gradcheck.json");
    max_err = json::parse(in).at("max_rel_error").get<double>();
  } catch (const std::exception&) {
  }
  o.pass = code == 0 && secs < 30.0 && max_err >= 0.0 && max_err < 1e-4;
  o.detail = "exit " + std::to_string(code) + ", max rel error " + fmt("%.2e", max_err) + ", " + fmt("%.1f", secs) + " s";
  o.data = {{"exit", code}, {"max_rel_error", max_err}, {"seconds", secs}};
  return o;
}

test::RandomGraphSpec random_spec(Rng& rng) {
  test::RandomGraphSpec s;
  s.users = static_cast<std::uint32_t>(2 + rng.below(11));  // at most 20 nodes in total
  s.images = static_cast<std::uint32_t>(1 + rng.below(8));
  s.connects = rng.below(2 * s.users + 1);
  s.views = rng.below(2 * (s.users + s.images) + 1);
  s.comment_rate = rng.uniform();
  return s;
}

// 2: attention rows are distributions.
Outcome attention_normalization() {
  Rng rng(2024);
  double worst_sum = 0.0, min_alpha = 1.0;
  for (int trial = 0; trial < 100; ++trial) {
    const test::RandomGraphSpec spec = random_spec(rng);
    const HeteroGraph g = test::random_graph(spec, rng);
    MessageGraph mg = full_message_graph(g);
    attach_attributes(mg, fill_missing_comment_attrs(g, rng.next_u64(), spec.attr_dim));
    Tape tape;
    auto fx = test::random_gat_params(tape, 5, 4, spec.attr_dim, rng);
    const Tensor x = test::random_tensor({mg.num_nodes(), 5}, rng, 3.0);
    const Tensor alpha = gat_layer_forward(mg, tape.constant(x), fx.params, 0.2).alpha.value();
    const auto& edges = *mg.attention_edges;
    std::vector<double> total(mg.num_nodes(), 0.0);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      min_alpha = std::min(min_alpha, alpha[k]);
      total[edges.dst[k]] += alpha[k];
    }
    for (double t : total) worst_sum = std::max(worst_sum, std::abs(t - 1.0));
  }
  Outcome o;
  o.pass = min_alpha >= 0.0 && worst_sum <= 1e-12;
  o.detail = "100 graphs, min alpha " + fmt("%.3e", min_alpha) + ", worst |sum - 1| " + fmt("%.2e", worst_sum);
  o.data = {{"min_alpha", min_alpha}, {"worst_sum_error", worst_sum}};
  return o;
}

// 3: layers against dense reimplementations.
Outcome dense_oracles() {
  Rng rng(3033);
  double worst[3] = {0.0, 0.0, 0.0};
  int graphs = 0;
  for (int trial = 0; trial < 200; ++trial, ++graphs) {
    const test::RandomGraphSpec spec = random_spec(rng);
    const HeteroGraph g = test::random_graph(spec, rng);
    const FeatureTable attrs = fill_missing_comment_attrs(g, rng.next_u64(), spec.attr_dim);
    MessageGraph mg = full_message_graph(g);
    attach_attributes(mg, attrs);
    Tape tape;
    const Tensor x = test::random_tensor({mg.num_nodes(), 6}, rng);
    auto fx = test::random_gat_params(tape, 6, 5, spec.attr_dim, rng, trial % 4 != 0);
    const Tensor gat = gat_layer_forward(mg, tape.constant(x), fx.params, 0.2).nodes.value();
    worst[0] = std::max(worst[0], test::max_abs_diff(gat, test::dense_gat(g, attrs, test::to_dense(x), fx.dense, 0.2).out));
    const Tensor w1 = test::random_tensor({6, 5}, rng), w2 = test::random_tensor({6, 5}, rng);
    const Tensor sage = sage_layer_forward(mg, tape.constant(x), tape.constant(w1), tape.constant(w2)).value();
    const Tensor conv = conv_layer_forward(mg, tape.constant(x), tape.constant(w1), tape.constant(w2)).value();
    const auto dx = test::to_dense(x), d1 = test::to_dense(w1), d2 = test::to_dense(w2);
    worst[1] = std::max(worst[1], test::max_abs_diff(sage, test::dense_neighbor_layer(g, dx, d1, d2, true)));
    worst[2] = std::max(worst[2], test::max_abs_diff(conv, test::dense_neighbor_layer(g, dx, d1, d2, false)));
  }
  Outcome o;
  o.pass = worst[0] <= 1e-12 && worst[1] <= 1e-12 && worst[2] <= 1e-12;
  o.detail = std::to_string(graphs) + " graphs, max |diff| gat " + fmt("%.1e", worst[0]) + " sage " +
             fmt("%.1e", worst[1]) + " conv " + fmt("%.1e", worst[2]);
  o.data = {{"gat", worst[0]}, {"sage", worst[1]}, {"conv", worst[2]}};
  return o;
}

// 4: metric hand case and recall == accuracy.
Outcome metric_oracle() {
  const Scores hand = weighted_scores(confusion(std::vector<std::uint32_t>{0, 0, 1}, std::vector<std::uint32_t>{0, 1, 1}, 2));
  const bool hand_ok = std::abs(hand.f1 - 2.0 / 3.0) < 1e-15;
  Rng rng(4);
  int exact = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 2 + rng.below(9);
    ConfusionMatrix cm(n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t p = 0; p < n; ++p) cm.at(t, p) = rng.below(100);
    if (cm.total() == 0) cm.at(0, 0) = 1;
    const double acc = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    exact += weighted_scores(cm).recall == acc;
  }
  Outcome o;
  o.pass = hand_ok && exact == 1000;
  o.detail = "hand F1 " + fmt("%.17g", hand.f1) + ", recall == accuracy on " + std::to_string(exact) + "/1000";
  o.data = {{"hand_f1", hand.f1}, {"exact", exact}};
  return o;
}

// Shared state for the benchmark criteria (5 to 8).
struct Benchmark {
  HeteroGraph graph;
  TrainConfig base;
  std::map<std::string, TrainReport> runs;
  std::map<std::string, double> wf1;

  double run(const std::string& name, const std::function<void(TrainConfig&)>& tweak) {
    if (auto it = wf1.find(name); it != wf1.end()) return it->second;
    TrainConfig c = base;
    tweak(c);
    progress("training '" + name + "' (" + std::to_string(c.folds) + " folds x " + std::to_string(c.epochs) + " epochs)");
    TrainReport r = cross_validate(graph, c);
    const double m = r.summary(true, &Scores::f1).mean;
    progress("  '" + name + "' weighted F1 " + format_mean_std(r.summary(true, &Scores::f1)) + " in " +
             fmt("%.0f", r.wall_clock_seconds) + " s");
    runs[name] = std::move(r);
    return wf1[name] = m;
  }

  std::vector<EdgeSplit> fold_splits() const {
    std::vector<EdgeSplit> out;
    for (std::uint32_t k = 0; k < base.folds; ++k) out.push_back(split_edges(graph, base.split, base.seed + k * base.fold_seed_stride));
    return out;
  }
};

Benchmark make_benchmark(const fs::path& work) {
  Benchmark b;
  SynthConfig sc;  // 1/20 scale, sigma 0.1, rho 0.34
  const fs::path dir = work / "bench_1_20";
  progress("generating 1/20-scale bundle in " + dir.string());
  generate(sc, dir);
  b.graph = load_graph(dir);
  b.base = TrainConfig{};
  return b;
}

json run_json(const TrainReport& r) {
  return {{"weighted_f1", {{"mean", r.summary(true, &Scores::f1).mean}, {"std", r.summary(true, &Scores::f1).std}}},
          {"weighted_precision", r.summary(true, &Scores::precision).mean},
          {"weighted_recall", r.summary(true, &Scores::recall).mean},
          {"seconds", r.wall_clock_seconds}};
}

Outcome learnability(Benchmark& b) {
  const double full = b.run("full", [](TrainConfig&) {});
  const double secs = b.runs["full"].wall_clock_seconds;
  double majority = 0.0;
  const auto splits = b.fold_splits();
  for (const auto& s : splits) majority += majority_baseline(b.graph, s).f1;
  majority /= static_cast<double>(splits.size());
  Outcome o;
  o.pass = full >= 0.90 && majority <= 0.15 && secs < 900.0;
  o.detail = "full weighted F1 " + fmt("%.4f", full) + " (need >= 0.90), majority " + fmt("%.4f", majority) +
             " (need <= 0.15), " + fmt("%.0f", secs) + " s (need < 900)";
  o.data = {{"full", run_json(b.runs["full"])}, {"majority_f1", majority}};
  return o;
}

Outcome ablation_ordering(Benchmark& b) {
  const double full = b.run("full", [](TrainConfig&) {});
  const double no_ac = b.run("no-ac", [](TrainConfig& c) { c.model.head.use_ac = false; });
  const double no_t_ac = b.run("no-comments,no-ac", [](TrainConfig& c) {
    c.model.head.use_ac = false;
    c.model.stack.use_comments = false;
  });
  Outcome o;
  o.pass = full - no_ac >= -0.01 && no_ac - no_t_ac >= -0.01;
  o.detail = "full " + fmt("%.4f", full) + " / -AC " + fmt("%.4f", no_ac) + " / -T,AC " + fmt("%.4f", no_t_ac);
  o.data = {{"full", full}, {"no_ac", run_json(b.runs["no-ac"])}, {"no_t_ac", run_json(b.runs["no-comments,no-ac"])}};
  return o;
}

Outcome comments_insufficiency(Benchmark& b) {
  const double full = b.run("full", [](TrainConfig&) {});
  double comment = 0.0;
  const auto splits = b.fold_splits();
  for (std::uint32_t k = 0; k < splits.size(); ++k) {
    TrainConfig c = b.base;
    c.seed = b.base.seed + k * b.base.fold_seed_stride;
    comment += comment_only_baseline(b.graph, splits[k], c).f1;
  }
  comment /= static_cast<double>(splits.size());
  Outcome o;
  o.pass = full - comment >= 0.25;
  o.detail = "full " + fmt("%.4f", full) + ", comments-only MLP " + fmt("%.4f", comment) + ", gap " +
             fmt("%.4f", full - comment) + " (need >= 0.25)";
  o.data = {{"full", full}, {"comment_only", comment}};
  return o;
}

Outcome negative_sampling(Benchmark& b) {
  const double full = b.run("full", [](TrainConfig&) {});
  Outcome o;
  double ns = 0.0;
  try {
    ns = b.run("negative-sampling", [](TrainConfig& c) {
      c.negative_sampling = true;
      c.neg_ratio = 1.0;
    });
  } catch (const std::exception& e) {
    o.detail = std::string("sampling run failed: ") + e.what();
    return o;
  }
  const double delta = ns - full;
  o.pass = std::abs(delta) >= 1e-4 && full >= ns - 0.02;
  o.detail = "no sampling " + fmt("%.4f", full) + ", 1:1 sampling " + fmt("%.4f", ns) + ", change " + fmt("%+.4f", delta);
  o.data = {{"full", full}, {"sampling", run_json(b.runs["negative-sampling"])}};
  return o;
}

// 9: bit-identical retraining, bundle and model round-trips.
Outcome determinism(const fs::path& work) {
  SynthConfig sc;
  sc.scale = 1.0 / 100.0;
  sc.seed = 9;
  const HeteroGraph g = generate_graph(sc).graph;
  TrainConfig c;
  c.epochs = 3;
  c.seed = 17;
  const EdgeSplit split = split_edges(g, c.split, c.seed);
  const TrainResult a = train(g, split, c), b2 = train(g, split, c);
  bool params_equal = a.model.params.size() == b2.model.params.size();
  for (const auto& [name, p] : a.model.params) params_equal = params_equal && p.value == b2.model.params.at(name).value;
  bool losses_equal = a.report.epochs.size() == b2.report.epochs.size();
  for (std::size_t k = 0; losses_equal && k < a.report.epochs.size(); ++k)
    losses_equal = a.report.epochs[k].train_loss == b2.report.epochs[k].train_loss;

  const fs::path bundle = work / "roundtrip_bundle";
  save_graph(g, bundle);
  const bool graph_rt = load_graph(bundle) == g;

  const fs::path model = work / "roundtrip.hmgm";
  save_model(a.model, model, {{"note", "round trip"}});
  json meta;
  const Model back = load_model(model, &meta);
  bool model_rt = back.params.size() == a.model.params.size() &&
                  model_config_to_json(back.config) == model_config_to_json(a.model.config) && meta["note"] == "round trip";
  for (const auto& [name, p] : a.model.params)
    model_rt = model_rt && back.params.contains(name) && back.params.at(name).value == p.value &&
               back.params.at(name).trainable == p.trainable;

  Outcome o;
  o.pass = params_equal && losses_equal && graph_rt && model_rt;
  o.detail = std::string("retrain ") + (params_equal && losses_equal ? "identical" : "DIFFERS") + ", bundle " +
             (graph_rt ? "exact" : "MISMATCH") + ", model " + (model_rt ? "exact" : "MISMATCH");
  o.data = {{"retrain", params_equal && losses_equal}, {"bundle", graph_rt}, {"model", model_rt}};
  return o;
}

// 10: gate bounds and learning-rate schedule.
Outcome beta_and_schedule() {
  Rng rng(10);
  std::size_t inside = 0;
  const std::size_t n = 1000000;
  std::vector<double> u(8), i(8);
  for (std::size_t k = 0; k < n; ++k) {
    // a mix of moderate and extreme magnitudes
    const double mag = k % 4 == 0 ? 1e3 : (k % 4 == 1 ? 1.0 : 30.0);
    for (auto& v : u) v = mag * rng.normal();
    for (auto& v : i) v = mag * rng.normal();
    const double b = adaptive_beta(u, i, {rng.normal() * 5.0, rng.normal() * 5.0});
    inside += b > 0.0 && b < 1.0;
  }
  const TrainConfig c;
  const double l0 = lr_at(0, c), lt = lr_at(c.epochs, c), lh = lr_at(c.epochs / 2, c);
  Outcome o;
  o.pass = inside == n && l0 == 0.005 && lt == 0.0 && lh == 0.0025;
  o.detail = std::to_string(inside) + "/" + std::to_string(n) + " beta in (0,1); lr " + fmt("%.17g", l0) + ", " +
             fmt("%.17g", lh) + ", " + fmt("%.17g", lt);
  o.data = {{"inside", inside}, {"lr0", l0}, {"lr_half", lh}, {"lr_end", lt}};
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "scratch directory for bundles and reports");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::create_directories(work);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (int k = 1; k <= 10; ++k) selected.insert(k);

  std::optional<Benchmark> bench;
  auto benchmark = [&]() -> Benchmark& {
    if (!bench) bench = make_benchmark(work);
    return *bench;
  };
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient integrity", [&] { return gradient_integrity(work); }},
      {"attention normalization", [] { return attention_normalization(); }},
      {"dense-oracle equivalence", [] { return dense_oracles(); }},
      {"metric oracle", [] { return metric_oracle(); }},
      {"synthetic learnability", [&] { return learnability(benchmark()); }},
      {"ablation ordering", [&] { return ablation_ordering(benchmark()); }},
      {"comments insufficiency", [&] { return comments_insufficiency(benchmark()); }},
      {"negative sampling", [&] { return negative_sampling(benchmark()); }},
      {"determinism and round-trips", [&] { return determinism(work); }},
      {"beta bounds and schedule", [] { return beta_and_schedule(); }},
  };

  json summary = json::object();
  std::vector<std::string> lines;
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.count(id)) continue;
    progress("criterion " + std::to_string(id) + ": " + criteria[k].first);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    all = all && o.pass;
    char buf[512];
    std::snprintf(buf, sizeof buf, "CRITERION %2d %s  %s: %s", id, o.pass ? "PASS" : "FAIL", criteria[k].first,
                  o.detail.c_str());
    std::printf("%s\n", buf);
    std::fflush(stdout);
    lines.push_back(buf);
    summary[std::to_string(id)] = {{"name", criteria[k].first}, {"pass", o.pass}, {"detail", o.detail},
                                   {"data", o.data}, {"seconds", seconds_since(t0)}};
  }
  io::write_text(work / "acceptance.json", summary.dump(2) + "\n");
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return all ? 0 : 1;
}
