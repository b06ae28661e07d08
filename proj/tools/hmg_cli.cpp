// hmg_cli: synth | train | eval | gradcheck | describe
//
// Exit codes: 0 ok, 2 bad arguments or config, 3 data validation failure,
// 4 training aborted (non-finite loss) or gradient check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hmg/bundle.hpp"
#include "hmg/gradcheck.hpp"
#include "hmg/model.hpp"
#include "hmg/synthgen.hpp"
#include "hmg/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitAborted = 4;

int exit_code_for(hmg::ErrorKind k) {
  switch (k) {
    case hmg::ErrorKind::kConfig:
    case hmg::ErrorKind::kUnknownOp:
      return kExitUsage;
    case hmg::ErrorKind::kNonFiniteLoss:
      return kExitAborted;
    default:
      return kExitData;
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw hmg::Error(hmg::ErrorKind::kConfig, "cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw hmg::Error(hmg::ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

void write_report(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw hmg::Error(hmg::ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw hmg::Error(hmg::ErrorKind::kIo, "write failed for " + path.string());
}

std::string row3(const char* label, const hmg::Scores& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s %-9.4f %-9.4f %-9.4f\n", label, s.f1, s.precision, s.recall);
  return buf;
}

struct SynthArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

int cmd_synth(const SynthArgs& a) {
  hmg::SynthConfig cfg;
  if (!a.config.empty()) cfg = hmg::synth_config_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const hmg::HeteroGraph g = hmg::generate(cfg, a.out);
  const hmg::Description d = hmg::describe(g);
  if (a.json) {
    std::cout << json{{"bundle", a.out}, {"description", hmg::description_to_json(d)}}.dump(2) << "\n";
  } else {
    std::cout << "wrote " << a.out << "\n" << hmg::format_description(d);
  }
  return kExitOk;
}

struct TrainArgs {
  std::string data, config, report, model;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> epochs, folds;
  bool json = false;
};

int cmd_train(const TrainArgs& a) {
  hmg::TrainConfig cfg;
  if (!a.config.empty()) cfg = hmg::train_config_from_json(read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.folds) cfg.folds = *a.folds;
  for (const auto& ab : a.ablate) {
    if (ab == "no-comments") {
      cfg.model.stack.use_comments = false;
    } else if (ab == "no-ac") {
      cfg.model.head.use_ac = false;
    } else {
      throw hmg::Error(hmg::ErrorKind::kConfig, "unknown ablation '" + ab + "' (no-comments, no-ac)");
    }
  }
  cfg.validate();
  const hmg::HeteroGraph g = hmg::load_graph(a.data);
  std::vector<hmg::Model> models;
  hmg::TrainReport rep;
  try {
    rep = hmg::cross_validate(g, cfg, a.model.empty() ? nullptr : &models);
  } catch (const hmg::Error& e) {
    if (e.kind() == hmg::ErrorKind::kNonFiniteLoss) std::cerr << "training aborted: " << e.what() << "\n";
    throw;
  }
  const json rj = hmg::report_to_json(rep);
  if (!a.report.empty()) write_report(a.report, rj);
  if (!a.model.empty()) {
    // Fold 0 is saved along with what eval needs to rebuild its split.
    const hmg::TrainConfig& c = rep.config;
    json meta = {{"fold", 0},
                 {"seed", c.seed},
                 {"split", {c.split.train, c.split.val, c.split.test}},
                 {"comment_fill_seed", c.comment_fill_seed},
                 {"negative_sampling", c.negative_sampling}};
    hmg::save_model(models.at(0), a.model, meta);
  }
  if (a.json) {
    std::cout << rj.dump(2) << "\n";
    return kExitOk;
  }
  std::printf("%-6s %-10s %-9s %-9s %-9s\n", "fold", "avg", "F1", "P", "R");
  for (const auto& f : rep.folds) {
    if (!f.test) continue;
    for (auto [label, s] : {std::pair{"weighted", f.test->weighted}, std::pair{"macro", f.test->macro}}) {
      std::printf("%-6u %s", f.fold, row3(label, s).c_str());
    }
  }
  std::printf("\n%-10s %-16s %-16s %-16s\n", "avg", "F1", "P", "R");
  for (bool weighted : {true, false}) {
    std::printf("%-10s %-16s %-16s %-16s\n", weighted ? "weighted" : "macro",
                hmg::format_mean_std(rep.summary(weighted, &hmg::Scores::f1)).c_str(),
                hmg::format_mean_std(rep.summary(weighted, &hmg::Scores::precision)).c_str(),
                hmg::format_mean_std(rep.summary(weighted, &hmg::Scores::recall)).c_str());
  }
  std::printf("\nwall clock %.1f s\n", rep.wall_clock_seconds);
  return kExitOk;
}

struct EvalArgs {
  std::string data, model, split = "test";
  bool json = false;
};

int cmd_eval(const EvalArgs& a) {
  json meta;
  hmg::Model model = hmg::load_model(a.model, &meta);
  const hmg::HeteroGraph g = hmg::load_graph(a.data);
  hmg::SplitRatios ratios;
  std::uint64_t seed = 0, fill_seed = 0;
  try {
    const auto r = meta.at("split").get<std::vector<double>>();
    ratios = {r.at(0), r.at(1), r.at(2)};
    seed = meta.at("seed").get<std::uint64_t>();
    fill_seed = meta.at("comment_fill_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw hmg::Error(hmg::ErrorKind::kMalformedHeader, "model metadata lacks split information: " + std::string(e.what()));
  }
  const hmg::EdgeSplit split = hmg::split_edges(g, ratios, seed);
  std::vector<std::uint32_t> ids;
  if (a.split == "train") ids = split.train;
  else if (a.split == "val") ids = split.val;
  else if (a.split == "test") ids = split.test;
  else if (a.split == "all") {
    ids.resize(g.views().size());
    for (std::uint32_t k = 0; k < ids.size(); ++k) ids[k] = k;
  } else {
    throw hmg::Error(hmg::ErrorKind::kConfig, "unknown split '" + a.split + "'");
  }
  const auto ctx = hmg::TrainingContext::make(g, model.config, fill_seed);
  const hmg::EvalResult r = hmg::evaluate(ctx, model, ids);
  if (a.json) {
    std::cout << json{{"split", a.split},
                      {"count", r.count},
                      {"weighted", hmg::scores_json(r.weighted)},
                      {"macro", hmg::scores_json(r.macro)}}
                     .dump(2)
              << "\n";
  } else {
    std::printf("split %s, %zu edges\n%-10s %-9s %-9s %-9s\n", a.split.c_str(), r.count, "avg", "F1", "P", "R");
    std::fputs(row3("weighted", r.weighted).c_str(), stdout);
    std::fputs(row3("macro", r.macro).c_str(), stdout);
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool corrupt = false;
  bool json = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  hmg::GradcheckOptions opt;
  opt.seed = a.seed;
  opt.corrupt = a.corrupt;
  const hmg::GradcheckResult r = hmg::run_gradcheck(opt);
  if (a.json) {
    json groups = json::array();
    for (const auto& ge : r.groups) groups.push_back({{"name", ge.name}, {"max_rel_error", ge.max_rel_error}});
    std::cout << json{{"seed", a.seed}, {"tolerance", opt.tolerance}, {"passed", r.passed},
                      {"max_rel_error", r.max_rel_error}, {"groups", groups}}
                     .dump(2)
              << "\n";
  } else {
    std::printf("%-28s %s\n", "parameter", "max rel error");
    for (const auto& ge : r.groups) {
      std::printf("%-28s %.3e%s\n", ge.name.c_str(), ge.max_rel_error, ge.max_rel_error < opt.tolerance ? "" : "  FAIL");
    }
    std::printf("%zu scalars, max %.3e, tolerance %.0e: %s\n", r.scalars, r.max_rel_error, opt.tolerance,
                r.passed ? "ok" : "FAILED");
  }
  if (!r.passed) {
    for (const auto& ge : r.groups) {
      if (ge.max_rel_error >= opt.tolerance) {
        std::fprintf(stderr, "gradient mismatch in %s[%zu]: analytic %.9e numeric %.9e\n", ge.name.c_str(),
                     ge.worst_index, ge.analytic, ge.numeric);
      }
    }
    return kExitAborted;
  }
  return kExitOk;
}

struct DescribeArgs {
  std::string data;
  bool json = false;
};

int cmd_describe(const DescribeArgs& a) {
  const hmg::Description d = hmg::describe(fs::path(a.data));
  if (a.json) {
    std::cout << hmg::description_to_json(d).dump(2) << "\n";
  } else {
    std::cout << hmg::format_description(d);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized emotion classification on user-image heterographs"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark bundle");
  synth->add_option("--config", sa.config, "synth config JSON");
  synth->add_option("--out", sa.out, "output bundle directory")->required();
  synth->add_option("--seed", sa.seed, "generator seed (overrides config)");
  synth->add_flag("--json", sa.json, "machine-readable output");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "cross-validated training");
  train->add_option("--data", ta.data, "bundle directory")->required();
  train->add_option("--config", ta.config, "training config JSON");
  train->add_option("--report", ta.report, "write the JSON report here");
  train->add_option("--model", ta.model, "save the fold-0 model here");
  train->add_option("--ablate", ta.ablate, "no-comments and/or no-ac")->take_all();
  train->add_option("--seed", ta.seed, "base seed (overrides config)");
  train->add_option("--epochs", ta.epochs, "epochs (overrides config)");
  train->add_option("--folds", ta.folds, "folds (overrides config)");
  train->add_flag("--json", ta.json, "print the report JSON");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score a saved model on a split");
  eval->add_option("--data", ea.data, "bundle directory")->required();
  eval->add_option("--model", ea.model, "model file")->required();
  eval->add_option("--split", ea.split, "train | val | test | all");
  eval->add_flag("--json", ea.json, "machine-readable output");

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter group");
  gradcheck->add_option("--seed", ga.seed, "instance seed");
  gradcheck->add_flag("--corrupt-grad", ga.corrupt, "perturb one analytic gradient (negative control)");
  gradcheck->add_flag("--json", ga.json, "machine-readable output");

  DescribeArgs da;
  auto* describe = app.add_subcommand("describe", "summarize a bundle");
  describe->add_option("--data", da.data, "bundle directory")->required();
  describe->add_flag("--json", da.json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*gradcheck) return cmd_gradcheck(ga);
    if (*describe) return cmd_describe(da);
  } catch (const hmg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
