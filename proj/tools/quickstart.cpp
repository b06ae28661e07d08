// Minimal library walk-through: build a small synthetic graph in memory,
// train one split, score the held-out edges, and save the model.
//
//   quickstart [model-path]

#include <cstdio>
#include <string>

#include "hmg/model.hpp"
#include "hmg/synthgen.hpp"
#include "hmg/training.hpp"

int main(int argc, char** argv) {
  hmg::SynthConfig sc;
  sc.scale = 1.0 / 100.0;
  sc.seed = 1;
  const hmg::HeteroGraph g = hmg::generate_graph(sc).graph;
  const hmg::GraphStats st = g.stats();
  std::printf("graph: %u users, %u images, %zu contacts, %zu views\n", st.users, st.images, st.connects, st.views);

  hmg::TrainConfig cfg;
  cfg.model.stack.num_layers = 1;
  cfg.epochs = 10;
  cfg.seed = 7;
  const hmg::EdgeSplit split = hmg::split_edges(g, cfg.split, cfg.seed);
  const hmg::TrainResult r = hmg::train(g, split, cfg);

  for (const auto& e : r.report.epochs) {
    std::printf("epoch %2u  lr %.5f  train %.4f  val %.4f\n", e.epoch, e.lr, e.train_loss, e.val_loss.value_or(0.0));
  }
  const hmg::Scores& w = r.report.test->weighted;
  std::printf("test (best epoch %u): weighted F1 %.4f  P %.4f  R %.4f\n", r.report.best_epoch, w.f1, w.precision,
              w.recall);
  std::printf("majority baseline F1 %.4f\n", hmg::majority_baseline(g, split).f1);

  if (argc > 1) {
    hmg::save_model(r.model, argv[1]);
    std::printf("saved %s\n", argv[1]);
  }
  return 0;
}
