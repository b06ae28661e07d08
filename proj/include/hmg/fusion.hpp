#pragma once

// Adaptive combination of an edge's user and image embeddings, followed by
// the MLP edge classifier.
//
// The gate score is z = w_u·Σx_u + w_i·Σx_i (scalar weights, then summed
// over the embedding) and β_raw = exp(LeakyReLU(z)). Because β_raw lies in
// (0, ∞), it is mapped to β = β_raw / (1 + β_raw), which equals
// logistic(LeakyReLU(z)) and keeps 1 - β a valid complementary weight.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmg/autodiff.hpp"
#include "hmg/error.hpp"
#include "hmg/layers.hpp"

namespace hmg {

enum class Combine { kConcat, kAdd, kMul };

inline std::string_view combine_name(Combine c) {
  switch (c) {
    case Combine::kConcat: return "concat";
    case Combine::kAdd: return "add";
    case Combine::kMul: return "mul";
  }
  return "?";
}

inline Combine combine_from_string(std::string_view s) {
  if (s == "concat") return Combine::kConcat;
  if (s == "add") return Combine::kAdd;
  if (s == "mul") return Combine::kMul;
  throw Error(ErrorKind::kConfig, "unknown combination mechanism '" + std::string(s) + "'");
}

struct AcParams {
  double w_u = 0.0;
  double w_i = 0.0;
};

struct HeadConfig {
  std::uint32_t input_dim = 64;  // D, the stack output width
  std::vector<std::uint32_t> hidden = {64, 32, 16};
  std::uint32_t num_classes = kNumEmotions;
  Combine combine = Combine::kConcat;
  double dropout = 0.5;
  double leaky_slope = 0.2;
  bool use_ac = true;

  std::uint32_t fused_dim() const { return combine == Combine::kConcat ? 2 * input_dim : input_dim; }

  void validate() const {
    if (hidden.size() != 3) throw Error(ErrorKind::kConfig, "classifier needs exactly 3 hidden widths");
    for (auto h : hidden) {
      if (h == 0) throw Error(ErrorKind::kConfig, "hidden widths must be positive");
    }
    if (input_dim == 0 || num_classes < 2) throw Error(ErrorKind::kConfig, "bad classifier dims");
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorKind::kConfig, "dropout must lie in [0,1)");
  }
};

inline double adaptive_beta(std::span<const double> x_u, std::span<const double> x_i, const AcParams& ac,
                            double slope = 0.2) {
  double su = 0.0, si = 0.0;
  for (double v : x_u) su += v;
  for (double v : x_i) si += v;
  const double z = ac.w_u * su + ac.w_i * si;
  return detail::open_sigmoid(detail::leaky(z, slope));
}

inline std::vector<double> combine(std::span<const double> x_u, std::span<const double> x_i, double beta,
                                   Combine mechanism) {
  if (x_u.size() != x_i.size()) throw Error(ErrorKind::kDimensionMismatch, "combine on unequal lengths");
  std::vector<double> out;
  switch (mechanism) {
    case Combine::kConcat:
      out.reserve(2 * x_u.size());
      for (double v : x_u) out.push_back(beta * v);
      for (double v : x_i) out.push_back((1.0 - beta) * v);
      break;
    case Combine::kAdd:
      for (std::size_t k = 0; k < x_u.size(); ++k) out.push_back(beta * x_u[k] + (1.0 - beta) * x_i[k]);
      break;
    case Combine::kMul:
      for (std::size_t k = 0; k < x_u.size(); ++k) out.push_back(beta * x_u[k] * (1.0 - beta) * x_i[k]);
      break;
    default:
      throw Error(ErrorKind::kInvalidArgument, "unknown combination mechanism");
  }
  return out;
}

namespace names {
inline std::string fc(std::size_t k, const char* which) { return "head.fc" + std::to_string(k) + "." + which; }
}  // namespace names

// Gate β per row, or the constant 0.5 when adaptive combination is off.
inline Var beta_gate(Var x_u, Var x_i, const ParamStore& store, const HeadConfig& cfg) {
  Tape& tape = *x_u.tape;
  if (!cfg.use_ac) return tape.constant(Tensor({x_u.shape()[0], 1}, 0.5));
  Var z = add(mul_scalar(row_sum(x_u), tape.param(store, "ac.w_u")), mul_scalar(row_sum(x_i), tape.param(store, "ac.w_i")));
  return sigmoid(leaky_relu(z, cfg.leaky_slope));
}

// Rows of x_u and x_i are the two endpoints of each classified edge.
inline Var classify_edges(Var x_u, Var x_i, const ParamStore& store, const HeadConfig& cfg, Mode mode,
                          std::uint64_t dropout_seed = 0) {
  if (x_u.shape() != x_i.shape() || x_u.shape().size() != 2 || x_u.shape()[1] != cfg.input_dim) {
    throw Error(ErrorKind::kDimensionMismatch, "classifier inputs " + shape_str(x_u.shape()) + " and " +
                                                   shape_str(x_i.shape()) + ", expected width " +
                                                   std::to_string(cfg.input_dim));
  }
  Tape& tape = *x_u.tape;
  Var beta = beta_gate(x_u, x_i, store, cfg);
  Var su = mul_rows(x_u, beta);
  Var si = mul_rows(x_i, scale(beta, -1.0, 1.0));
  Var h;
  switch (cfg.combine) {
    case Combine::kConcat: h = concat_cols(su, si); break;
    case Combine::kAdd: h = add(su, si); break;
    case Combine::kMul: h = mul(su, si); break;
  }
  const bool train = mode == Mode::kTrain;
  for (std::size_t k = 0; k < 4; ++k) {
    h = add_bias(matmul(h, tape.param(store, names::fc(k, "weight"))), tape.param(store, names::fc(k, "bias")));
    if (k == 3) break;
    h = relu(h);
    if (k < 2) h = dropout(h, cfg.dropout, train, derive_seed(dropout_seed, k));
  }
  return h;
}

// Single-edge convenience wrapper.
inline std::vector<double> classify_edge(std::span<const double> x_u, std::span<const double> x_i,
                                         const ParamStore& store, const HeadConfig& cfg, Mode mode,
                                         std::uint64_t dropout_seed = 0) {
  Tape tape;
  const std::size_t d = x_u.size();
  Var u = tape.constant(Tensor({1, d}, std::vector<double>(x_u.begin(), x_u.end())));
  Var i = tape.constant(Tensor({1, x_i.size()}, std::vector<double>(x_i.begin(), x_i.end())));
  const Tensor& logits = classify_edges(u, i, store, cfg, mode, dropout_seed).value();
  return {logits.values().begin(), logits.values().end()};
}

}  // namespace hmg
