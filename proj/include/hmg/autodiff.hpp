#pragma once

// Tape-based reverse-mode differentiation over hmg::Tensor.
//
// Every op appends a node to the tape. Nodes whose inputs all lack
// requires_grad are stored as constants and skipped by backward(). The tape
// is append-only, so node ids are a valid topological order and backward()
// visits each node once in reverse.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hmg/error.hpp"
#include "hmg/rng.hpp"
#include "hmg/tensor.hpp"

namespace hmg {

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kAddBias,
  kMul,
  kScale,
  kMulScalar,
  kMulRows,
  kConcatCols,
  kConcatRows,
  kSliceRows,
  kRowSum,
  kRowMean,
  kSum,
  kMean,
  kExp,
  kLeakyRelu,
  kRelu,
  kSigmoid,
  kMaskedRowSoftmax,
  kSegmentSoftmax,
  kBatchNorm,
  kDropout,
  kCrossEntropy,
  kGatherRows,
  kScatterAddRows,
  kSpmm,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kMulRows: return "mul_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kRowMean: return "row_mean";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kExp: return "exp";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kMaskedRowSoftmax: return "masked_row_softmax";
    case OpKind::kSegmentSoftmax: return "segment_softmax";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kDropout: return "dropout";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kScatterAddRows: return "scatter_add_rows";
    case OpKind::kSpmm: return "spmm";
  }
  return "?";
}

inline OpKind op_kind_from_string(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(OpKind::kSpmm); ++k) {
    if (op_name(static_cast<OpKind>(k)) == name) return static_cast<OpKind>(k);
  }
  throw Error(ErrorKind::kUnknownOp, "unknown op kind '" + std::string(name) + "'");
}

using Index = std::vector<std::uint32_t>;
using IndexPtr = std::shared_ptr<const Index>;

// Directed edge list (src -> dst) with a destination-major ordering used for
// every reduction, so accumulation order is ascending in destination index.
struct EdgeIndex {
  Index src;
  Index dst;
  std::size_t num_src = 0;
  std::size_t num_dst = 0;
  Index by_dst;                      // edge ids, stable-sorted by dst
  std::vector<std::size_t> offsets;  // size num_dst + 1 into by_dst

  std::size_t size() const { return src.size(); }

  static std::shared_ptr<const EdgeIndex> make(Index src, Index dst, std::size_t num_src, std::size_t num_dst) {
    if (src.size() != dst.size()) {
      throw Error(ErrorKind::kShapeMismatch, "edge index src/dst length differ");
    }
    auto e = std::make_shared<EdgeIndex>();
    e->num_src = num_src;
    e->num_dst = num_dst;
    e->offsets.assign(num_dst + 1, 0);
    for (std::size_t k = 0; k < src.size(); ++k) {
      if (src[k] >= num_src || dst[k] >= num_dst) {
        throw Error(ErrorKind::kOutOfRange, "edge endpoint out of range at edge " + std::to_string(k));
      }
      ++e->offsets[dst[k] + 1];
    }
    for (std::size_t d = 0; d < num_dst; ++d) e->offsets[d + 1] += e->offsets[d];
    e->by_dst.resize(src.size());
    std::vector<std::size_t> cursor(e->offsets.begin(), e->offsets.end() - 1);
    for (std::size_t k = 0; k < src.size(); ++k) e->by_dst[cursor[dst[k]]++] = static_cast<std::uint32_t>(k);
    e->src = std::move(src);
    e->dst = std::move(dst);
    return e;
  }
};

using EdgeIndexPtr = std::shared_ptr<const EdgeIndex>;

struct OpAttrs {
  double scale = 1.0;   // scale factor, leaky slope, dropout p or bn eps
  double offset = 0.0;  // additive offset or bn momentum
  bool train = false;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  IndexPtr index;
  EdgeIndexPtr edges;
  Tensor aux;  // softmax mask or class weights
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push_leaf(std::move(value), false, {}, nullptr); }

  Var leaf(Tensor value, bool requires_grad = true) {
    return push_leaf(std::move(value), requires_grad, {}, nullptr);
  }

  // Leaf bound to a stored parameter; its value is referenced, not copied.
  Var param(const ParamStore& store, const std::string& name) {
    const Parameter& p = store.at(name);
    return push_leaf(Tensor{}, p.trainable, name, &p.value);
  }

  Var forward(OpKind kind, std::vector<Var> inputs, OpAttrs attrs = {});

  const Tensor& value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  // Number of differentiable records.
  std::size_t record_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) {
      return n.requires_grad && n.kind != OpKind::kLeaf;
    }));
  }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() with respect to any differentiable node.
  const Tensor& grad(Var v) const {
    const auto& g = grads_.at(static_cast<std::size_t>(v.id));
    if (g.empty()) {
      zero_cache_ = Tensor::zeros_like(value(v.id));
      return zero_cache_;
    }
    return g;
  }

  GradTable backward(Var loss, ParamStore* params);

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<int> inputs;
    Tensor value;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    std::string param;
    OpAttrs attrs;
    Tensor saved;
  };

  Var push_leaf(Tensor value, bool requires_grad, std::string param, const Tensor* external) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = std::move(param);
    n.external = external;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  void backward_node(const Node& node, const Tensor& g);
  Tensor& grad_slot(int id) {
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.empty()) slot = Tensor::zeros_like(value(id));
    return slot;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  mutable Tensor zero_cache_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_mat(const Tensor& t) { return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
inline MutMap as_mat(Tensor& t) { return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

[[noreturn]] inline void shape_error(OpKind kind, const std::vector<const Tensor*>& ins, const std::string& why) {
  std::string msg = std::string(op_name(kind)) + ": " + why + " (inputs";
  for (const Tensor* t : ins) msg += " " + shape_str(t->shape());
  msg += ")";
  throw Error(ErrorKind::kShapeMismatch, msg);
}

inline void expect_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    throw Error(ErrorKind::kInvalidArgument, std::string(op_name(kind)) + " expects " + std::to_string(want) +
                                                 " inputs, got " + std::to_string(got));
  }
}

inline bool is_vector_of(const Tensor& t, std::size_t n) {
  return t.size() == n && (t.rank() == 1 || (t.rank() == 2 && t.shape()[1] == 1));
}

inline double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

// Open-interval logistic: never returns exactly 0 or 1.
inline double open_sigmoid(double x) {
  double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  constexpr double kLo = std::numeric_limits<double>::min();
  constexpr double kHi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(s, kLo, kHi);
}

inline Shape with_rows(const Shape& s, std::size_t rows) {
  Shape out = s;
  out[0] = rows;
  return out;
}

}  // namespace detail

inline Var Tape::forward(OpKind kind, std::vector<Var> inputs, OpAttrs attrs) {
  using detail::as_mat;
  std::vector<const Tensor*> in;
  bool needs_grad = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw Error(ErrorKind::kInvalidArgument, std::string(op_name(kind)) + ": input from another tape");
    in.push_back(&value(v.id));
    needs_grad = needs_grad || requires_grad(v.id);
  }
  Node node;
  node.kind = kind;
  for (const Var& v : inputs) node.inputs.push_back(v.id);
  Tensor out;
  Tensor saved;

  switch (kind) {
    case OpKind::kLeaf:
      throw Error(ErrorKind::kUnknownOp, "leaf is not a forward op");

    case OpKind::kMatMul: {
      detail::expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) detail::shape_error(kind, in, "inner dims differ");
      out = Tensor({a.shape()[0], b.shape()[1]});
      as_mat(out).noalias() = as_mat(a) * as_mat(b);
      break;
    }
    case OpKind::kAdd:
    case OpKind::kMul: {
      detail::expect_arity(kind, in.size(), 2);
      if (in[0]->shape() != in[1]->shape()) detail::shape_error(kind, in, "shapes differ");
      out = *in[0];
      const double* b = in[1]->data();
      if (kind == OpKind::kAdd) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      }
      break;
    }
    case OpKind::kAddBias: {
      detail::expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.size() != a.cols()) detail::shape_error(kind, in, "bias length must equal column count");
      out = a;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
      }
      break;
    }
    case OpKind::kScale: {
      detail::expect_arity(kind, in.size(), 1);
      out = *in[0];
      for (double& v : out.values()) v = attrs.scale * v + attrs.offset;
      break;
    }
    case OpKind::kMulScalar: {
      detail::expect_arity(kind, in.size(), 2);
      if (in[1]->size() != 1) detail::shape_error(kind, in, "second input must hold one value");
      out = *in[0];
      const double s = (*in[1])[0];
      for (double& v : out.values()) v *= s;
      break;
    }
    case OpKind::kMulRows: {
      detail::expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      if (a.rank() != 2 || !detail::is_vector_of(*in[1], a.rows())) detail::shape_error(kind, in, "row weights must have one entry per row");
      out = a;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        const double w = (*in[1])[r];
        for (double& v : out.row(r)) v *= w;
      }
      break;
    }
    case OpKind::kConcatCols: {
      detail::expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) detail::shape_error(kind, in, "row counts differ");
      const std::size_t ca = a.cols(), cb = b.cols();
      out = Tensor({a.rows(), ca + cb});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy_n(a.row(r).data(), ca, out.row(r).data());
        std::copy_n(b.row(r).data(), cb, out.row(r).data() + ca);
      }
      break;
    }
    case OpKind::kConcatRows: {
      if (in.empty()) throw Error(ErrorKind::kInvalidArgument, "concat_rows needs at least one input");
      Shape tail(in[0]->shape().begin() + 1, in[0]->shape().end());
      std::size_t rows = 0;
      for (const Tensor* t : in) {
        if (Shape(t->shape().begin() + 1, t->shape().end()) != tail) detail::shape_error(kind, in, "trailing dims differ");
        rows += t->rows();
      }
      out = Tensor(detail::with_rows(in[0]->shape(), rows));
      double* dst = out.data();
      for (const Tensor* t : in) dst = std::copy(t->data(), t->data() + t->size(), dst);
      break;
    }
    case OpKind::kSliceRows: {
      detail::expect_arity(kind, in.size(), 1);
      const Tensor& a = *in[0];
      if (attrs.begin >= attrs.end || attrs.end > a.rows()) detail::shape_error(kind, in, "row range out of bounds");
      out = Tensor(detail::with_rows(a.shape(), attrs.end - attrs.begin));
      std::copy(a.data() + attrs.begin * a.cols(), a.data() + attrs.end * a.cols(), out.data());
      break;
    }
    case OpKind::kRowSum:
    case OpKind::kRowMean: {
      detail::expect_arity(kind, in.size(), 1);
      const Tensor& a = *in[0];
      if (a.rank() != 2) detail::shape_error(kind, in, "expects a matrix");
      out = Tensor({a.rows(), 1});
      const double div = kind == OpKind::kRowMean ? static_cast<double>(a.cols()) : 1.0;
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (double v : a.row(r)) s += v;
        out[r] = s / div;
      }
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      detail::expect_arity(kind, in.size(), 1);
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      if (kind == OpKind::kMean) s /= static_cast<double>(in[0]->size());
      out = Tensor::scalar(s);
      break;
    }
    case OpKind::kExp:
    case OpKind::kRelu:
    case OpKind::kLeakyRelu:
    case OpKind::kSigmoid: {
      detail::expect_arity(kind, in.size(), 1);
      out = *in[0];
      for (double& v : out.values()) {
        switch (kind) {
          case OpKind::kExp: v = std::exp(v); break;
          case OpKind::kRelu: v = v > 0.0 ? v : 0.0; break;
          case OpKind::kLeakyRelu: v = detail::leaky(v, attrs.scale); break;
          default: v = detail::open_sigmoid(v); break;
        }
      }
      break;
    }
    case OpKind::kMaskedRowSoftmax: {
      detail::expect_arity(kind, in.size(), 1);
      const Tensor& a = *in[0];
      if (a.rank() != 2) detail::shape_error(kind, in, "expects a matrix");
      const bool masked = !attrs.aux.empty();
      if (masked && attrs.aux.shape() != a.shape()) detail::shape_error(kind, in, "mask shape differs from input");
      out = Tensor(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < a.cols(); ++c) {
          if (!masked || attrs.aux(r, c) != 0.0) mx = std::max(mx, a(r, c));
        }
        if (!std::isfinite(mx)) continue;  // fully masked row stays zero
        double z = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          if (!masked || attrs.aux(r, c) != 0.0) z += (out(r, c) = std::exp(a(r, c) - mx));
        }
        for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) /= z;
      }
      break;
    }
    case OpKind::kSegmentSoftmax: {
      detail::expect_arity(kind, in.size(), 1);
      const auto& e = attrs.edges;
      if (!e || !detail::is_vector_of(*in[0], e->size())) detail::shape_error(kind, in, "needs one logit per edge");
      out = Tensor(in[0]->shape());
      const Tensor& x = *in[0];
      for (std::size_t d = 0; d < e->num_dst; ++d) {
        const std::size_t lo = e->offsets[d], hi = e->offsets[d + 1];
        if (lo == hi) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = lo; k < hi; ++k) mx = std::max(mx, x[e->by_dst[k]]);
        double z = 0.0;
        for (std::size_t k = lo; k < hi; ++k) z += (out[e->by_dst[k]] = std::exp(x[e->by_dst[k]] - mx));
        for (std::size_t k = lo; k < hi; ++k) out[e->by_dst[k]] /= z;
      }
      break;
    }
    case OpKind::kBatchNorm: {
      detail::expect_arity(kind, in.size(), 3);
      const Tensor& x = *in[0];
      if (x.rank() != 2 || in[1]->size() != x.cols() || in[2]->size() != x.cols()) {
        detail::shape_error(kind, in, "gamma/beta must match feature count");
      }
      const std::size_t n = x.rows(), m = x.cols();
      const double eps = attrs.scale;
      // saved row 0 = mean, row 1 = inv_std, rows 2.. = normalized input
      saved = Tensor({n + 2, m});
      if (attrs.train) {
        for (std::size_t c = 0; c < m; ++c) {
          double mu = 0.0;
          for (std::size_t r = 0; r < n; ++r) mu += x(r, c);
          mu /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t r = 0; r < n; ++r) var += (x(r, c) - mu) * (x(r, c) - mu);
          var /= static_cast<double>(n);
          saved(0, c) = mu;
          saved(1, c) = 1.0 / std::sqrt(var + eps);
          if (attrs.running_mean && attrs.running_var) {
            const double mom = attrs.offset;
            (*attrs.running_mean)[c] = (1.0 - mom) * (*attrs.running_mean)[c] + mom * mu;
            if (n > 1) {
              const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
              (*attrs.running_var)[c] = (1.0 - mom) * (*attrs.running_var)[c] + mom * unbiased;
            }
          }
        }
      } else {
        if (!attrs.running_mean || !attrs.running_var) {
          throw Error(ErrorKind::kInvalidArgument, "batch_norm eval mode needs running statistics");
        }
        for (std::size_t c = 0; c < m; ++c) {
          saved(0, c) = (*attrs.running_mean)[c];
          saved(1, c) = 1.0 / std::sqrt((*attrs.running_var)[c] + eps);
        }
      }
      out = Tensor(x.shape());
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) {
          const double xhat = (x(r, c) - saved(0, c)) * saved(1, c);
          saved(r + 2, c) = xhat;
          out(r, c) = (*in[1])[c] * xhat + (*in[2])[c];
        }
      }
      break;
    }
    case OpKind::kDropout: {
      detail::expect_arity(kind, in.size(), 1);
      const double p = attrs.scale;
      if (p < 0.0 || p >= 1.0) throw Error(ErrorKind::kInvalidArgument, "dropout p must lie in [0,1)");
      if (!attrs.train || p == 0.0) return inputs[0];
      Rng rng(attrs.seed);
      saved = Tensor(in[0]->shape());
      out = *in[0];
      const double keep = 1.0 / (1.0 - p);
      for (std::size_t i = 0; i < out.size(); ++i) {
        saved[i] = rng.uniform() >= p ? keep : 0.0;
        out[i] *= saved[i];
      }
      break;
    }
    case OpKind::kCrossEntropy: {
      detail::expect_arity(kind, in.size(), 1);
      const Tensor& z = *in[0];
      const auto& labels = attrs.index;
      if (z.rank() != 2 || !labels || labels->size() != z.rows()) detail::shape_error(kind, in, "needs one label per logit row");
      const std::size_t n = z.rows(), k = z.cols();
      const bool weighted = !attrs.aux.empty();
      if (weighted && attrs.aux.size() != k) detail::shape_error(kind, in, "class weights must have one entry per class");
      saved = Tensor({n, k});  // softmax probabilities
      double total = 0.0, wsum = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const std::uint32_t y = (*labels)[r];
        if (y >= k) throw Error(ErrorKind::kOutOfRange, "cross_entropy label " + std::to_string(y) + " >= classes");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, z(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += (saved(r, c) = std::exp(z(r, c) - mx));
        for (std::size_t c = 0; c < k; ++c) saved(r, c) /= s;
        const double w = weighted ? attrs.aux[y] : 1.0;
        total += w * (std::log(s) + mx - z(r, y));
        wsum += w;
      }
      attrs.offset = wsum;
      out = Tensor::scalar(wsum > 0.0 ? total / wsum : 0.0);
      break;
    }
    case OpKind::kGatherRows: {
      detail::expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      const auto& idx = attrs.index;
      if (!idx || idx->empty()) detail::shape_error(kind, in, "empty index");
      const std::size_t m = x.cols();
      out = Tensor(detail::with_rows(x.shape(), idx->size()));
      for (std::size_t k = 0; k < idx->size(); ++k) {
        if ((*idx)[k] >= x.rows()) throw Error(ErrorKind::kOutOfRange, "gather_rows index " + std::to_string((*idx)[k]));
        std::copy_n(x.data() + (*idx)[k] * m, m, out.data() + k * m);
      }
      break;
    }
    case OpKind::kScatterAddRows: {
      detail::expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      const auto& idx = attrs.index;
      if (!idx || idx->size() != x.rows() || attrs.count == 0) detail::shape_error(kind, in, "needs one destination per row");
      const std::size_t m = x.cols();
      out = Tensor(detail::with_rows(x.shape(), attrs.count));
      // ascending destination order: stable counting sort of rows by target
      auto order = EdgeIndex::make(Index(idx->size(), 0), Index(*idx), 1, attrs.count);
      for (std::size_t d = 0; d < attrs.count; ++d) {
        double* o = out.data() + d * m;
        for (std::size_t k = order->offsets[d]; k < order->offsets[d + 1]; ++k) {
          const double* src = x.data() + order->by_dst[k] * m;
          for (std::size_t c = 0; c < m; ++c) o[c] += src[c];
        }
      }
      break;
    }
    case OpKind::kSpmm: {
      if (in.size() != 1 && in.size() != 2) detail::expect_arity(kind, in.size(), 2);
      const Tensor& h = *in[0];
      const auto& e = attrs.edges;
      if (!e || h.rank() != 2 || h.rows() != e->num_src) detail::shape_error(kind, in, "source rows must match edge index");
      const bool weighted = in.size() == 2;
      if (weighted && !detail::is_vector_of(*in[1], e->size())) detail::shape_error(kind, in, "needs one weight per edge");
      const std::size_t m = h.cols();
      out = Tensor({e->num_dst, m});
      for (std::size_t d = 0; d < e->num_dst; ++d) {
        double* o = out.data() + d * m;
        for (std::size_t k = e->offsets[d]; k < e->offsets[d + 1]; ++k) {
          const std::uint32_t id = e->by_dst[k];
          const double w = weighted ? (*in[1])[id] : 1.0;
          const double* src = h.data() + e->src[id] * m;
          for (std::size_t c = 0; c < m; ++c) o[c] += w * src[c];
        }
      }
      break;
    }
  }

  node.value = std::move(out);
  node.saved = std::move(saved);
  node.requires_grad = needs_grad;
  node.attrs = std::move(attrs);
  if (!needs_grad) {
    node.inputs.clear();
    node.saved = Tensor{};
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

inline GradTable Tape::backward(Var loss, ParamStore* params) {
  if (nodes_.empty()) throw Error(ErrorKind::kEmptyTape, "backward on an empty tape");
  if (loss.tape != this) throw Error(ErrorKind::kInvalidArgument, "loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw Error(ErrorKind::kNonScalarLoss, "loss has shape " + shape_str(value(loss.id).shape()));
  }
  grads_.assign(nodes_.size(), Tensor{});
  GradTable table;
  if (params) {
    for (const auto& [name, p] : *params) {
      if (p.trainable) table.emplace(name, Tensor::zeros_like(p.value));
    }
  }
  if (!requires_grad(loss.id)) return table;
  grads_[static_cast<std::size_t>(loss.id)] = Tensor(value(loss.id).shape(), 1.0);
  for (int id = loss.id; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || g.empty()) continue;
    if (node.kind == OpKind::kLeaf) {
      if (!node.param.empty() && params) {
        Parameter& p = params->at(node.param);
        for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
        Tensor& t = table.at(node.param);
        for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
      }
      continue;
    }
    backward_node(node, g);
  }
  return table;
}

inline void Tape::backward_node(const Node& node, const Tensor& g) {
  using detail::as_mat;
  auto in_val = [&](std::size_t k) -> const Tensor& { return value(node.inputs[k]); };
  auto wants = [&](std::size_t k) { return k < node.inputs.size() && requires_grad(node.inputs[k]); };
  auto slot = [&](std::size_t k) -> Tensor& { return grad_slot(node.inputs[k]); };
  const OpAttrs& at = node.attrs;
  const Tensor& out = node.value;

  switch (node.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul: {
      if (wants(0)) as_mat(slot(0)).noalias() += as_mat(g) * as_mat(in_val(1)).transpose();
      if (wants(1)) as_mat(slot(1)).noalias() += as_mat(in_val(0)).transpose() * as_mat(g);
      break;
    }
    case OpKind::kAdd: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        Tensor& s = slot(k);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
      }
      break;
    }
    case OpKind::kMul: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        Tensor& s = slot(k);
        const Tensor& other = in_val(1 - k);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * other[i];
      }
      break;
    }
    case OpKind::kAddBias: {
      if (wants(0)) {
        Tensor& s = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
      }
      if (wants(1)) {
        Tensor& s = slot(1);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) s[c] += row[c];
        }
      }
      break;
    }
    case OpKind::kScale: {
      Tensor& s = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += at.scale * g[i];
      break;
    }
    case OpKind::kMulScalar: {
      const double sc = in_val(1)[0];
      if (wants(0)) {
        Tensor& s = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += sc * g[i];
      }
      if (wants(1)) {
        const Tensor& a = in_val(0);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a[i];
        slot(1)[0] += acc;
      }
      break;
    }
    case OpKind::kMulRows: {
      const Tensor& a = in_val(0);
      const Tensor& w = in_val(1);
      if (wants(0)) {
        Tensor& s = slot(0);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) s(r, c) += w[r] * g(r, c);
        }
      }
      if (wants(1)) {
        Tensor& s = slot(1);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * a(r, c);
          s[r] += acc;
        }
      }
      break;
    }
    case OpKind::kConcatCols: {
      const std::size_t ca = in_val(0).cols();
      const std::size_t cb = in_val(1).cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        if (wants(0)) {
          auto s = slot(0).row(r);
          for (std::size_t c = 0; c < ca; ++c) s[c] += g(r, c);
        }
        if (wants(1)) {
          auto s = slot(1).row(r);
          for (std::size_t c = 0; c < cb; ++c) s[c] += g(r, ca + c);
        }
      }
      break;
    }
    case OpKind::kConcatRows: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t n = in_val(k).size();
        if (wants(k)) {
          Tensor& s = slot(k);
          for (std::size_t i = 0; i < n; ++i) s[i] += g[off + i];
        }
        off += n;
      }
      break;
    }
    case OpKind::kSliceRows: {
      Tensor& s = slot(0);
      const std::size_t base = at.begin * in_val(0).cols();
      for (std::size_t i = 0; i < g.size(); ++i) s[base + i] += g[i];
      break;
    }
    case OpKind::kRowSum:
    case OpKind::kRowMean: {
      Tensor& s = slot(0);
      const double div = node.kind == OpKind::kRowMean ? static_cast<double>(s.cols()) : 1.0;
      for (std::size_t r = 0; r < s.rows(); ++r) {
        for (double& v : s.row(r)) v += g[r] / div;
      }
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      Tensor& s = slot(0);
      const double div = node.kind == OpKind::kMean ? static_cast<double>(s.size()) : 1.0;
      for (double& v : s.values()) v += g[0] / div;
      break;
    }
    case OpKind::kExp: {
      Tensor& s = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * out[i];
      break;
    }
    case OpKind::kRelu:
    case OpKind::kLeakyRelu: {
      Tensor& s = slot(0);
      const Tensor& x = in_val(0);
      const double neg = node.kind == OpKind::kRelu ? 0.0 : at.scale;
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * (x[i] > 0.0 ? 1.0 : neg);
      break;
    }
    case OpKind::kSigmoid: {
      Tensor& s = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * out[i] * (1.0 - out[i]);
      break;
    }
    case OpKind::kMaskedRowSoftmax: {
      Tensor& s = slot(0);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) dot += out(r, c) * g(r, c);
        for (std::size_t c = 0; c < g.cols(); ++c) s(r, c) += out(r, c) * (g(r, c) - dot);
      }
      break;
    }
    case OpKind::kSegmentSoftmax: {
      Tensor& s = slot(0);
      const auto& e = at.edges;
      for (std::size_t d = 0; d < e->num_dst; ++d) {
        double dot = 0.0;
        for (std::size_t k = e->offsets[d]; k < e->offsets[d + 1]; ++k) dot += out[e->by_dst[k]] * g[e->by_dst[k]];
        for (std::size_t k = e->offsets[d]; k < e->offsets[d + 1]; ++k) {
          const std::uint32_t id = e->by_dst[k];
          s[id] += out[id] * (g[id] - dot);
        }
      }
      break;
    }
    case OpKind::kBatchNorm: {
      const Tensor& sv = node.saved;
      const Tensor& gamma = in_val(1);
      const std::size_t n = g.rows(), m = g.cols();
      if (wants(1) || wants(2)) {
        for (std::size_t c = 0; c < m; ++c) {
          double dg = 0.0, db = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            dg += g(r, c) * sv(r + 2, c);
            db += g(r, c);
          }
          if (wants(1)) slot(1)[c] += dg;
          if (wants(2)) slot(2)[c] += db;
        }
      }
      if (wants(0)) {
        Tensor& s = slot(0);
        for (std::size_t c = 0; c < m; ++c) {
          const double inv_std = sv(1, c);
          if (!at.train) {
            for (std::size_t r = 0; r < n; ++r) s(r, c) += g(r, c) * gamma[c] * inv_std;
            continue;
          }
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            sum_g += g(r, c);
            sum_gx += g(r, c) * sv(r + 2, c);
          }
          const double dn = static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r) {
            s(r, c) += gamma[c] * inv_std / dn * (dn * g(r, c) - sum_g - sv(r + 2, c) * sum_gx);
          }
        }
      }
      break;
    }
    case OpKind::kDropout: {
      Tensor& s = slot(0);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * node.saved[i];
      break;
    }
    case OpKind::kCrossEntropy: {
      Tensor& s = slot(0);
      const Tensor& p = node.saved;
      const double wsum = at.offset;
      if (wsum <= 0.0) break;
      const bool weighted = !at.aux.empty();
      for (std::size_t r = 0; r < p.rows(); ++r) {
        const std::uint32_t y = (*at.index)[r];
        const double w = (weighted ? at.aux[y] : 1.0) * g[0] / wsum;
        for (std::size_t c = 0; c < p.cols(); ++c) s(r, c) += w * (p(r, c) - (c == y ? 1.0 : 0.0));
      }
      break;
    }
    case OpKind::kGatherRows: {
      Tensor& s = slot(0);
      const std::size_t m = s.cols();
      for (std::size_t k = 0; k < at.index->size(); ++k) {
        double* dst = s.data() + (*at.index)[k] * m;
        const double* src = g.data() + k * m;
        for (std::size_t c = 0; c < m; ++c) dst[c] += src[c];
      }
      break;
    }
    case OpKind::kScatterAddRows: {
      Tensor& s = slot(0);
      const std::size_t m = s.cols();
      for (std::size_t k = 0; k < at.index->size(); ++k) {
        const double* src = g.data() + (*at.index)[k] * m;
        double* dst = s.data() + k * m;
        for (std::size_t c = 0; c < m; ++c) dst[c] += src[c];
      }
      break;
    }
    case OpKind::kSpmm: {
      const auto& e = at.edges;
      const Tensor& h = in_val(0);
      const std::size_t m = h.cols();
      const bool weighted = node.inputs.size() == 2;
      if (wants(0)) {
        Tensor& s = slot(0);
        for (std::size_t id = 0; id < e->size(); ++id) {
          const double w = weighted ? in_val(1)[id] : 1.0;
          const double* src = g.data() + e->dst[id] * m;
          double* dst = s.data() + e->src[id] * m;
          for (std::size_t c = 0; c < m; ++c) dst[c] += w * src[c];
        }
      }
      if (weighted && wants(1)) {
        Tensor& s = slot(1);
        for (std::size_t id = 0; id < e->size(); ++id) {
          const double* a = g.data() + e->dst[id] * m;
          const double* b = h.data() + e->src[id] * m;
          double acc = 0.0;
          for (std::size_t c = 0; c < m; ++c) acc += a[c] * b[c];
          s[id] += acc;
        }
      }
      break;
    }
  }
}

// Free-function spellings of each op kind.

inline Var matmul(Var a, Var b) { return a.tape->forward(OpKind::kMatMul, {a, b}); }
inline Var add(Var a, Var b) { return a.tape->forward(OpKind::kAdd, {a, b}); }
inline Var add_bias(Var a, Var b) { return a.tape->forward(OpKind::kAddBias, {a, b}); }
inline Var mul(Var a, Var b) { return a.tape->forward(OpKind::kMul, {a, b}); }
inline Var mul_scalar(Var a, Var s) { return a.tape->forward(OpKind::kMulScalar, {a, s}); }
inline Var mul_rows(Var a, Var w) { return a.tape->forward(OpKind::kMulRows, {a, w}); }
inline Var concat_cols(Var a, Var b) { return a.tape->forward(OpKind::kConcatCols, {a, b}); }
inline Var concat_rows(std::vector<Var> parts) {
  Tape* t = parts.at(0).tape;
  return t->forward(OpKind::kConcatRows, std::move(parts));
}
inline Var row_sum(Var a) { return a.tape->forward(OpKind::kRowSum, {a}); }
inline Var row_mean(Var a) { return a.tape->forward(OpKind::kRowMean, {a}); }
inline Var sum(Var a) { return a.tape->forward(OpKind::kSum, {a}); }
inline Var mean(Var a) { return a.tape->forward(OpKind::kMean, {a}); }
inline Var exp(Var a) { return a.tape->forward(OpKind::kExp, {a}); }
inline Var relu(Var a) { return a.tape->forward(OpKind::kRelu, {a}); }
inline Var sigmoid(Var a) { return a.tape->forward(OpKind::kSigmoid, {a}); }

inline Var scale(Var a, double factor, double offset = 0.0) {
  OpAttrs at;
  at.scale = factor;
  at.offset = offset;
  return a.tape->forward(OpKind::kScale, {a}, std::move(at));
}

inline Var leaky_relu(Var a, double slope) {
  OpAttrs at;
  at.scale = slope;
  return a.tape->forward(OpKind::kLeakyRelu, {a}, std::move(at));
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.begin = begin;
  at.end = end;
  return a.tape->forward(OpKind::kSliceRows, {a}, std::move(at));
}

// mask entries equal to zero are excluded; an empty mask keeps every entry.
inline Var masked_row_softmax(Var a, Tensor mask = {}) {
  OpAttrs at;
  at.aux = std::move(mask);
  return a.tape->forward(OpKind::kMaskedRowSoftmax, {a}, std::move(at));
}

inline Var segment_softmax(Var logits, EdgeIndexPtr edges) {
  OpAttrs at;
  at.edges = std::move(edges);
  return logits.tape->forward(OpKind::kSegmentSoftmax, {logits}, std::move(at));
}

struct BatchNormOptions {
  bool train = false;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

inline Var batch_norm(Var x, Var gamma, Var beta, const BatchNormOptions& opt) {
  OpAttrs at;
  at.train = opt.train;
  at.scale = opt.eps;
  at.offset = opt.momentum;
  at.running_mean = opt.running_mean;
  at.running_var = opt.running_var;
  return x.tape->forward(OpKind::kBatchNorm, {x, gamma, beta}, std::move(at));
}

inline Var dropout(Var x, double p, bool train, std::uint64_t seed) {
  OpAttrs at;
  at.scale = p;
  at.train = train;
  at.seed = seed;
  return x.tape->forward(OpKind::kDropout, {x}, std::move(at));
}

inline Var cross_entropy(Var logits, IndexPtr labels, Tensor class_weights = {}) {
  OpAttrs at;
  at.index = std::move(labels);
  at.aux = std::move(class_weights);
  return logits.tape->forward(OpKind::kCrossEntropy, {logits}, std::move(at));
}

inline Var gather_rows(Var x, IndexPtr index) {
  OpAttrs at;
  at.index = std::move(index);
  return x.tape->forward(OpKind::kGatherRows, {x}, std::move(at));
}

inline Var scatter_add_rows(Var x, IndexPtr index, std::size_t count) {
  OpAttrs at;
  at.index = std::move(index);
  at.count = count;
  return x.tape->forward(OpKind::kScatterAddRows, {x}, std::move(at));
}

// out[dst] += w_e * h[src] for every edge e; unit weights when w is absent.
inline Var spmm(Var h, EdgeIndexPtr edges) {
  OpAttrs at;
  at.edges = std::move(edges);
  return h.tape->forward(OpKind::kSpmm, {h}, std::move(at));
}
inline Var spmm(Var h, Var w, EdgeIndexPtr edges) {
  OpAttrs at;
  at.edges = std::move(edges);
  return h.tape->forward(OpKind::kSpmm, {h, w}, std::move(at));
}

inline GradTable backward(Var loss, Tape& tape, ParamStore& params) { return tape.backward(loss, &params); }

// Central-difference gradient of f with respect to every trainable scalar.
// f must be deterministic (dropout off, batch norm in eval mode).
inline GradTable finite_diff_grad(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                                  double eps) {
  if (!(eps > 0.0)) throw Error(ErrorKind::kInvalidArgument, "finite-difference eps must be positive");
  GradTable table;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    Tensor g = Tensor::zeros_like(p.value);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = f(params);
      p.value[i] = orig - eps;
      const double down = f(params);
      p.value[i] = orig;
      g[i] = (up - down) / (2.0 * eps);
    }
    table.emplace(name, std::move(g));
  }
  return table;
}

}  // namespace hmg
