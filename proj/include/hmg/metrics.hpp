#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmg/error.hpp"

namespace hmg {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return n_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * n_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t support(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < n_; ++p) s += (*this)(c, p);
    return s;
  }
  std::uint64_t predicted(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < n_; ++t) s += (*this)(t, c);
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < n_; ++c) s += (*this)(c, c);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predictions,
                                 std::size_t num_classes) {
  if (labels.size() != predictions.size()) {
    throw Error(ErrorKind::kShapeMismatch, "labels and predictions differ in length");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] >= num_classes || predictions[k] >= num_classes) {
      throw Error(ErrorKind::kOutOfRange, "class index beyond " + std::to_string(num_classes) + " at position " +
                                              std::to_string(k));
    }
    ++cm.at(labels[k], predictions[k]);
  }
  return cm;
}

struct Scores {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct ClassScores {
  std::vector<double> precision, recall, f1;
  std::vector<std::uint64_t> support;
};

// Per-class scores with 0/0 defined as 0.
inline ClassScores per_class_scores(const ConfusionMatrix& cm) {
  ClassScores s;
  const std::size_t n = cm.num_classes();
  for (std::size_t c = 0; c < n; ++c) {
    const double tp = static_cast<double>(cm(c, c));
    const double pred = static_cast<double>(cm.predicted(c));
    const double sup = static_cast<double>(cm.support(c));
    const double p = pred > 0 ? tp / pred : 0.0;
    const double r = sup > 0 ? tp / sup : 0.0;
    s.precision.push_back(p);
    s.recall.push_back(r);
    s.f1.push_back(p + r > 0 ? 2.0 * p * r / (p + r) : 0.0);
    s.support.push_back(cm.support(c));
  }
  return s;
}

// Support-weighted average over true classes.
inline Scores weighted_scores(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw Error(ErrorKind::kInvalidArgument, "weighted scores of an empty confusion matrix");
  const ClassScores cs = per_class_scores(cm);
  Scores out;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const double w = static_cast<double>(cs.support[c]) / static_cast<double>(total);
    out.f1 += w * cs.f1[c];
    out.precision += w * cs.precision[c];
  }
  // support_c * (tp_c / support_c) collapses to tp_c; summing the integers
  // keeps the result bit-equal to accuracy
  out.recall = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return out;
}

// Unweighted mean over classes with nonzero support.
inline Scores macro_scores(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(ErrorKind::kInvalidArgument, "macro scores of an empty confusion matrix");
  const ClassScores cs = per_class_scores(cm);
  Scores out;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    if (cs.support[c] == 0) continue;
    ++present;
    out.f1 += cs.f1[c];
    out.precision += cs.precision[c];
    out.recall += cs.recall[c];
  }
  const double k = static_cast<double>(present);
  return {out.f1 / k, out.precision / k, out.recall / k};
}

}  // namespace hmg
