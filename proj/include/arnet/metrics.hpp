#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arnet/labels.hpp"

namespace arnet {

// Rows are samples, columns are classes; entries are 0/1.
struct BitMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> v;

  BitMatrix() = default;
  BitMatrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0) {}
  std::uint8_t& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  Bits row(int r) const {
    return Bits(v.begin() + static_cast<std::ptrdiff_t>(r) * cols,
                v.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols);
  }
};

struct F1Options {
  // Value of the per-sample F1 when prediction and ground truth are both
  // empty.  Counting it as perfect agreement is the default.
  enum class EmptyPolicy { kOne, kZero };
  // "overall" F1: mean of per-sample F1 (the default) or the micro F1
  // computed from pooled counts.
  enum class OverallPolicy { kSampleAveraged, kMicro };
  EmptyPolicy empty = EmptyPolicy::kOne;
  OverallPolicy overall = OverallPolicy::kSampleAveraged;
};

// Per-sample F1 between two multi-hot vectors: 2|p&g| / (|p|+|g|).
double f1_sample(const Bits& pred, const Bits& gt, const F1Options& opt = {});

// Mean per-sample F1 across rows (or micro F1 under OverallPolicy::kMicro).
double f1_overall(const BitMatrix& pred, const BitMatrix& gt, const F1Options& opt = {});

// Per-class binary F1 plus ground-truth support.
struct PerClass {
  std::vector<double> f1;
  std::vector<std::int64_t> support;  // positives in ground truth
  std::vector<std::int64_t> tp, fp, fn;
};
PerClass per_class_f1(const BitMatrix& pred, const BitMatrix& gt);

// Macro average of per-class F1; classes with zero support and zero
// predictions count as 0 by convention so an easy empty class cannot
// inflate the mean.
double f1_mean(const BitMatrix& pred, const BitMatrix& gt);

struct JointResult {
  double overall = 0;  // sample-averaged (or micro) F1 over pair space
  double mean = 0;     // macro F1 over pairs
  PerClass per_pair;
  BitMatrix pred;  // expanded pair predictions
  BitMatrix gt;    // expanded pair ground truth
};

// Expands actions x reasons through the pair matrix (for predictions and
// ground truth identically, including the turn-exclusion rule) and scores the
// result.
JointResult joint_f1(const BitMatrix& action_pred, const BitMatrix& reason_pred,
                     const BitMatrix& action_gt, const BitMatrix& reason_gt,
                     const PairMatrix& pm, bool turn_exclusion = true,
                     const F1Options& opt = {});

// Full evaluation summary for one dataset split.
struct MetricsReport {
  std::string checkpoint;  // fingerprint of the evaluated weights, if any
  std::string split;
  int samples = 0;
  double action_overall = 0, action_mean = 0;
  double reason_overall = 0, reason_mean = 0;
  double joint_overall = 0, joint_mean = 0;
  PerClass action;
  PerClass reason;
  PerClass pair;
  std::vector<std::string> pair_names;
  std::string empty_policy;    // "one" | "zero"
  std::string overall_policy;  // "sample" | "micro"
  bool turn_exclusion = true;
};

MetricsReport build_report(const BitMatrix& action_pred, const BitMatrix& reason_pred,
                           const BitMatrix& action_gt, const BitMatrix& reason_gt,
                           const PairMatrix& pm, bool turn_exclusion = true,
                           const F1Options& opt = {});

// Human-readable table (3 decimals) and machine-readable forms.
std::string render_text(const MetricsReport& r);
std::string render_csv(const MetricsReport& r);   // header + one row per class/pair
std::string render_json(const MetricsReport& r);  // full precision

}  // namespace arnet
