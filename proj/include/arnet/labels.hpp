#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "arnet/common.hpp"

namespace arnet {

// Multi-hot bit vectors; actions have 4 entries, reasons 21.
using Bits = std::vector<std::uint8_t>;

inline constexpr int kNumActions = 4;
inline constexpr int kNumReasons = 21;

enum ActionIndex : int {
  kMoveForward = 0,
  kStopSlowDown = 1,
  kTurnLeft = 2,
  kTurnRight = 3,
};

extern const std::array<std::string, kNumActions> kActionNames;
extern const std::array<std::string, kNumReasons> kReasonNames;

struct Labels {
  Bits actions;  // 4
  Bits reasons;  // 21
};

// Thresholds independent probabilities into a multi-hot decision.
// Strictly-greater comparison: a probability exactly at the threshold is off.
struct DecisionConfig {
  double threshold = 0.5;
};

Bits decide(const std::vector<double>& probs, const DecisionConfig& cfg = {});

// An explanation exists when at least one action or reason bit is set.
bool explanation_defined(const Bits& actions, const Bits& reasons);

// Action/reason compatibility matrix.  `matrix` is row-major actions x reasons;
// `pairs` lists the positions of its ones sorted row-major.
struct PairMatrix {
  std::vector<std::string> actions;
  std::vector<std::string> reasons;
  std::vector<std::uint8_t> matrix;
  std::vector<std::pair<int, int>> pairs;

  int n_actions() const { return static_cast<int>(actions.size()); }
  int n_reasons() const { return static_cast<int>(reasons.size()); }
  bool at(int a, int r) const {
    return matrix[static_cast<std::size_t>(a) * reasons.size() +
                  static_cast<std::size_t>(r)] != 0;
  }

  static PairMatrix defaults();
  static PairMatrix from_pairs(std::vector<std::string> actions,
                               std::vector<std::string> reasons,
                               const std::vector<std::pair<int, int>>& pairs);
  static PairMatrix load(const std::string& path);
  void save(const std::string& path) const;
};

// Expands an (action, reason) pair of bit vectors into a joint bit vector over
// the matrix's valid pairs: joint[k] = action[a_k] & reason[r_k], optionally
// with the turn-exclusion rule applied (see joint_exclusion_mask).
Bits joint_expand(const Bits& actions, const Bits& reasons, const PairMatrix& pm,
                  bool turn_exclusion = true);

// When both turn actions are active, side-blocker reasons cannot justify
// either turn, so those pair positions are forced to zero.  Returns the
// suppressed pair indices for a given action vector (empty unless both turn
// bits are set and the vocabulary contains the turn/blocker names).
std::vector<int> joint_suppressed_pairs(const Bits& actions, const PairMatrix& pm);

}  // namespace arnet
