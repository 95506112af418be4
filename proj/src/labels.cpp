#include "arnet/labels.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace arnet {

using nlohmann::json;

const std::array<std::string, kNumActions> kActionNames = {
    "move_forward", "stop_slow_down", "turn_left", "turn_right"};

const std::array<std::string, kNumReasons> kReasonNames = {
    "follow_traffic",           // 0
    "road_clear",               // 1
    "traffic_light_green",      // 2
    "obstacle_car",             // 3
    "obstacle_person",          // 4
    "obstacle_rider",           // 5
    "obstacle_others",          // 6
    "traffic_light",            // 7
    "traffic_sign",             // 8
    "front_car_turning_left",   // 9
    "on_left_turn_lane",        // 10
    "left_turn_light_allows",   // 11
    "front_car_turning_right",  // 12
    "on_right_turn_lane",       // 13
    "right_turn_light_allows",  // 14
    "obstacles_left_lane",      // 15
    "no_lane_left",             // 16
    "solid_line_left",          // 17
    "obstacles_right_lane",     // 18
    "no_lane_right",            // 19
    "solid_line_right",         // 20
};

Bits decide(const std::vector<double>& probs, const DecisionConfig& cfg) {
  Bits out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    require(p >= 0.0 && p <= 1.0 && p == p,
            "probability out of range at index " + std::to_string(i));
    out[i] = p > cfg.threshold ? 1 : 0;
  }
  return out;
}

bool explanation_defined(const Bits& actions, const Bits& reasons) {
  auto any = [](const Bits& b) {
    return std::any_of(b.begin(), b.end(), [](std::uint8_t v) { return v != 0; });
  };
  return any(actions) || any(reasons);
}

PairMatrix PairMatrix::from_pairs(std::vector<std::string> actions,
                                  std::vector<std::string> reasons,
                                  const std::vector<std::pair<int, int>>& pairs) {
  PairMatrix pm;
  pm.actions = std::move(actions);
  pm.reasons = std::move(reasons);
  const int na = pm.n_actions(), nr = pm.n_reasons();
  require(na > 0 && nr > 0, "invalid pair matrix file: empty vocabulary");
  pm.matrix.assign(static_cast<std::size_t>(na) * nr, 0);
  for (auto [a, r] : pairs) {
    require(a >= 0 && a < na && r >= 0 && r < nr,
            "invalid pair matrix file: pair index out of range");
    pm.matrix[static_cast<std::size_t>(a) * nr + r] = 1;
  }
  for (int a = 0; a < na; ++a)
    for (int r = 0; r < nr; ++r)
      if (pm.at(a, r)) pm.pairs.emplace_back(a, r);
  // duplicates collapse in the matrix, so the counts diverge
  require(pm.pairs.size() == pairs.size(),
          "invalid pair matrix file: pair count does not match matrix ones");
  return pm;
}

PairMatrix PairMatrix::defaults() {
  // move_forward: follow/clear/green plus every side blocker (the blockers
  // explain why forward was chosen over a lane change); stop: obstacles,
  // light, sign plus blockers; each turn: its own trigger triple plus the
  // blockers of the opposite side.
  static const std::vector<std::pair<int, int>> ones = [] {
    std::vector<std::pair<int, int>> v;
    for (int r : {0, 1, 2, 15, 16, 17, 18, 19, 20}) v.emplace_back(kMoveForward, r);
    for (int r : {3, 4, 5, 6, 7, 8, 15, 16, 17, 18, 19, 20})
      v.emplace_back(kStopSlowDown, r);
    for (int r : {9, 10, 11, 18, 19, 20}) v.emplace_back(kTurnLeft, r);
    for (int r : {12, 13, 14, 15, 16, 17}) v.emplace_back(kTurnRight, r);
    return v;
  }();
  return from_pairs({kActionNames.begin(), kActionNames.end()},
                    {kReasonNames.begin(), kReasonNames.end()}, ones);
}

PairMatrix PairMatrix::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open pair matrix file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid pair matrix file: " + std::string(e.what()));
  }
  require(j.is_object() && j.contains("actions") && j.contains("reasons") &&
              j.contains("pairs"),
          "invalid pair matrix file: expected keys actions/reasons/pairs");
  std::vector<std::string> actions, reasons;
  std::vector<std::pair<int, int>> pairs;
  try {
    actions = j["actions"].get<std::vector<std::string>>();
    reasons = j["reasons"].get<std::vector<std::string>>();
    for (const auto& p : j["pairs"]) {
      require(p.is_array() && p.size() == 2, "invalid pair matrix file: bad pair entry");
      pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
    if (j.contains("count"))
      require(j["count"].get<std::size_t>() == pairs.size(),
              "invalid pair matrix file: pair count does not match declared count");
  } catch (const json::exception& e) {
    throw DataError("invalid pair matrix file: " + std::string(e.what()));
  }
  return from_pairs(std::move(actions), std::move(reasons), pairs);
}

void PairMatrix::save(const std::string& path) const {
  json j;
  j["actions"] = actions;
  j["reasons"] = reasons;
  j["count"] = pairs.size();
  auto& jp = j["pairs"] = json::array();
  for (auto [a, r] : pairs) jp.push_back({a, r});
  std::ofstream out(path);
  require(out.good(), "cannot write pair matrix file: " + path);
  out << j.dump(2) << '\n';
}

namespace {
int name_index(const std::vector<std::string>& names, const std::string& want) {
  auto it = std::find(names.begin(), names.end(), want);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}
}  // namespace

std::vector<int> joint_suppressed_pairs(const Bits& actions, const PairMatrix& pm) {
  std::vector<int> out;
  const int tl = name_index(pm.actions, "turn_left");
  const int tr = name_index(pm.actions, "turn_right");
  if (tl < 0 || tr < 0) return out;
  if (!(tl < static_cast<int>(actions.size()) && tr < static_cast<int>(actions.size())))
    return out;
  if (!actions[static_cast<std::size_t>(tl)] || !actions[static_cast<std::size_t>(tr)])
    return out;
  // Both turns are claimed at once: a right-side blocker cannot be the reason
  // for the left turn and vice versa.
  auto blockers = [&](const char* side) {
    std::vector<int> idx;
    for (const std::string stem :
         {std::string("obstacles_") + side + "_lane", std::string("no_lane_") + side,
          std::string("solid_line_") + side}) {
      const int r = name_index(pm.reasons, stem);
      if (r >= 0) idx.push_back(r);
    }
    return idx;
  };
  const auto right_blockers = blockers("right");
  const auto left_blockers = blockers("left");
  for (std::size_t k = 0; k < pm.pairs.size(); ++k) {
    const auto [a, r] = pm.pairs[k];
    if (a == tl &&
        std::find(right_blockers.begin(), right_blockers.end(), r) != right_blockers.end())
      out.push_back(static_cast<int>(k));
    if (a == tr &&
        std::find(left_blockers.begin(), left_blockers.end(), r) != left_blockers.end())
      out.push_back(static_cast<int>(k));
  }
  return out;
}

Bits joint_expand(const Bits& actions, const Bits& reasons, const PairMatrix& pm,
                  bool turn_exclusion) {
  require(static_cast<int>(actions.size()) == pm.n_actions(),
          "vocabulary mismatch: expected " + std::to_string(pm.n_actions()) +
              " action bits, got " + std::to_string(actions.size()));
  require(static_cast<int>(reasons.size()) == pm.n_reasons(),
          "vocabulary mismatch: expected " + std::to_string(pm.n_reasons()) +
              " reason bits, got " + std::to_string(reasons.size()));
  for (auto v : actions) require(v <= 1, "action bits must be 0/1");
  for (auto v : reasons) require(v <= 1, "reason bits must be 0/1");

  Bits out(pm.pairs.size());
  for (std::size_t k = 0; k < pm.pairs.size(); ++k) {
    const auto [a, r] = pm.pairs[k];
    out[k] = actions[static_cast<std::size_t>(a)] & reasons[static_cast<std::size_t>(r)];
  }
  if (turn_exclusion)
    for (int k : joint_suppressed_pairs(actions, pm)) out[static_cast<std::size_t>(k)] = 0;
  return out;
}

}  // namespace arnet
