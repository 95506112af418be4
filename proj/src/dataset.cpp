#include "arnet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace arnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string vocab_fingerprint(const std::vector<std::string>& actions,
                              const std::vector<std::string>& reasons) {
  std::uint64_t h = fnv1a("actions");
  for (const auto& a : actions) h = fnv1a(a + "\n", h);
  h = fnv1a("reasons", h);
  for (const auto& r : reasons) h = fnv1a(r + "\n", h);
  return to_hex(h);
}

DatasetManifest make_manifest(std::string split) {
  DatasetManifest m;
  m.split = std::move(split);
  m.action_names.assign(kActionNames.begin(), kActionNames.end());
  m.reason_names.assign(kReasonNames.begin(), kReasonNames.end());
  m.fingerprint = vocab_fingerprint(m.action_names, m.reason_names);
  return m;
}

namespace {

Bits read_bits(const json& j, std::size_t want, int line, const char* what) {
  require(j.is_array() && j.size() == want,
          "label arity mismatch at line " + std::to_string(line) + ": expected " +
              std::to_string(want) + " " + what + " bits");
  Bits out;
  out.reserve(want);
  for (const auto& v : j) {
    require(v.is_number_integer() && (v == 0 || v == 1),
            std::string(what) + " bits must be 0/1 at line " + std::to_string(line));
    out.push_back(v.get<std::uint8_t>());
  }
  return out;
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open manifest: " + path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("manifest parse error at line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    if (!have_header) {
      require(j.value("type", "") == "arnet-manifest",
              "not a dataset manifest (missing header): " + path);
      require(j.value("version", 0) == 1,
              "unsupported manifest version at line 1 of " + path);
      m.split = j.value("split", "");
      require(!m.split.empty(), "manifest header missing split name");
      require(j.contains("actions") && j.contains("reasons"),
              "manifest header missing vocabularies");
      m.action_names = j["actions"].get<std::vector<std::string>>();
      m.reason_names = j["reasons"].get<std::vector<std::string>>();
      m.fingerprint = j.value("fingerprint", "");
      const std::string expect = vocab_fingerprint(m.action_names, m.reason_names);
      require(m.fingerprint == expect,
              "manifest fingerprint mismatch: header says " + m.fingerprint +
                  ", vocabulary hashes to " + expect);
      have_header = true;
      continue;
    }
    AnnotationRecord rec;
    require(j.contains("id") && j.contains("image") && j.contains("actions") &&
                j.contains("reasons"),
            "manifest record missing fields at line " + std::to_string(line_no));
    rec.id = j["id"].get<std::string>();
    rec.image = j["image"].get<std::string>();
    rec.actions = read_bits(j["actions"], m.action_names.size(), line_no, "action");
    rec.reasons = read_bits(j["reasons"], m.reason_names.size(), line_no, "reason");
    m.records.push_back(std::move(rec));
  }
  require(have_header, "not a dataset manifest (empty file): " + path);
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  require(!m.split.empty(), "manifest split name must not be empty");
  std::ofstream out(path);
  require(out.good(), "cannot write manifest: " + path);
  json header = {{"type", "arnet-manifest"},
                 {"version", 1},
                 {"split", m.split},
                 {"actions", m.action_names},
                 {"reasons", m.reason_names},
                 {"fingerprint", vocab_fingerprint(m.action_names, m.reason_names)}};
  out << header.dump() << '\n';
  for (const auto& rec : m.records) {
    require(rec.actions.size() == m.action_names.size() &&
                rec.reasons.size() == m.reason_names.size(),
            "record " + rec.id + " label arity mismatch");
    json j = {{"id", rec.id},
              {"image", rec.image},
              {"actions", rec.actions},
              {"reasons", rec.reasons}};
    out << j.dump() << '\n';
  }
  require(out.good(), "cannot write manifest: " + path);
}

ClassCounts class_counts(const DatasetManifest& m) {
  ClassCounts c;
  c.samples = static_cast<std::int64_t>(m.records.size());
  for (const auto& rec : m.records) {
    for (std::size_t i = 0; i < rec.actions.size() && i < c.actions.size(); ++i)
      c.actions[i] += rec.actions[i];
    for (std::size_t i = 0; i < rec.reasons.size() && i < c.reasons.size(); ++i)
      c.reasons[i] += rec.reasons[i];
  }
  return c;
}

std::string resolve_image_path(const DatasetManifest& m, const AnnotationRecord& rec) {
  fs::path p(rec.image);
  if (p.is_absolute() || m.base_dir.empty()) return rec.image;
  return (fs::path(m.base_dir) / p).string();
}

// ---------------------------------------------------------------------------
// importers
// ---------------------------------------------------------------------------

namespace {

std::string normalize_name(const std::string& s) {
  std::string out;
  bool gap = false;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      if (gap && !out.empty()) out.push_back(' ');
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      gap = false;
    } else {
      gap = true;
    }
  }
  return out;
}

// Maps an external category label onto our vocabulary index, tolerating the
// common phrasings; -1 when unknown.
int match_category(const std::string& raw, const std::vector<std::string>& vocab) {
  static const std::map<std::string, std::string> aliases = {
      {"forward", "move_forward"},
      {"move forward", "move_forward"},
      {"stop", "stop_slow_down"},
      {"stop slow down", "stop_slow_down"},
      {"stop or slow down", "stop_slow_down"},
      {"slow down", "stop_slow_down"},
      {"turn left", "turn_left"},
      {"left turn", "turn_left"},
      {"turn right", "turn_right"},
      {"right turn", "turn_right"},
      {"follow traffic", "follow_traffic"},
      {"road clear", "road_clear"},
      {"road is clear", "road_clear"},
      {"traffic light green", "traffic_light_green"},
      {"traffic light is green", "traffic_light_green"},
      {"green light", "traffic_light_green"},
      {"obstacle car", "obstacle_car"},
      {"obstacle person", "obstacle_person"},
      {"obstacle pedestrian", "obstacle_person"},
      {"obstacle rider", "obstacle_rider"},
      {"obstacle others", "obstacle_others"},
      {"obstacle other", "obstacle_others"},
      {"traffic light", "traffic_light"},
      {"traffic light red", "traffic_light"},
      {"red light", "traffic_light"},
      {"traffic sign", "traffic_sign"},
      {"front car turning left", "front_car_turning_left"},
      {"on left turn lane", "on_left_turn_lane"},
      {"on the left turn lane", "on_left_turn_lane"},
      {"left turn light allows", "left_turn_light_allows"},
      {"traffic light allows left turn", "left_turn_light_allows"},
      {"front car turning right", "front_car_turning_right"},
      {"on right turn lane", "on_right_turn_lane"},
      {"on the right turn lane", "on_right_turn_lane"},
      {"right turn light allows", "right_turn_light_allows"},
      {"traffic light allows right turn", "right_turn_light_allows"},
      {"obstacles left lane", "obstacles_left_lane"},
      {"obstacles on left lane", "obstacles_left_lane"},
      {"obstacle on the left", "obstacles_left_lane"},
      {"no lane left", "no_lane_left"},
      {"no lane on left", "no_lane_left"},
      {"no lane on the left", "no_lane_left"},
      {"solid line left", "solid_line_left"},
      {"solid line on left", "solid_line_left"},
      {"solid line on the left", "solid_line_left"},
      {"obstacles right lane", "obstacles_right_lane"},
      {"obstacles on right lane", "obstacles_right_lane"},
      {"obstacle on the right", "obstacles_right_lane"},
      {"no lane right", "no_lane_right"},
      {"no lane on right", "no_lane_right"},
      {"no lane on the right", "no_lane_right"},
      {"solid line right", "solid_line_right"},
      {"solid line on right", "solid_line_right"},
      {"solid line on the right", "solid_line_right"},
  };
  const std::string norm = normalize_name(raw);
  std::string canonical;
  if (auto it = aliases.find(norm); it != aliases.end()) {
    canonical = it->second;
  } else {
    // accept names already written in canonical form
    for (const auto& v : vocab)
      if (normalize_name(v) == norm) {
        canonical = v;
        break;
      }
  }
  if (canonical.empty()) return -1;
  auto it = std::find(vocab.begin(), vocab.end(), canonical);
  return it == vocab.end() ? -1 : static_cast<int>(it - vocab.begin());
}

json load_json_file(const std::string& path, const char* hint) {
  std::ifstream in(path);
  require(in.good(), std::string("dataset not found: ") + path + "; " + hint);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + path + ": " + e.what());
  }
  return j;
}

void check_categories(const json& file, const std::vector<std::string>& vocab,
                      const std::string& path) {
  if (!file.contains("categories")) return;
  for (const auto& c : file["categories"]) {
    const std::string name =
        c.is_object() ? c.value("name", "") : c.get<std::string>();
    require(match_category(name, vocab) >= 0,
            "unknown category name: '" + name + "' in " + path);
  }
}

}  // namespace

DatasetManifest import_bdd_oia(const std::string& root, const std::string& split) {
  require(split == "train" || split == "val" || split == "test",
          "unknown split: " + split);
  const char* hint = "see docs/datasets.md for acquisition and layout";
  require(fs::exists(root), std::string("dataset not found: ") + root + "; " + hint);
  const std::string actions_path =
      (fs::path(root) / (split + "_25k_images_actions.json")).string();
  const std::string reasons_path =
      (fs::path(root) / (split + "_25k_images_reasons.json")).string();
  json ja = load_json_file(actions_path, hint);
  json jr = load_json_file(reasons_path, hint);

  DatasetManifest m = make_manifest(split);
  check_categories(ja, m.action_names, actions_path);
  check_categories(jr, m.reason_names, reasons_path);

  // image id -> file name
  std::map<std::int64_t, std::string> files;
  require(ja.contains("images"), "missing images list in " + actions_path);
  for (const auto& img : ja["images"]) {
    const std::int64_t id = img.contains("id") ? img["id"].get<std::int64_t>()
                                               : static_cast<std::int64_t>(files.size());
    files[id] = img.value("file_name", "");
    require(!files[id].empty(), "image entry missing file_name in " + actions_path);
  }

  auto collect = [](const json& file, std::size_t arity, const std::string& path) {
    std::map<std::int64_t, Bits> out;
    require(file.contains("annotations"), "missing annotations list in " + path);
    int line = 0;
    for (const auto& ann : file["annotations"]) {
      ++line;
      const std::int64_t id = ann.contains("image_id")
                                  ? ann["image_id"].get<std::int64_t>()
                                  : ann.value("id", static_cast<std::int64_t>(-1));
      require(id >= 0, "annotation without image id in " + path);
      const auto& cat = ann.contains("category") ? ann["category"] : ann["labels"];
      require(cat.is_array() && cat.size() == arity,
              "label arity mismatch for image " + std::to_string(id) + " in " + path +
                  ": expected " + std::to_string(arity) + " bits, got " +
                  std::to_string(cat.size()));
      Bits bits;
      for (const auto& v : cat) {
        const int b = v.get<int>();
        require(b == 0 || b == 1, "labels must be 0/1 in " + path);
        bits.push_back(static_cast<std::uint8_t>(b));
      }
      out[id] = std::move(bits);
    }
    return out;
  };
  const auto actions = collect(ja, m.action_names.size(), actions_path);
  const auto reasons = collect(jr, m.reason_names.size(), reasons_path);

  for (const auto& [id, file] : files) {
    auto ia = actions.find(id);
    auto ir = reasons.find(id);
    if (ia == actions.end() || ir == reasons.end()) continue;  // unlabeled image
    AnnotationRecord rec;
    rec.id = file;
    rec.image = (fs::path("images") / file).string();
    rec.actions = ia->second;
    rec.reasons = ir->second;
    m.records.push_back(std::move(rec));
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  require(!m.records.empty(), "no labeled images found under " + root);
  return m;
}

DatasetManifest import_nu_ar(const std::string& root, const std::string& split) {
  require(split == "train" || split == "val" || split == "test",
          "unknown split: " + split);
  const char* hint = "see docs/datasets.md for acquisition and layout";
  const std::string path = (fs::path(root) / (split + ".json")).string();
  json j = load_json_file(path, hint);
  const json& samples = j.is_array() ? j : j.at("samples");
  DatasetManifest m = make_manifest(split);
  int line = 0;
  for (const auto& s : samples) {
    ++line;
    AnnotationRecord rec;
    rec.image = s.value("image", "");
    require(!rec.image.empty(),
            "sample " + std::to_string(line) + " missing image path in " + path);
    rec.id = s.contains("id") ? s["id"].get<std::string>()
                              : fs::path(rec.image).stem().string();
    rec.actions = read_bits(s.at("actions"), m.action_names.size(), line, "action");
    rec.reasons = read_bits(s.at("reasons"), m.reason_names.size(), line, "reason");
    m.records.push_back(std::move(rec));
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  require(!m.records.empty(), "no samples found in " + path);
  return m;
}

}  // namespace arnet
