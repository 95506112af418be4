#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "arnet/labels.hpp"

namespace arnet {

struct AnnotationRecord {
  std::string id;
  std::string image;  // path relative to the manifest's directory
  Bits actions;       // 4
  Bits reasons;       // 21
};

// One dataset split, serialized as JSON Lines: a header line carrying the
// vocabularies and their fingerprint, then one record per line.
struct DatasetManifest {
  std::string split;
  std::vector<std::string> action_names;
  std::vector<std::string> reason_names;
  std::string fingerprint;  // hex FNV-1a over the vocabulary
  std::vector<AnnotationRecord> records;

  // Directory the image paths are relative to; set by read_manifest, not
  // serialized.
  std::string base_dir;
};

std::string vocab_fingerprint(const std::vector<std::string>& actions,
                              const std::vector<std::string>& reasons);

DatasetManifest make_manifest(std::string split);
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

struct ClassCounts {
  std::array<std::int64_t, kNumActions> actions{};
  std::array<std::int64_t, kNumReasons> reasons{};
  std::int64_t samples = 0;
};
ClassCounts class_counts(const DatasetManifest& m);

// Resolves a record's image path against the manifest location.
std::string resolve_image_path(const DatasetManifest& m, const AnnotationRecord& rec);

// Importers for the two external annotation layouts described in
// docs/datasets.md.  `split` is one of train/val/test.
DatasetManifest import_bdd_oia(const std::string& root, const std::string& split);
DatasetManifest import_nu_ar(const std::string& root, const std::string& split);

}  // namespace arnet
