#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "common/image.hpp"
#include "synthgen/synthgen.hpp"

namespace boxprompt::synth {

struct DatasetConfig {
  std::filesystem::path out_dir = "data";
  int height = 64;
  int width = 64;
  int train_count = 500;     // alternating splice / copymove
  int test_ind_count = 100;  // alternating splice / copymove
  int test_ood_count = 100;  // blurpatch only
  double jitter_frac = 0.15;
  std::uint64_t seed = 1;

  std::string to_json() const;
  std::string digest() const;
};

struct DatasetRecord {
  std::string split;
  Family family = Family::Splice;
  int index = 0;
  std::uint64_t seed = 0;
  std::string image_file;  // relative to the manifest directory
  std::string mask_file;
  Box box;
  std::string image_digest;
  std::string mask_digest;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.json
  std::vector<DatasetRecord> records;
  std::string config_digest;
  std::map<std::string, int> family_counts;
  int height = 0;
  int width = 0;

  std::vector<const DatasetRecord*> split(const std::string& name) const;
};

inline const char* kManifestName = "manifest.json";

// Split names used throughout the pipeline.
inline const char* kTrainSplit = "train";
inline const char* kTestIndSplit = "test_ind";
inline const char* kTestOodSplit = "test_ood";

// Seed of sample `index` in `split`; independent of the other counts.
std::uint64_t sample_seed(std::uint64_t dataset_seed, const std::string& split, int index);
Family family_for(const std::string& split, int index);

// Generates every sample, writes P6/P5 files plus manifest.json, then reads
// everything back and checks the recorded digests.
DatasetManifest write_dataset(const DatasetConfig& config);

DatasetManifest load_manifest(const std::filesystem::path& manifest_or_dir);
// Throws a Format error when a listed file is missing or its digest differs.
void verify_dataset(const DatasetManifest& manifest);

struct LoadedSample {
  Image image;
  Mask gt_mask;
  Box box;
  Family family = Family::Splice;
};

LoadedSample load_sample(const DatasetManifest& manifest, const DatasetRecord& record);

}  // namespace boxprompt::synth
