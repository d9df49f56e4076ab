#include "synthgen/dataset.hpp"

#include <fstream>
#include <iterator>

#include "common/digest.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "json.hpp"

namespace boxprompt::synth {

using nlohmann::json;

namespace {

json config_json(const DatasetConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"train_count", c.train_count},
          {"test_ind_count", c.test_ind_count},
          {"test_ood_count", c.test_ood_count},
          {"jitter_frac", c.jitter_frac},
          {"seed", c.seed}};
}

std::uint64_t split_tag(const std::string& split) {
  if (split == kTrainSplit) return 1;
  if (split == kTestIndSplit) return 2;
  if (split == kTestOodSplit) return 3;
  fail(ErrorKind::InvalidArgument, "unknown split: " + split);
}

}  // namespace

std::string DatasetConfig::to_json() const { return config_json(*this).dump(); }
std::string DatasetConfig::digest() const { return sha256_hex(to_json()); }

std::vector<const DatasetRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, const std::string& split, int index) {
  return mix_seed(mix_seed(dataset_seed, split_tag(split)), static_cast<std::uint64_t>(index));
}

Family family_for(const std::string& split, int index) {
  if (split == kTestOodSplit) return Family::BlurPatch;
  return index % 2 == 0 ? Family::Splice : Family::CopyMove;
}

DatasetManifest write_dataset(const DatasetConfig& config) {
  require(config.height >= 16 && config.width >= 16, ErrorKind::InvalidArgument, "dataset images must be >= 16x16");
  require(config.train_count >= 0 && config.test_ind_count >= 0 && config.test_ood_count >= 0,
          ErrorKind::InvalidArgument, "dataset counts must be non-negative");
  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + config.out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = config.out_dir;
  manifest.config_digest = config.digest();
  manifest.height = config.height;
  manifest.width = config.width;
  const std::pair<const char*, int> splits[] = {
      {kTrainSplit, config.train_count}, {kTestIndSplit, config.test_ind_count}, {kTestOodSplit, config.test_ood_count}};
  for (const auto& [split, count] : splits) {
    for (int i = 0; i < count; ++i) {
      DatasetRecord r;
      r.split = split;
      r.index = i;
      r.family = family_for(split, i);
      r.seed = sample_seed(config.seed, split, i);
      const Sample s = generate_sample(r.seed, r.family, config.height, config.width, config.jitter_frac);
      const std::string stem = std::string(split) + "_" + std::string(family_name(r.family)) + "_" + std::to_string(i);
      r.image_file = stem + ".ppm";
      r.mask_file = stem + ".pgm";
      r.box = s.coarse_box;
      write_ppm(config.out_dir / r.image_file, s.image);
      write_mask_pgm(config.out_dir / r.mask_file, s.gt_mask);
      r.image_digest = sha256_file(config.out_dir / r.image_file);
      r.mask_digest = sha256_file(config.out_dir / r.mask_file);
      ++manifest.family_counts[std::string(family_name(r.family))];
      manifest.records.push_back(std::move(r));
    }
  }

  json j;
  j["config"] = config_json(config);
  j["config_digest"] = manifest.config_digest;
  j["counts"] = manifest.family_counts;
  auto& recs = j["records"] = json::array();
  for (const auto& r : manifest.records) {
    recs.push_back({{"split", r.split},
                    {"family", family_name(r.family)},
                    {"index", r.index},
                    {"seed", r.seed},
                    {"image", r.image_file},
                    {"mask", r.mask_file},
                    {"box", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}},
                    {"image_digest", r.image_digest},
                    {"mask_digest", r.mask_digest}});
  }
  {
    std::ofstream out(config.out_dir / kManifestName, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write manifest in " + config.out_dir.string());
    out << j.dump(2) << '\n';
    require(static_cast<bool>(out), ErrorKind::Io, "manifest write failed");
  }
  verify_dataset(manifest);
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_or_dir) {
  std::filesystem::path path = manifest_or_dir;
  if (std::filesystem::is_directory(path)) path /= kManifestName;
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "corrupt manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.config_digest = j.at("config_digest").get<std::string>();
    m.family_counts = j.at("counts").get<std::map<std::string, int>>();
    m.height = j.at("config").at("height").get<int>();
    m.width = j.at("config").at("width").get<int>();
    for (const auto& r : j.at("records")) {
      DatasetRecord rec;
      rec.split = r.at("split").get<std::string>();
      rec.family = parse_family(r.at("family").get<std::string>());
      rec.index = r.at("index").get<int>();
      rec.seed = r.at("seed").get<std::uint64_t>();
      rec.image_file = r.at("image").get<std::string>();
      rec.mask_file = r.at("mask").get<std::string>();
      const auto box = r.at("box").get<std::vector<int>>();
      require(box.size() == 4, ErrorKind::Format, "manifest box must have 4 entries");
      rec.box = {box[0], box[1], box[2], box[3]};
      rec.image_digest = r.at("image_digest").get<std::string>();
      rec.mask_digest = r.at("mask_digest").get<std::string>();
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void verify_dataset(const DatasetManifest& manifest) {
  for (const auto& r : manifest.records) {
    for (const auto& [file, digest] : {std::pair{r.image_file, r.image_digest}, std::pair{r.mask_file, r.mask_digest}}) {
      const auto path = manifest.root / file;
      require(std::filesystem::exists(path), ErrorKind::Format, "dataset file missing: " + path.string());
      require(sha256_file(path) == digest, ErrorKind::Format, "digest mismatch: " + path.string());
    }
  }
}

LoadedSample load_sample(const DatasetManifest& manifest, const DatasetRecord& record) {
  LoadedSample s;
  s.image = read_ppm(manifest.root / record.image_file);
  s.gt_mask = read_mask_pgm(manifest.root / record.mask_file);
  require(s.image.height == s.gt_mask.height && s.image.width == s.gt_mask.width, ErrorKind::Format,
          "image/mask size mismatch for " + record.image_file);
  s.box = record.box;
  s.family = record.family;
  return s;
}

}  // namespace boxprompt::synth
