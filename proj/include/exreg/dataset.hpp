#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exreg/image.hpp"
#include "exreg/random.hpp"

namespace exreg {

// Default relative exposures of the renditions and of the generator's training offsets.
inline const std::vector<double> kDefaultEvSet{-1.5, -1.0, 0.0, 1.0, 1.5};

// Re-expose a linear image by delta_ev stops: gain 2^delta_ev, clip to [0,1], sRGB-encode.
Image render_ev(const Image& base, double delta_ev);

// ---- manifests ------------------------------------------------------------------------------

enum class Split { train, test };
const char* split_name(Split s);

struct ManifestEntry {
  std::string scene_id;
  std::string role;  // "gt" or "input"
  double relative_ev = 0;
  std::string path;  // relative to the manifest root
};

struct DatasetManifest {
  std::filesystem::path root;
  Split split = Split::train;
  std::vector<ManifestEntry> entries;  // sorted by scene_id, gt first, then ascending ev
};

// Line format: scene_id<TAB>role<TAB>relative_ev<TAB>path; '#' lines are comments.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

struct Rendition {
  double relative_ev = 0;
  Image image;
};

struct SceneRecord {
  std::string scene_id;
  Image ground_truth;
  std::vector<Rendition> renditions;  // ascending relative_ev

  const Rendition* find(double ev) const;
};

// Decodes every referenced image. Throws if a file is missing or the manifest is inconsistent.
std::vector<SceneRecord> load_scenes(const DatasetManifest& m);

// ---- synthesis ------------------------------------------------------------------------------

struct SynthesisOptions {
  std::size_t n_scenes = 200;
  std::size_t image_size = 64;
  std::vector<double> ev_set = kDefaultEvSet;
  std::uint64_t seed = 0;
  double test_fraction = 0.1;
  // Peak magnitude, in stops, of the smooth local exposure field applied to the renditions but not
  // to the ground truth. Zero makes the 0-EV rendition identical to the ground truth.
  double illumination_stops = 0.75;
  int bit_depth = 8;
  std::size_t threads = 1;
};

struct LatentScene {
  Image reflectance;  // linear; the correctly exposed scene
  Image as_shot;      // linear; reflectance under the local exposure field
};

LatentScene make_latent_scene(std::uint64_t seed, std::size_t size, double illumination_stops);

struct SynthesizedDataset {
  DatasetManifest train;
  DatasetManifest test;
};

// Writes images/ plus train.tsv and test.tsv under out_dir. Deterministic in the options.
SynthesizedDataset synthesize_dataset(const SynthesisOptions& opts, const std::filesystem::path& out_dir);

// ---- patch sampling -------------------------------------------------------------------------

enum class PairMode { megnet, regnet };

struct PatchPair {
  Image input;
  Image target;
  double delta_ev = 0;  // target EV minus input EV (regnet: the nominal correction)
  double input_ev = 0;
  std::size_t scene = 0;
};

class PatchSampler {
 public:
  PatchSampler(const std::vector<SceneRecord>& scenes, PairMode mode, std::size_t patch_size, std::uint64_t seed,
               std::vector<double> delta_set = kDefaultEvSet);

  PatchPair draw(std::size_t scene_index);
  std::vector<PatchPair> next_batch(std::size_t batch);

  const std::vector<double>& delta_set() const { return delta_set_; }

 private:
  const std::vector<SceneRecord>& scenes_;
  PairMode mode_;
  std::size_t patch_size_;
  std::vector<double> delta_set_;
  Rng rng_;
};

std::vector<PatchPair> sample_patch_pairs(const std::vector<SceneRecord>& scenes, std::size_t patch_size,
                                          std::size_t batch, std::uint64_t seed, PairMode mode);

// Formats an EV the shortest way that parses back to the same double.
std::string format_ev(double ev);

}  // namespace exreg
