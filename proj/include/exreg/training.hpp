#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exreg/dataset.hpp"
#include "exreg/model.hpp"

namespace exreg {

// ---- losses on images ----------------------------------------------------------------------

double l1_loss(const Image& out, const Image& target);
double charbonnier_loss(const Image& out, const Image& target, double eps = 1e-3);

// ---- optimiser -----------------------------------------------------------------------------

struct AdamMoments {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;  // updates applied to this parameter
};

struct AdamState {
  std::map<std::string, AdamMoments> moments;  // keyed by parameter name
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Throws std::runtime_error naming the parameter if a gradient is not finite;
// in that case no parameter is modified.
void adam_step(const ParamRefs& params, const std::vector<Tensor>& grads, AdamState& state, const AdamOptions& opt);

// Rescales grads in place so their joint L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

// ---- checkpoints ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ExregModel model;
  AdamState adam;
  std::uint64_t step = 0;
  std::vector<std::string> stages;  // completed stages, in order
  KeyValues train_config;           // snapshot of the last stage's settings

  bool has_stage(const std::string& s) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- training ------------------------------------------------------------------------------

enum class Stage { megnet, regnet, cotrain };
const char* stage_name(Stage s);
Stage parse_stage(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::megnet;
  std::size_t batch_size = 16;
  std::size_t patch_size = 32;
  std::size_t epochs = 30;
  std::size_t passes_per_epoch = 1;  // patches drawn per training scene per epoch
  AdamOptions adam;
  std::uint64_t seed = 0;
  double charbonnier_epsilon = 1e-3;
  double clip_norm = 5.0;
  std::size_t val_every = 1;  // epochs between validations
  double val_fraction = 0.1;
  std::size_t max_val_scenes = 0;  // 0: all validation scenes
  std::vector<double> delta_set = kDefaultEvSet;
  std::size_t threads = 1;

  // Desk-scale defaults for a stage.
  static TrainConfig defaults(Stage stage);
  KeyValues to_key_values() const;
  void validate() const;
};

struct TrainLogRow {
  std::uint64_t step = 0;
  std::string stage;
  double loss = 0;
  double val_psnr = 0;  // NaN when no validation ran
};

// Scene ids whose hash lands in the validation fraction.
bool is_validation_scene(const std::string& scene_id, double fraction);

struct TrainOutcome {
  Checkpoint best;  // best validation PSNR (the last one when no validation ran)
  std::vector<TrainLogRow> log;
};

using TrainProgress = std::function<void(const TrainLogRow&)>;

// Runs one stage. `init` is required for regnet and cotrain and must already contain a trained
// megnet; otherwise the model is created from `model_cfg`.
TrainOutcome train(const TrainConfig& cfg, const std::vector<SceneRecord>& scenes, const std::optional<Checkpoint>& init,
                   const ModelConfig& model_cfg = {}, const TrainProgress& progress = {});

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& csv, bool append);

// Mean generation PSNR of the 0-EV rendition re-rendered at each delta in `deltas` (targets missing
// from a scene are skipped). Returns one value per delta.
std::vector<double> megnet_generation_psnr(const Megnet& net, const std::vector<SceneRecord>& scenes,
                                           const std::vector<double>& deltas, std::size_t threads = 1);
// Mean PSNR of corrected renditions against ground truth over every rendition of every scene.
double correction_psnr(const ExregModel& model, const std::vector<SceneRecord>& scenes, std::size_t threads = 1);

}  // namespace exreg
