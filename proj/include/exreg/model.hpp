#pragma once

#include <cstdint>

#include "exreg/config.hpp"
#include "exreg/image.hpp"
#include "exreg/megnet.hpp"
#include "exreg/regnet.hpp"

namespace exreg {

// The full corrector: MEGNet builds the exposure stack, RegNet regresses the corrected image.
struct ExregModel {
  ModelConfig cfg;
  Megnet megnet;
  Regnet regnet;

  static ExregModel init(const ModelConfig& cfg, std::uint64_t seed);

  ParamRefs parameters();
  ConstParamRefs parameters() const;
};

struct Correction {
  Image image;
  Tensor exposure;  // [H,W] in stops
  ExposureStack stack;
};

// Runs the pipeline at the input's own resolution (must be divisible by 16).
Correction correct_image(const ExregModel& model, const Image& input);

// Resizes to the model's native size, corrects, and resizes the result back.
Correction correct_image_resized(const ExregModel& model, const Image& input);

}  // namespace exreg
