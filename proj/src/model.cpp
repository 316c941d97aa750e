#include "exreg/model.hpp"

namespace exreg {

ExregModel ExregModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return ExregModel{cfg, Megnet::init(cfg.megnet, split_seed(seed, "megnet")),
                    Regnet::init(cfg.regnet, cfg.stack_evs.size() + 1, split_seed(seed, "regnet"))};
}

ParamRefs ExregModel::parameters() {
  ParamRefs out = megnet.parameters();
  for (auto* p : regnet.parameters()) out.push_back(p);
  return out;
}

ConstParamRefs ExregModel::parameters() const {
  ConstParamRefs out = megnet.parameters();
  for (const auto* p : regnet.parameters()) out.push_back(p);
  return out;
}

Correction correct_image(const ExregModel& model, const Image& input) {
  Correction c;
  c.stack = generate_stack(model.megnet, input, model.cfg.stack_evs);
  Tape tape;
  const RegnetOutput out = regnet_forward(tape, model.regnet, stack_constants(tape, c.stack));
  c.image = tensor_to_image(out.image.value(), input.space);
  c.exposure = out.e_star.value().reshaped({input.height, input.width});
  return c;
}

Correction correct_image_resized(const ExregModel& model, const Image& input) {
  const std::size_t S = model.cfg.image_size;
  if (input.height == S && input.width == S) return correct_image(model, input);
  Correction c = correct_image(model, resize_bilinear(input, S, S));
  c.image = resize_bilinear(c.image, input.height, input.width);
  Tape tape;
  const Var e = bilinear_resize(tape.constant(c.exposure.reshaped({1, 1, S, S})), input.height, input.width);
  c.exposure = e.value().reshaped({input.height, input.width});
  return c;
}

}  // namespace exreg
