#pragma once

#include <cstdint>
#include <vector>

#include "exreg/config.hpp"
#include "exreg/image.hpp"
#include "exreg/nn.hpp"

namespace exreg {

// Images of one scene at ascending relative EVs; the entry at EV 0 is the untouched input.
struct ExposureStack {
  std::vector<double> evs;
  std::vector<Image> images;

  std::size_t size() const { return evs.size(); }
  std::size_t anchor() const;  // index of the 0-EV entry
};

// Differentiable counterpart used while training through the generator.
struct StackVars {
  std::vector<double> evs;
  std::vector<Var> images;  // each [1,3,H,W]
  std::size_t anchor = 0;
};

// Conditional multi-exposure generator. A pointwise base path of 1x1 convolutions whose features are
// re-scaled per channel by (alpha, beta) predicted from a global image code and the requested EV shift.
struct Megnet {
  MegnetConfig cfg;
  std::vector<Conv> base;
  Conv to_rgb;
  std::vector<Conv> global;
  Mlp ev_encoder;
  std::vector<Mlp> heads;  // one per base layer, emitting [alpha | beta]

  static Megnet init(const MegnetConfig& cfg, std::uint64_t seed);

  ParamRefs parameters();
  ConstParamRefs parameters() const;

  // x [N,3,H,W] in [0,1]; one EV shift per batch entry. Returns [N,3,H,W] through a sigmoid.
  Var forward(Tape& tape, const Var& x, const std::vector<double>& delta_ev) const;
  // Conditioning vector [N, global_width + ev_width] = [global code | ev code].
  Var condition(Tape& tape, const Var& x, const std::vector<double>& delta_ev) const;
};

// out[n,c,h,w] = alpha[n,c] * f[n,c,h,w] + beta[n,c]
Var modulate(const Var& feature, const Var& alpha, const Var& beta);

Image megnet_forward(const Megnet& net, const Image& input, double delta_ev);

// Generates one image per entry of ev_set and inserts the input at 0. ev_set must not contain 0 or
// duplicates.
ExposureStack generate_stack(const Megnet& net, const Image& input, const std::vector<double>& ev_set);
StackVars generate_stack(Tape& tape, const Megnet& net, const Var& input, const std::vector<double>& ev_set);

}  // namespace exreg
