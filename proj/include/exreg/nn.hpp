#pragma once

#include <string>
#include <vector>

#include "exreg/autodiff.hpp"
#include "exreg/ops.hpp"
#include "exreg/random.hpp"

namespace exreg {

using ParamRefs = std::vector<Parameter*>;
using ConstParamRefs = std::vector<const Parameter*>;

// Convolution with its own weight and bias. Transposed layers store weight as [Cin,Cout,k,k].
struct Conv {
  Parameter weight;
  Parameter bias;
  int stride = 1;
  int pad = 0;
  bool transposed = false;

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamRefs& out) { out.push_back(&weight), out.push_back(&bias); }
  void collect(ConstParamRefs& out) const { out.push_back(&weight), out.push_back(&bias); }
};

// y = x W + b with W [in,out].
struct Dense {
  Parameter weight;
  Parameter bias;

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamRefs& out) { out.push_back(&weight), out.push_back(&bias); }
  void collect(ConstParamRefs& out) const { out.push_back(&weight), out.push_back(&bias); }
};

// Stack of dense layers with ReLU between them; no activation after the last one.
struct Mlp {
  std::vector<Dense> layers;

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamRefs& out) {
    for (auto& l : layers) l.collect(out);
  }
  void collect(ConstParamRefs& out) const {
    for (const auto& l : layers) l.collect(out);
  }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamRefs& out) { out.push_back(&gain), out.push_back(&bias); }
  void collect(ConstParamRefs& out) const { out.push_back(&gain), out.push_back(&bias); }
};

// He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias.
Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, int stride, int pad,
               Rng& rng);
Conv make_transposed_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, int stride,
                          int pad, Rng& rng);
Dense make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
// widths = {in, hidden..., out}
Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng);
LayerNorm make_layer_norm(const std::string& name, std::size_t features);

std::size_t count_elements(const ConstParamRefs& params);
std::size_t count_elements(const ParamRefs& params);

}  // namespace exreg
