#include "exreg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace exreg {

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

Var Conv::operator()(Tape& tape, const Var& x) const {
  const Var w = tape.parameter(weight);
  const Var b = tape.parameter(bias);
  return transposed ? transposed_conv2d(x, w, b, stride, pad) : conv2d(x, w, b, stride, pad);
}

Var Dense::operator()(Tape& tape, const Var& x) const {
  return linear(x, tape.parameter(weight), tape.parameter(bias));
}

Var Mlp::operator()(Tape& tape, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](tape, h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return layer_norm(x, tape.parameter(gain), tape.parameter(bias));
}

Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, int stride, int pad,
               Rng& rng) {
  Conv c;
  c.weight = Parameter(name + ".weight", he_uniform({cout, cin, k, k}, cin * k * k, rng));
  c.bias = Parameter(name + ".bias", Tensor({cout}));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Conv make_transposed_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, int stride,
                          int pad, Rng& rng) {
  Conv c;
  // Each output pixel sees about cin*k*k/stride^2 inputs.
  const std::size_t fan_in = std::max<std::size_t>(1, cin * k * k / static_cast<std::size_t>(stride * stride));
  c.weight = Parameter(name + ".weight", he_uniform({cin, cout, k, k}, fan_in, rng));
  c.bias = Parameter(name + ".bias", Tensor({cout}));
  c.stride = stride;
  c.pad = pad;
  c.transposed = true;
  return c;
}

Dense make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Dense d;
  d.weight = Parameter(name + ".weight", he_uniform({in, out}, in, rng));
  d.bias = Parameter(name + ".bias", Tensor({out}));
  return d;
}

Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    m.layers.push_back(make_dense(name + "." + std::to_string(i), widths[i], widths[i + 1], rng));
  }
  return m;
}

LayerNorm make_layer_norm(const std::string& name, std::size_t features) {
  return LayerNorm{Parameter(name + ".gain", Tensor({features}, Real(1))), Parameter(name + ".bias", Tensor({features}))};
}

std::size_t count_elements(const ConstParamRefs& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

std::size_t count_elements(const ParamRefs& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

}  // namespace exreg
