#include "exreg/megnet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace exreg {

namespace {

constexpr Real kEvScale = Real(1.5);
constexpr Real kLogitEps = Real(1e-3);

void check_ev_set(const std::vector<double>& ev_set) {
  for (std::size_t i = 0; i < ev_set.size(); ++i) {
    if (ev_set[i] == 0) throw std::invalid_argument("generate_stack: ev_set must exclude 0 (the input occupies it)");
    if (!std::isfinite(ev_set[i])) throw std::invalid_argument("generate_stack: non-finite EV");
    for (std::size_t j = i + 1; j < ev_set.size(); ++j)
      if (ev_set[i] == ev_set[j]) throw std::invalid_argument("generate_stack: duplicate EV " + std::to_string(ev_set[i]));
  }
}

std::vector<double> with_zero_sorted(std::vector<double> evs) {
  evs.push_back(0.0);
  std::sort(evs.begin(), evs.end());
  return evs;
}

}  // namespace

std::size_t ExposureStack::anchor() const {
  for (std::size_t i = 0; i < evs.size(); ++i)
    if (evs[i] == 0) return i;
  throw std::logic_error("exposure stack has no 0-EV entry");
}

Var modulate(const Var& feature, const Var& alpha, const Var& beta) { return channel_affine(feature, alpha, beta); }

Megnet Megnet::init(const MegnetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Megnet m;
  m.cfg = cfg;
  std::size_t cin = 3;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    m.base.push_back(make_conv("megnet.base." + std::to_string(i), cin, cfg.width, 1, 1, 0, rng));
    cin = cfg.width;
  }
  m.to_rgb = make_conv("megnet.to_rgb", cfg.width, 3, 1, 1, 0, rng);
  // The output is a correction to the input's logit; start close to the identity.
  for (auto& v : m.to_rgb.weight.value.data()) v *= Real(0.01);
  m.to_rgb.bias.value.fill(Real(0));
  cin = 3;
  for (std::size_t i = 0; i < cfg.global_layers; ++i) {
    m.global.push_back(make_conv("megnet.global." + std::to_string(i), cin, cfg.global_width, 4, 2, 1, rng));
    cin = cfg.global_width;
  }
  std::vector<std::size_t> ev_widths{1};
  for (std::size_t i = 0; i < cfg.ev_layers; ++i) ev_widths.push_back(cfg.ev_width);
  m.ev_encoder = make_mlp("megnet.ev", ev_widths, rng);
  const std::size_t cond = cfg.global_width + cfg.ev_width;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    Mlp head = make_mlp("megnet.head." + std::to_string(i), {cond, cfg.head_hidden, 2 * cfg.width}, rng);
    // Identity modulation at step zero: alpha = 1, beta = 0.
    Dense& last = head.layers.back();
    last.weight.value.fill(0);
    for (std::size_t c = 0; c < cfg.width; ++c) last.bias.value[c] = 1;
    m.heads.push_back(std::move(head));
  }
  return m;
}

ParamRefs Megnet::parameters() {
  ParamRefs out;
  for (auto& c : base) c.collect(out);
  to_rgb.collect(out);
  for (auto& c : global) c.collect(out);
  ev_encoder.collect(out);
  for (auto& h : heads) h.collect(out);
  return out;
}

ConstParamRefs Megnet::parameters() const {
  ConstParamRefs out;
  for (const auto& c : base) c.collect(out);
  to_rgb.collect(out);
  for (const auto& c : global) c.collect(out);
  ev_encoder.collect(out);
  for (const auto& h : heads) h.collect(out);
  return out;
}

Var Megnet::condition(Tape& tape, const Var& x, const std::vector<double>& delta_ev) const {
  const std::size_t N = x.dim(0);
  if (delta_ev.size() != N) {
    throw std::invalid_argument("megnet: " + std::to_string(delta_ev.size()) + " EV shifts for a batch of " +
                                std::to_string(N));
  }
  Var g = bilinear_resize(x, cfg.global_size, cfg.global_size);
  for (const auto& conv : global) g = relu(conv(tape, g));
  g = mean(mean(g, 3), 2);  // [N, global_width]

  Tensor ev({N, 1});
  for (std::size_t n = 0; n < N; ++n) ev[n] = static_cast<Real>(delta_ev[n]) / kEvScale;
  const Var e = ev_encoder(tape, tape.constant(std::move(ev)));
  return concat({g, e}, 1);
}

Var Megnet::forward(Tape& tape, const Var& x, const std::vector<double>& delta_ev) const {
  if (x.value().rank() != 4 || x.dim(1) != 3) {
    throw std::invalid_argument("megnet: input must be [N,3,H,W], got " + shape_str(x.shape()));
  }
  const Var cond = condition(tape, x, delta_ev);
  Var h = x;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const Var ab = heads[i](tape, cond);
    const Var alpha = slice(ab, 1, 0, cfg.width);
    const Var beta = slice(ab, 1, cfg.width, 2 * cfg.width);
    h = relu(modulate(base[i](tape, h), alpha, beta));
  }
  return sigmoid(add(logit(x, kLogitEps), to_rgb(tape, h)));
}

Image megnet_forward(const Megnet& net, const Image& input, double delta_ev) {
  Tape tape;
  const Var y = net.forward(tape, tape.constant(image_to_tensor(input)), {delta_ev});
  return tensor_to_image(y.value(), input.space);
}

ExposureStack generate_stack(const Megnet& net, const Image& input, const std::vector<double>& ev_set) {
  check_ev_set(ev_set);
  Tape tape;
  const StackVars vars = generate_stack(tape, net, tape.constant(image_to_tensor(input)), ev_set);
  ExposureStack stack;
  stack.evs = vars.evs;
  for (std::size_t i = 0; i < vars.images.size(); ++i) {
    stack.images.push_back(i == vars.anchor ? input : tensor_to_image(vars.images[i].value(), input.space));
  }
  return stack;
}

StackVars generate_stack(Tape& tape, const Megnet& net, const Var& input, const std::vector<double>& ev_set) {
  check_ev_set(ev_set);
  StackVars stack;
  stack.evs = with_zero_sorted(ev_set);
  std::vector<double> shifts;
  for (double ev : stack.evs)
    if (ev != 0) shifts.push_back(ev);
  Var generated;
  if (!shifts.empty()) {
    std::vector<Var> copies(shifts.size(), input);
    generated = net.forward(tape, concat(copies, 0), shifts);
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < stack.evs.size(); ++i) {
    if (stack.evs[i] == 0) {
      stack.anchor = i;
      stack.images.push_back(input);
    } else {
      stack.images.push_back(slice(generated, 0, k, k + 1));
      ++k;
    }
  }
  return stack;
}

}  // namespace exreg
