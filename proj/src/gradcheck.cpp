#include "exreg/gradcheck.hpp"

#include <cmath>
#include <deque>
#include <sstream>
#include <unordered_map>

#include "exreg/model.hpp"
#include "exreg/ops.hpp"

namespace exreg {

namespace {

struct Eval {
  double loss;
  std::vector<std::uint8_t> branches;
};

Eval evaluate(const LossBuilder& f) {
  Tape tape;
  tape.set_record_branches(true);
  const Var loss = f(tape);
  return Eval{static_cast<double>(loss.value()[0]), tape.branches()};
}

// Leaves owned by an op case for the duration of its check.
class Leaves {
 public:
  explicit Leaves(std::uint64_t seed) : rng_(seed) {}

  Parameter& uniform(const std::string& name, Shape shape, double lo = -1, double hi = 1) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<Real>(rng_.uniform(lo, hi));
    store_.emplace_back(name, std::move(t));
    return store_.back();
  }
  ParamRefs refs() {
    ParamRefs r;
    for (auto& p : store_) r.push_back(&p);
    return r;
  }
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  std::deque<Parameter> store_;
};

using CaseBody = std::function<Var(Tape&, const std::vector<Var>&)>;

OpCase make_case(std::string name, std::vector<std::pair<Shape, std::pair<double, double>>> inputs, CaseBody body,
                 bool project = true) {
  return OpCase{name, [name, inputs, body, project](const GradcheckOptions& opts) {
                  Leaves leaves(split_seed(opts.seed, name));
                  for (std::size_t i = 0; i < inputs.size(); ++i) {
                    leaves.uniform("x" + std::to_string(i), inputs[i].first, inputs[i].second.first,
                                   inputs[i].second.second);
                  }
                  const ParamRefs refs = leaves.refs();
                  const std::uint64_t proj_seed = split_seed(opts.seed, name + ".projection");
                  return gradcheck(
                      name, refs,
                      [&](Tape& t) {
                        std::vector<Var> xs;
                        for (auto* p : refs) xs.push_back(t.parameter(*p));
                        const Var y = body(t, xs);
                        return project ? random_projection(t, y, proj_seed) : y;
                      },
                      opts);
                }};
}

const std::pair<double, double> kSym{-1.0, 1.0};
const std::pair<double, double> kPos{0.2, 1.0};

}  // namespace

Var random_projection(Tape& tape, const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r(y.shape());
  for (auto& v : r.data()) v = static_cast<Real>(rng.uniform(-1, 1));
  return sum(mul(y, tape.constant(std::move(r))));
}

GradcheckReport gradcheck(const std::string& name, const ParamRefs& leaves, const LossBuilder& f,
                          const GradcheckOptions& opts) {
  GradcheckReport rep;
  rep.name = name;
  rep.tolerance = opts.tolerance;

  std::unordered_map<const Parameter*, Tensor> analytic;
  std::vector<std::uint8_t> signature;
  {
    Tape tape;
    tape.set_record_branches(true);
    const Var loss = f(tape);
    tape.backward(loss);
    for (auto& [p, g] : tape.parameter_grads()) analytic[p] = std::move(g);
    signature = tape.branches();
  }

  Rng pick(split_seed(opts.seed, name + ".elements"));
  for (Parameter* p : leaves) {
    auto it = analytic.find(p);
    const Tensor g = it == analytic.end() ? Tensor(p->value.shape()) : it->second;
    std::vector<std::size_t> elements(p->value.size());
    for (std::size_t i = 0; i < elements.size(); ++i) elements[i] = i;
    if (opts.max_elements && elements.size() > opts.max_elements) {
      pick.shuffle(elements.begin(), elements.end());
      elements.resize(opts.max_elements);
    }
    for (std::size_t e : elements) {
      const Real orig = p->value[e];
      bool done = false;
      double fd = 0;
      for (double h = opts.h; h >= opts.min_h * 0.999; h /= 10) {
        p->value[e] = static_cast<Real>(orig + h);
        const Eval plus = evaluate(f);
        p->value[e] = static_cast<Real>(orig - h);
        const Eval minus = evaluate(f);
        p->value[e] = orig;
        if (plus.branches != signature || minus.branches != signature) continue;
        fd = (plus.loss - minus.loss) / (2 * h);
        done = true;
        break;
      }
      p->value[e] = orig;
      if (!done) {
        ++rep.skipped;
        continue;
      }
      const double err = std::abs(static_cast<double>(g[e]) - fd) / (std::abs(fd) + opts.floor);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst.empty()) {
        if (err >= rep.max_rel_error) {
          rep.max_rel_error = err;
          rep.worst = p->name + "[" + std::to_string(e) + "]";
        }
      }
    }
  }
  return rep;
}

std::vector<OpCase> registered_op_cases() {
  std::vector<OpCase> c;
  c.push_back(make_case("conv2d 3x3 stride 1 pad 1", {{{2, 3, 5, 5}, kSym}, {{4, 3, 3, 3}, kSym}, {{4}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return conv2d(x[0], x[1], x[2], 1, 1); }));
  c.push_back(make_case("conv2d 4x4 stride 2 pad 1", {{{1, 2, 6, 6}, kSym}, {{3, 2, 4, 4}, kSym}, {{3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return conv2d(x[0], x[1], x[2], 2, 1); }));
  c.push_back(make_case("conv2d 1x1 no bias", {{{2, 3, 3, 4}, kSym}, {{2, 3, 1, 1}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return conv2d(x[0], x[1], Var(), 1, 0); }));
  c.push_back(make_case("transposed_conv2d 4x4 stride 2 pad 1",
                        {{{2, 3, 3, 3}, kSym}, {{3, 2, 4, 4}, kSym}, {{2}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return transposed_conv2d(x[0], x[1], x[2], 2, 1); }));
  c.push_back(make_case("transposed_conv2d 3x3 stride 1 pad 1", {{{1, 2, 4, 3}, kSym}, {{2, 3, 3, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return transposed_conv2d(x[0], x[1], Var(), 1, 1); }));
  c.push_back(make_case("avg_pool2d", {{{2, 2, 4, 6}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return avg_pool2d(x[0], 2); }));
  c.push_back(make_case("bilinear_resize up", {{{1, 2, 3, 4}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return bilinear_resize(x[0], 7, 5); }));
  c.push_back(make_case("bilinear_resize down", {{{1, 1, 8, 6}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return bilinear_resize(x[0], 3, 4); }));
  c.push_back(make_case("matmul", {{{3, 4}, kSym}, {{4, 5}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return matmul(x[0], x[1]); }));
  c.push_back(make_case("transpose", {{{3, 4}, kSym}}, [](Tape&, const std::vector<Var>& x) { return transpose(x[0]); }));
  c.push_back(make_case("add_bias", {{{3, 4}, kSym}, {{4}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return add_bias(x[0], x[1]); }));
  c.push_back(make_case("linear", {{{3, 4}, kSym}, {{4, 2}, kSym}, {{2}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return linear(x[0], x[1], x[2]); }));
  c.push_back(make_case("add", {{{2, 3}, kSym}, {{2, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return add(x[0], x[1]); }));
  c.push_back(make_case("sub", {{{2, 3}, kSym}, {{2, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return sub(x[0], x[1]); }));
  c.push_back(make_case("mul", {{{2, 3}, kSym}, {{2, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return mul(x[0], x[1]); }));
  c.push_back(make_case("scale", {{{2, 3}, kSym}}, [](Tape&, const std::vector<Var>& x) { return scale(x[0], 1.7); }));
  c.push_back(make_case("add_scalar", {{{2, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return add_scalar(x[0], -0.3); }));
  c.push_back(make_case("relu", {{{4, 5}, kSym}}, [](Tape&, const std::vector<Var>& x) { return relu(x[0]); }));
  c.push_back(make_case("sigmoid", {{{4, 5}, {-3, 3}}}, [](Tape&, const std::vector<Var>& x) { return sigmoid(x[0]); }));
  c.push_back(make_case("logit", {{{4, 5}, {-0.1, 1.1}}},
                        [](Tape&, const std::vector<Var>& x) { return logit(x[0], Real(0.01)); }));
  c.push_back(make_case("tanh", {{{4, 5}, {-2, 2}}}, [](Tape&, const std::vector<Var>& x) { return tanh(x[0]); }));
  c.push_back(make_case("reshape", {{{2, 6}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return reshape(x[0], {3, 4}); }));
  c.push_back(make_case("concat axis 0", {{{2, 3}, kSym}, {{1, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return concat({x[0], x[1]}, 0); }));
  c.push_back(make_case("concat axis 1", {{{2, 2, 3}, kSym}, {{2, 1, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return concat({x[0], x[1]}, 1); }));
  c.push_back(make_case("slice", {{{3, 5, 2}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return slice(x[0], 1, 1, 4); }));
  c.push_back(make_case("sum", {{{3, 4}, kSym}}, [](Tape&, const std::vector<Var>& x) { return sum(x[0]); }));
  c.push_back(make_case("mean_all", {{{3, 4}, kSym}}, [](Tape&, const std::vector<Var>& x) { return mean_all(x[0]); }));
  c.push_back(make_case("mean axis 1", {{{2, 3, 4}, kSym}}, [](Tape&, const std::vector<Var>& x) { return mean(x[0], 1); }));
  c.push_back(make_case("softmax axis 1", {{{3, 5}, {-2, 2}}},
                        [](Tape&, const std::vector<Var>& x) { return softmax(x[0], 1); }));
  c.push_back(make_case("softmax axis 0", {{{4, 3}, {-2, 2}}},
                        [](Tape&, const std::vector<Var>& x) { return softmax(x[0], 0); }));
  c.push_back(make_case("layer_norm", {{{3, 6}, kSym}, {{6}, kPos}, {{6}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return layer_norm(x[0], x[1], x[2]); }));
  c.push_back(make_case("channel_affine", {{{2, 3, 2, 2}, kSym}, {{2, 3}, kSym}, {{2, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return channel_affine(x[0], x[1], x[2]); }));
  c.push_back(make_case("spatial_affine", {{{2, 3, 2, 3}, kSym}, {{2, 1, 2, 3}, kSym}, {{2, 1, 2, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return spatial_affine(x[0], x[1], x[2]); }));
  c.push_back(make_case("l1_loss", {{{2, 3, 3}, kSym}, {{2, 3, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return l1_loss(x[0], x[1]); }, false));
  c.push_back(make_case("charbonnier_loss", {{{2, 3, 3}, kSym}, {{2, 3, 3}, kSym}},
                        [](Tape&, const std::vector<Var>& x) { return charbonnier_loss(x[0], x[1], 1e-3); }, false));
  return c;
}

GradcheckReport gradcheck_megnet_micro(const GradcheckOptions& opts) {
  const ModelConfig cfg = model_profile("micro");
  Megnet net = Megnet::init(cfg.megnet, split_seed(opts.seed, "megnet.micro"));
  // Move the modulation heads off their identity initialisation so every parameter matters.
  Rng rng(split_seed(opts.seed, "megnet.micro.heads"));
  for (auto& h : net.heads)
    for (auto& v : h.layers.back().weight.value.data()) v = static_cast<Real>(rng.uniform(-0.5, 0.5));
  Leaves leaves(split_seed(opts.seed, "megnet.micro.input"));
  Parameter& x = leaves.uniform("input", {2, 3, 8, 8}, 0.0, 1.0);
  ParamRefs refs = net.parameters();
  refs.push_back(&x);
  const std::uint64_t proj = split_seed(opts.seed, "megnet.micro.projection");
  return gradcheck("megnet micro 8x8", refs,
                   [&](Tape& t) { return random_projection(t, net.forward(t, t.parameter(x), {-1.0, 1.5}), proj); }, opts);
}

GradcheckReport gradcheck_regnet_micro(const GradcheckOptions& opts) {
  const ModelConfig cfg = model_profile("micro");
  Regnet net = Regnet::init(cfg.regnet, cfg.stack_evs.size() + 1, split_seed(opts.seed, "regnet.micro"));
  Rng rng(split_seed(opts.seed, "regnet.micro.fam"));
  for (auto& f : net.fam) {
    for (auto& v : f.scale[1].weight.value.data()) v = static_cast<Real>(rng.uniform(-0.5, 0.5));
    for (auto& v : f.shift[1].weight.value.data()) v = static_cast<Real>(rng.uniform(-0.5, 0.5));
  }
  Leaves leaves(split_seed(opts.seed, "regnet.micro.stack"));
  std::vector<double> evs = cfg.stack_evs;
  evs.push_back(0.0);
  std::sort(evs.begin(), evs.end());
  std::vector<Parameter*> images;
  for (std::size_t k = 0; k < evs.size(); ++k) images.push_back(&leaves.uniform("stack" + std::to_string(k), {1, 3, 16, 16}, 0.0, 1.0));
  ParamRefs refs = net.parameters();
  for (auto* p : images) refs.push_back(p);
  const std::uint64_t proj = split_seed(opts.seed, "regnet.micro.projection");
  return gradcheck("regnet micro 16x16", refs,
                   [&](Tape& t) {
                     StackVars s;
                     s.evs = evs;
                     for (auto* p : images) s.images.push_back(t.parameter(*p));
                     s.anchor = static_cast<std::size_t>(std::find(evs.begin(), evs.end(), 0.0) - evs.begin());
                     const RegnetOutput out = regnet_forward(t, net, s);
                     return add(random_projection(t, out.image, proj), random_projection(t, out.e_star, proj + 1));
                   },
                   opts);
}

std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckOptions& opts) {
  std::vector<GradcheckReport> out;
#ifndef EXREG_SINGLE_PRECISION
  for (const auto& c : registered_op_cases()) out.push_back(c.run(opts));
  out.push_back(gradcheck_megnet_micro(opts));
  out.push_back(gradcheck_regnet_micro(opts));
#else
  (void)opts;
#endif
  return out;
}

}  // namespace exreg
