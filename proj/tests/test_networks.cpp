#include <doctest.h>

#include <cmath>
#include <numeric>

#include "exreg/gradcheck.hpp"
#include "exreg/model.hpp"
#include "exreg/training.hpp"
#include "oracles.hpp"

using namespace exreg;

namespace {

// Random token grids of the regnet's token width, all on the same G x G layout.
std::vector<TokenGrid> random_grids(Tape& tape, Rng& rng, std::size_t count, std::size_t G, std::size_t C,
                                    const std::vector<double>& evs) {
  std::vector<TokenGrid> grids;
  for (std::size_t k = 0; k < count; ++k)
    grids.push_back({tape.constant(oracle::random_tensor(rng, {G * G, C})), evs[k], G});
  return grids;
}

Regnet small_regnet(std::uint64_t seed, std::size_t stack = 5) {
  RegnetConfig cfg = model_profile("micro").regnet;
  cfg.encoder_channels = {4, 4, 6, 8};
  cfg.attn_width = 16;
  cfg.heads = 4;
  return Regnet::init(cfg, stack, seed);
}

}  // namespace

TEST_SUITE("megnet") {
  TEST_CASE("modulation is the per-channel affine map") {
    Rng rng(31);
    const Tensor f = oracle::random_tensor(rng, {2, 3, 4, 5});
    const Tensor a = oracle::random_tensor(rng, {2, 3}), b = oracle::random_tensor(rng, {2, 3});
    Tape t;
    const Tensor out = modulate(t.constant(f), t.constant(a), t.constant(b)).value();
    double worst = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 5; ++x)
            worst = std::max(worst, (double)std::abs(out.at(n, c, y, x) - (a.at(n, c) * f.at(n, c, y, x) + b.at(n, c))));
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("untrained generator ignores the EV and emits valid images") {
    const Megnet net = Megnet::init(model_profile("desk").megnet, 3);
    Rng rng(32);
    const Image img = oracle::random_image(rng, 16, 16);
    const Image a = megnet_forward(net, img, -1.5), b = megnet_forward(net, img, 1.0);
    CHECK(a == b);
    CHECK(in_unit_range(a));
  }

  TEST_CASE("batched forward equals per-image forwards") {
    Megnet net = Megnet::init(model_profile("micro").megnet, 4);
    Rng rng(33);
    for (auto& h : net.heads)
      for (auto& v : h.layers.back().weight.value.data()) v = Real(rng.uniform(-0.5, 0.5));
    const Image a = oracle::random_image(rng, 8, 8), b = oracle::random_image(rng, 8, 8);
    Tape t;
    const Var x = concat({t.constant(image_to_tensor(a)), t.constant(image_to_tensor(b))}, 0);
    const Tensor both = net.forward(t, x, {-1.0, 1.5}).value();
    const Tensor ya = image_to_tensor(megnet_forward(net, a, -1.0));
    const Tensor yb = image_to_tensor(megnet_forward(net, b, 1.5));
    for (std::size_t i = 0; i < ya.size(); ++i) {
      CHECK(both[i] == doctest::Approx(ya[i]).epsilon(1e-12));
      CHECK(both[ya.size() + i] == doctest::Approx(yb[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("the condition vector is [global code | ev code]") {
    const MegnetConfig cfg = model_profile("desk").megnet;
    const Megnet net = Megnet::init(cfg, 5);
    Rng rng(34);
    Tape t;
    const Var x = t.constant(image_to_tensor(oracle::random_image(rng, 16, 16)));
    const Tensor c = net.condition(t, concat({x, x}, 0), {-1.0, 1.0}).value();
    REQUIRE(c.shape() == Shape{2, cfg.global_width + cfg.ev_width});
    for (std::size_t j = 0; j < cfg.global_width; ++j) CHECK(c.at(0, j) == c.at(1, j));
    bool ev_differs = false;
    for (std::size_t j = cfg.global_width; j < c.dim(1); ++j) ev_differs = ev_differs || c.at(0, j) != c.at(1, j);
    CHECK(ev_differs);
  }

  TEST_CASE("exposure stacks keep the input at 0 EV") {
    const Megnet net = Megnet::init(model_profile("micro").megnet, 6);
    Rng rng(35);
    const Image img = oracle::random_image(rng, 8, 8);
    const ExposureStack s = generate_stack(net, img, {1.5, -1.5, -1.0, 1.0});
    CHECK(s.evs == std::vector<double>{-1.5, -1.0, 0.0, 1.0, 1.5});
    CHECK(s.anchor() == 2);
    CHECK(s.images[2] == img);
    CHECK_THROWS_AS(generate_stack(net, img, {0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(generate_stack(net, img, {1.0, 1.0}), std::invalid_argument);
  }

  TEST_CASE("micro generator passes the finite-difference check") {
    const GradcheckReport r = gradcheck_megnet_micro({});
    INFO(r.worst << " " << r.max_rel_error);
    CHECK(r.passed());
  }
}

TEST_SUITE("regnet") {
  TEST_CASE("token coordinates are cell centres") {
    const Tensor c = token_coords(4);
    CHECK(c.shape() == Shape{16, 2});
    CHECK(c.at(0, 0) == 0.125);
    CHECK(c.at(6, 0) == 0.375);  // row i = 1
    CHECK(c.at(6, 1) == 0.625);  // column j = 2
  }

  TEST_CASE("attention rows sum to one in both blocks") {
    const Regnet net = small_regnet(41);
    Rng rng(41);
    Tape t;
    const auto grids = random_grids(t, rng, 5, 2, 8, {-1.5, -1, 0, 1, 1.5});
    const Var e = t.constant(oracle::random_tensor(rng, {2, 2}, -1.5, 1.5));
    AttentionTrace trace;
    cross_attend(t, net, grids, 2, e, &trace);
    REQUIRE(trace.block1_weights.size() == net.cfg.heads);
    REQUIRE(trace.block2_weights.size() == net.cfg.heads);
    for (const auto* ws : {&trace.block1_weights, &trace.block2_weights})
      for (const Tensor& w : *ws) {
        CHECK(w.shape() == Shape{4, 20});
        for (std::size_t q = 0; q < w.dim(0); ++q) {
          double s = 0;
          for (std::size_t k = 0; k < w.dim(1); ++k) s += w.at(q, k);
          CHECK(std::abs(s - 1) <= 1e-9);
        }
      }
  }

  TEST_CASE("a single context token is returned exactly") {
    const Regnet net = small_regnet(42, 1);
    Rng rng(42);
    Tape t;
    const auto grids = random_grids(t, rng, 1, 1, 8, {0.0});
    AttentionTrace trace;
    cross_attend(t, net, grids, 0, t.constant(Tensor::from({1, 1}, {0.7})), &trace);
    CHECK(trace.block1_attended == trace.block1_values);
    for (const Tensor& w : trace.block2_weights) CHECK(w[0] == 1.0);
  }

  TEST_CASE("cross-attention is invariant to the order of the stack") {
    const Regnet net = small_regnet(43);
    Rng rng(43);
    for (const std::vector<double>& evs : {std::vector<double>(5, 0.5), std::vector<double>{-1.5, -1, 0, 1, 1.5}}) {
      Tape t;
      const auto grids = random_grids(t, rng, 5, 2, 8, evs);
      const Var e = t.constant(oracle::random_tensor(rng, {2, 2}, -1.5, 1.5));
      const Tensor ref = cross_attend(t, net, grids, 2, e).value();
      const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
      std::vector<TokenGrid> shuffled;
      for (std::size_t p : perm) shuffled.push_back(grids[p]);
      const Tensor got = cross_attend(t, net, shuffled, 1, e).value();
      CHECK(oracle::max_abs_diff(ref, got) <= 1e-9);
    }
  }

  TEST_CASE("FAM is a spatial affine map of the features") {
    Regnet net = small_regnet(44);
    FamNet& fam = net.fam[0];
    Rng rng(44);
    // Constant maps: zero last-layer weights leave S and B equal to their biases.
    fam.scale[1].bias.value.fill(Real(1.7));
    fam.shift[1].bias.value.fill(Real(-0.3));
    Tape t;
    const Tensor enf = oracle::random_tensor(rng, {1, 4, 8, 8});
    const Var e = t.constant(oracle::random_tensor(rng, {1, 1, 16, 16}, -1.5, 1.5));
    const Tensor out = fam_adjust(t, fam, t.constant(enf), e).value();
    double worst = 0;
    for (std::size_t i = 0; i < enf.size(); ++i) worst = std::max(worst, std::abs(out[i] - (1.7 * enf[i] - 0.3)));
    CHECK(worst <= 1e-12);

    // Spatially varying maps: compare against the composition of the two sub-networks.
    for (auto* c : {&fam.scale[1], &fam.shift[1]})
      for (auto& v : c->weight.value.data()) v = Real(rng.uniform(-1, 1));
    const Var er = bilinear_resize(e, 8, 8);
    const Tensor S = fam.scale[1](t, relu(fam.scale[0](t, er))).value();
    const Tensor B = fam.shift[1](t, relu(fam.shift[0](t, er))).value();
    const Tensor got = fam_adjust(t, fam, t.constant(enf), e).value();
    worst = 0;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          worst = std::max(worst, (double)std::abs(got.at(0, c, y, x) - (S.at(0, 0, y, x) * enf.at(0, c, y, x) + B.at(0, 0, y, x))));
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("predicted exposure stays within 1.5 stops and pools by blocks") {
    Regnet net = small_regnet(45);
    Rng rng(45);
    for (auto& v : net.predictor.back().weight.value.data()) v *= 50;  // push tanh into saturation
    ExposureStack s;
    s.evs = {-1.5, -1, 0, 1, 1.5};
    for (int k = 0; k < 5; ++k) s.images.push_back(oracle::random_image(rng, 16, 16));
    Tape t;
    const Var e = predict_exposure(t, net, stack_constants(t, s));
    CHECK(e.shape() == Shape{1, 1, 16, 16});
    CHECK(e.value().max_abs() <= 1.5);
    const Tensor pooled = pool_exposure(e, 2).value();
    double m = 0;
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 8; x < 16; ++x) m += e.value().at(0, 0, y, x) / 64;
    CHECK(pooled.at(0, 1) == doctest::Approx(m).epsilon(1e-12));
  }

  TEST_CASE("forward pass shapes and input validation") {
    const Regnet net = small_regnet(46);
    Rng rng(46);
    ExposureStack s;
    s.evs = {-1.5, -1, 0, 1, 1.5};
    for (int k = 0; k < 5; ++k) s.images.push_back(oracle::random_image(rng, 32, 32));
    Tape t;
    const RegnetOutput out = regnet_forward(t, net, stack_constants(t, s));
    CHECK(out.image.shape() == Shape{1, 3, 32, 32});
    CHECK(out.e_star.shape() == Shape{1, 1, 32, 32});
    CHECK(in_unit_range(tensor_to_image(out.image.value())));

    ExposureStack bad = s;
    bad.images[1] = oracle::random_image(rng, 24, 24);
    CHECK_THROWS_AS(regnet_forward(t, net, stack_constants(t, bad)), std::invalid_argument);
    ExposureStack odd = s;
    for (auto& im : odd.images) im = oracle::random_image(rng, 24, 24);
    CHECK_THROWS_AS(regnet_forward(t, net, stack_constants(t, odd)), std::invalid_argument);
  }

  TEST_CASE("after one optimizer step every regnet parameter receives gradient") {
    ModelConfig mc = model_profile("micro");
    ExregModel m = ExregModel::init(mc, 47);
    Rng rng(47);
    const Image input = oracle::random_image(rng, 16, 16), target = oracle::random_image(rng, 16, 16);
    ParamRefs params = m.regnet.parameters();
    AdamState adam;
    for (int step = 0; step < 2; ++step) {
      Tape t;
      const RegnetOutput out = regnet_forward(t, m.regnet, stack_constants(t, generate_stack(m.megnet, input, mc.stack_evs)));
      t.backward(charbonnier_loss(out.image, t.constant(image_to_tensor(target)), Real(1e-3)));
      std::unordered_map<const Parameter*, Tensor> grads;
      for (auto& [p, g] : t.parameter_grads()) grads[p] = g;
      std::vector<Tensor> gs;
      for (auto* p : params) gs.push_back(grads.count(p) ? grads[p] : Tensor(p->value.shape()));
      if (step == 1) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          INFO(params[i]->name);
          CHECK(gs[i].max_abs() > 0);
        }
      }
      adam_step(params, gs, adam, {});
    }
  }

  TEST_CASE("micro regressor passes the finite-difference check") {
    const GradcheckReport r = gradcheck_regnet_micro({});
    INFO(r.worst << " " << r.max_rel_error);
    CHECK(r.passed());
  }
}
