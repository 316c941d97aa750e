#include "exreg/regnet.hpp"

#include <cmath>
#include <stdexcept>

namespace exreg {

namespace {

constexpr Real kEvScale = Real(1.5);

AttentionBlock make_block(const std::string& name, std::size_t key_in, std::size_t value_in, std::size_t width,
                          std::size_t tokens, Rng& rng) {
  return AttentionBlock{make_mlp(name + ".key_query", {key_in, width, width}, rng),
                        make_mlp(name + ".value", {value_in, width, width}, rng),
                        make_dense(name + ".proj", width, tokens, rng), make_layer_norm(name + ".norm", tokens)};
}

FamNet make_fam(const std::string& name, std::size_t hidden, Rng& rng) {
  FamNet f{{make_conv(name + ".scale.0", 1, hidden, 1, 1, 0, rng), make_conv(name + ".scale.1", hidden, 1, 1, 1, 0, rng)},
           {make_conv(name + ".shift.0", 1, hidden, 1, 1, 0, rng), make_conv(name + ".shift.1", hidden, 1, 1, 1, 0, rng)}};
  // Identity adjustment at step zero: S = 1, B = 0.
  f.scale[1].weight.value.fill(0);
  f.scale[1].bias.value.fill(1);
  f.shift[1].weight.value.fill(0);
  // E* starts near zero; a positive bias keeps the hidden ReLUs active whatever its sign.
  f.scale[0].bias.value.fill(Real(0.1));
  f.shift[0].bias.value.fill(Real(0.1));
  return f;
}

void check_stack(const StackVars& stack) {
  if (stack.images.empty()) throw std::invalid_argument("regnet: empty exposure stack");
  if (stack.images.size() != stack.evs.size()) throw std::invalid_argument("regnet: stack EVs and images differ in count");
  const Shape& s0 = stack.images[0].shape();
  if (s0.size() != 4 || s0[0] != 1 || s0[1] != 3) {
    throw std::invalid_argument("regnet: stack images must be [1,3,H,W], got " + shape_str(s0));
  }
  for (const auto& im : stack.images) {
    if (im.shape() != s0) throw std::invalid_argument("regnet: stack images differ in size");
  }
  if (s0[2] % 16 != 0 || s0[3] % 16 != 0) {
    throw std::invalid_argument("regnet: image size " + std::to_string(s0[2]) + "x" + std::to_string(s0[3]) +
                                " is not divisible by 16");
  }
  if (stack.anchor >= stack.images.size()) throw std::invalid_argument("regnet: anchor index out of range");
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::vector<Tensor>* weights) {
  const std::size_t width = q.dim(1);
  const std::size_t dh = width / heads;
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Var kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Var vh = slice(v, 1, h * dh, (h + 1) * dh);
    const Var a = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    if (weights) weights->push_back(a.value());
    outs.push_back(matmul(a, vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

}  // namespace

void AttentionBlock::collect(ParamRefs& out) {
  key_query.collect(out);
  value.collect(out);
  proj.collect(out);
  norm.collect(out);
}
void AttentionBlock::collect(ConstParamRefs& out) const {
  key_query.collect(out);
  value.collect(out);
  proj.collect(out);
  norm.collect(out);
}

void FamNet::collect(ParamRefs& out) {
  for (auto& c : scale) c.collect(out);
  for (auto& c : shift) c.collect(out);
}
void FamNet::collect(ConstParamRefs& out) const {
  for (const auto& c : scale) c.collect(out);
  for (const auto& c : shift) c.collect(out);
}

Regnet Regnet::init(const RegnetConfig& cfg, std::size_t stack_size, std::uint64_t seed) {
  if (cfg.encoder_channels.size() != 4) throw std::invalid_argument("regnet: need 4 encoder widths");
  if (cfg.heads == 0 || cfg.attn_width % cfg.heads != 0) {
    throw std::invalid_argument("regnet: heads must divide the attention width");
  }
  if (stack_size == 0) throw std::invalid_argument("regnet: stack size must be >= 1");
  Rng rng(seed);
  Regnet r;
  r.cfg = cfg;
  r.stack_size = stack_size;
  const auto& ch = cfg.encoder_channels;
  std::size_t cin = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    r.encoder[i] = make_conv("regnet.encoder." + std::to_string(i), cin, ch[i], 4, 2, 1, rng);
    cin = ch[i];
  }
  cin = stack_size * 4;
  for (std::size_t i = 0; i < cfg.predictor_layers; ++i) {
    const std::size_t cout = i + 1 == cfg.predictor_layers ? 1 : cfg.predictor_width;
    r.predictor.push_back(make_conv("regnet.predictor." + std::to_string(i), cin, cout, 3, 1, 1, rng));
    cin = cout;
  }
  const std::size_t C = cfg.token_channels();
  r.block1 = make_block("regnet.block1", 3, C, cfg.attn_width, C, rng);
  r.block2 = make_block("regnet.block2", 3 + C, C, cfg.attn_width, C, rng);
  const std::size_t dec_out[4] = {ch[2], ch[1], ch[0], 3};
  cin = C;
  for (std::size_t i = 0; i < 4; ++i) {
    r.decoder[i] = make_transposed_conv("regnet.decoder." + std::to_string(i), cin, dec_out[i], 4, 2, 1, rng);
    cin = dec_out[i];
  }
  for (std::size_t i = 0; i < 4; ++i) r.fam[i] = make_fam("regnet.fam." + std::to_string(i), cfg.fam_hidden, rng);
  return r;
}

ParamRefs Regnet::parameters() {
  ParamRefs out;
  for (auto& c : encoder) c.collect(out);
  for (auto& c : predictor) c.collect(out);
  block1.collect(out);
  block2.collect(out);
  for (auto& c : decoder) c.collect(out);
  for (auto& f : fam) f.collect(out);
  return out;
}

ConstParamRefs Regnet::parameters() const {
  ConstParamRefs out;
  for (const auto& c : encoder) c.collect(out);
  for (const auto& c : predictor) c.collect(out);
  block1.collect(out);
  block2.collect(out);
  for (const auto& c : decoder) c.collect(out);
  for (const auto& f : fam) f.collect(out);
  return out;
}

Tensor token_coords(std::size_t grid) {
  Tensor t({grid * grid, 2});
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      t.at(i * grid + j, 0) = (static_cast<Real>(i) + Real(0.5)) / static_cast<Real>(grid);
      t.at(i * grid + j, 1) = (static_cast<Real>(j) + Real(0.5)) / static_cast<Real>(grid);
    }
  }
  return t;
}

Encoded encode(Tape& tape, const Regnet& net, const StackVars& stack) {
  check_stack(stack);
  const std::size_t K = stack.images.size();
  // All stack entries share the encoder, so run them as one batch.
  Var h = K == 1 ? stack.images[0] : concat(stack.images, 0);
  Encoded enc;
  for (std::size_t i = 0; i < 4; ++i) {
    h = net.encoder[i](tape, h);
    if (i < 3) h = relu(h);
    enc.enf[i] = K == 1 ? h : slice(h, 0, stack.anchor, stack.anchor + 1);
  }
  const std::size_t C = h.dim(1), G = h.dim(2);
  for (std::size_t k = 0; k < K; ++k) {
    const Var hk = K == 1 ? h : slice(h, 0, k, k + 1);
    enc.grids.push_back(TokenGrid{transpose(reshape(hk, {C, G * G})), stack.evs[k], G});
  }
  return enc;
}

Var predict_exposure(Tape& tape, const Regnet& net, const StackVars& stack) {
  check_stack(stack);
  if (stack.images.size() != net.stack_size) {
    throw std::invalid_argument("predict_exposure: network expects a stack of " + std::to_string(net.stack_size) +
                                ", got " + std::to_string(stack.images.size()));
  }
  const std::size_t H = stack.images[0].dim(2), W = stack.images[0].dim(3);
  std::vector<Var> channels;
  for (std::size_t k = 0; k < stack.images.size(); ++k) {
    channels.push_back(stack.images[k]);
    channels.push_back(tape.constant(Tensor({1, 1, H, W}, static_cast<Real>(stack.evs[k]) / kEvScale)));
  }
  Var h = concat(channels, 1);
  for (std::size_t i = 0; i < net.predictor.size(); ++i) {
    h = net.predictor[i](tape, h);
    if (i + 1 < net.predictor.size()) h = relu(h);
  }
  return scale(tanh(h), kEvScale);
}

Var pool_exposure(const Var& e_star, std::size_t grid) {
  const Shape& s = e_star.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1) {
    throw std::invalid_argument("pool_exposure: expected [1,1,H,W], got " + shape_str(s));
  }
  if (grid == 0 || s[2] % grid != 0 || s[3] % grid != 0 || s[2] / grid != s[3] / grid) {
    throw std::invalid_argument("pool_exposure: " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " map does not divide into a " + std::to_string(grid) + "x" + std::to_string(grid) +
                                " grid");
  }
  return reshape(avg_pool2d(e_star, static_cast<int>(s[2] / grid)), {grid, grid});
}

Var cross_attend(Tape& tape, const Regnet& net, const std::vector<TokenGrid>& grids, std::size_t anchor,
                 const Var& e_star_pooled, AttentionTrace* trace) {
  if (grids.empty()) throw std::invalid_argument("cross_attend: no context grids");
  if (anchor >= grids.size()) throw std::invalid_argument("cross_attend: anchor index out of range");
  const std::size_t G = grids[0].grid;
  const std::size_t C = grids[0].tokens.dim(1);
  for (const auto& g : grids) {
    if (g.grid != G || g.tokens.shape() != Shape{G * G, C}) {
      throw std::invalid_argument("cross_attend: context grids differ in shape");
    }
  }
  if (e_star_pooled.shape() != Shape{G, G}) {
    throw std::invalid_argument("cross_attend: pooled exposure must be [" + std::to_string(G) + "," +
                                std::to_string(G) + "], got " + shape_str(e_star_pooled.shape()));
  }
  if (C != net.cfg.token_channels()) throw std::invalid_argument("cross_attend: token width does not match network");

  const std::size_t T = G * G;
  const Tensor coords = token_coords(G);
  // Context keys: [i, j, e/1.5] per token of every grid.
  Tensor key_pos({grids.size() * T, 3});
  for (std::size_t k = 0; k < grids.size(); ++k) {
    for (std::size_t t = 0; t < T; ++t) {
      key_pos.at(k * T + t, 0) = coords.at(t, 0);
      key_pos.at(k * T + t, 1) = coords.at(t, 1);
      key_pos.at(k * T + t, 2) = static_cast<Real>(grids[k].ev) / kEvScale;
    }
  }
  const Var kpos = tape.constant(std::move(key_pos));
  const Var qpos = concat({tape.constant(coords), scale(reshape(e_star_pooled, {T, 1}), Real(1) / kEvScale)}, 1);
  std::vector<Var> token_list;
  for (const auto& g : grids) token_list.push_back(g.tokens);
  const Var f = grids.size() == 1 ? token_list[0] : concat(token_list, 0);

  const std::size_t heads = net.cfg.heads;
  // Block 1: positions only in keys and queries.
  const AttentionBlock& b1 = net.block1;
  const Var v1 = b1.value(tape, f);
  const Var att1 = multi_head_attention(b1.key_query(tape, qpos), b1.key_query(tape, kpos), v1, heads,
                                        trace ? &trace->block1_weights : nullptr);
  const Var f1 = b1.norm(tape, add(grids[anchor].tokens, b1.proj(tape, att1)));

  // Block 2: positions concatenated with features.
  const AttentionBlock& b2 = net.block2;
  const Var att2 = multi_head_attention(b2.key_query(tape, concat({qpos, f1}, 1)),
                                        b2.key_query(tape, concat({kpos, f}, 1)), b2.value(tape, f), heads,
                                        trace ? &trace->block2_weights : nullptr);
  const Var f2 = b2.norm(tape, add(f1, b2.proj(tape, att2)));

  if (trace) {
    trace->block1_values = v1.value();
    trace->block1_attended = att1.value();
    trace->block1_output = f1.value();
  }
  return reshape(f2, {G, G, C});
}

Var fam_adjust(Tape& tape, const FamNet& fam, const Var& enf, const Var& e_star) {
  if (enf.value().rank() != 4) throw std::invalid_argument("fam_adjust: features must be [N,C,H,W]");
  const Var e = bilinear_resize(e_star, enf.dim(2), enf.dim(3));
  const Var s = fam.scale[1](tape, relu(fam.scale[0](tape, e)));
  const Var b = fam.shift[1](tape, relu(fam.shift[0](tape, e)));
  return spatial_affine(enf, s, b);
}

RegnetOutput regnet_forward(Tape& tape, const Regnet& net, const StackVars& stack, AttentionTrace* trace) {
  const Encoded enc = encode(tape, net, stack);
  const Var e_star = predict_exposure(tape, net, stack);
  const std::size_t G = enc.grids[0].grid;
  const Var fstar = cross_attend(tape, net, enc.grids, stack.anchor, pool_exposure(e_star, G), trace);
  const std::size_t C = fstar.dim(2);
  Var h = reshape(transpose(reshape(fstar, {G * G, C})), {1, C, G, G});
  for (std::size_t i = 0; i < 4; ++i) {
    // Decoder layer i consumes the skip from encoder layer 3 - i.
    h = add(h, fam_adjust(tape, net.fam[3 - i], enc.enf[3 - i], e_star));
    h = net.decoder[i](tape, h);
    if (i < 3) h = relu(h);
  }
  return RegnetOutput{sigmoid(h), e_star};
}

StackVars stack_constants(Tape& tape, const ExposureStack& stack) {
  StackVars s;
  s.evs = stack.evs;
  for (const auto& im : stack.images) s.images.push_back(tape.constant(image_to_tensor(im)));
  s.anchor = stack.anchor();
  return s;
}

}  // namespace exreg
