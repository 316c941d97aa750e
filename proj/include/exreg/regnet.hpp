#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "exreg/config.hpp"
#include "exreg/megnet.hpp"
#include "exreg/nn.hpp"

namespace exreg {

// Key/query embedding, value embedding, output projection and the residual layer norm of one
// multi-head cross-attention block.
struct AttentionBlock {
  Mlp key_query;  // shared by keys and queries
  Mlp value;
  Dense proj;
  LayerNorm norm;

  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;
};

// Two 1x1 convolution nets mapping the resized exposure map to a scale map and a shift map.
struct FamNet {
  std::array<Conv, 2> scale;
  std::array<Conv, 2> shift;

  void collect(ParamRefs& out);
  void collect(ConstParamRefs& out) const;
};

struct Regnet {
  RegnetConfig cfg;
  std::size_t stack_size = 5;
  std::array<Conv, 4> encoder;
  std::vector<Conv> predictor;
  AttentionBlock block1;
  AttentionBlock block2;
  std::array<Conv, 4> decoder;
  std::array<FamNet, 4> fam;  // fam[n] adjusts encoder feature n

  static Regnet init(const RegnetConfig& cfg, std::size_t stack_size, std::uint64_t seed);

  ParamRefs parameters();
  ConstParamRefs parameters() const;
};

// Tokens of one stack entry: G*G rows of token features, row r = i*G + j.
struct TokenGrid {
  Var tokens;  // [G*G, C]
  double ev = 0;
  std::size_t grid = 0;
};

// Cell-centre coordinates ((i+0.5)/G, (j+0.5)/G) as a [G*G, 2] tensor. Depends only on G.
Tensor token_coords(std::size_t grid);

struct Encoded {
  std::vector<TokenGrid> grids;  // one per stack entry
  std::array<Var, 4> enf;        // encoder features of the 0-EV entry, finest first
};

Encoded encode(Tape& tape, const Regnet& net, const StackVars& stack);
// Full-resolution exposure map [1,1,H,W] in [-1.5, 1.5].
Var predict_exposure(Tape& tape, const Regnet& net, const StackVars& stack);
// Block means of a [1,1,H,W] map, returned as [G,G].
Var pool_exposure(const Var& e_star, std::size_t grid);

struct AttentionTrace {
  std::vector<Tensor> block1_weights;  // per head, [queries, context]
  std::vector<Tensor> block2_weights;
  Tensor block1_values;    // value embeddings of the context tokens
  Tensor block1_attended;  // concatenated head outputs before projection and residual
  Tensor block1_output;    // f'
};

// Two-block cross-attention from the query grid (coords, pooled e*) to all context tokens. The
// residual of block 1 is the token grid of stack entry `anchor`. Returns f* as [G,G,C].
Var cross_attend(Tape& tape, const Regnet& net, const std::vector<TokenGrid>& grids, std::size_t anchor,
                 const Var& e_star_pooled, AttentionTrace* trace = nullptr);

// S(E) * enf + B(E) with E bilinearly resized to enf's spatial size.
Var fam_adjust(Tape& tape, const FamNet& fam, const Var& enf, const Var& e_star);

struct RegnetOutput {
  Var image;   // [1,3,H,W]
  Var e_star;  // [1,1,H,W]
};

RegnetOutput regnet_forward(Tape& tape, const Regnet& net, const StackVars& stack, AttentionTrace* trace = nullptr);

// Constant-input conveniences.
StackVars stack_constants(Tape& tape, const ExposureStack& stack);

}  // namespace exreg
