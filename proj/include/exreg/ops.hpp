#pragma once

#include <vector>

#include "exreg/autodiff.hpp"

// Differentiable ops. Every op records itself on the tape of its inputs when any input requires a
// gradient, and otherwise only computes the forward value. Shape errors throw std::invalid_argument.
namespace exreg {

// ---- convolution family, NCHW --------------------------------------------------------------

// Cross-correlation. weight [K,C,kh,kw]; bias [K] or an invalid Var for none.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
// Adjoint of conv2d with respect to its input. weight [Cin,Cout,kh,kw]; output spatial size
// (H-1)*stride - 2*padding + kh.
Var transposed_conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
// Non-overlapping k x k mean pooling.
Var avg_pool2d(const Var& x, int k);
// Bilinear resampling with corner alignment; resizing to the source size is the identity.
Var bilinear_resize(const Var& x, std::size_t height, std::size_t width);

// ---- matrices ------------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);  // [M,K] x [K,N]
Var transpose(const Var& a);             // 2-D only
// x [..., F] + bias [F]
Var add_bias(const Var& x, const Var& bias);
// x [T,in] * weight [in,out] + bias [out]
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- elementwise ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var add_scalar(const Var& a, Real s);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
// log(c / (1 - c)) with c = x clamped to [eps, 1 - eps]; zero gradient where clamped.
Var logit(const Var& x, Real eps);

// ---- shape and reductions ------------------------------------------------------------------

Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& xs, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var sum(const Var& x);        // -> [1]
Var mean_all(const Var& x);   // -> [1]
Var mean(const Var& x, std::size_t axis);  // removes `axis`
Var softmax(const Var& x, std::size_t axis);
// Normalises over the last axis; gain and bias have the size of that axis.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, Real eps = Real(1e-5));

// ---- modulation ----------------------------------------------------------------------------

// out[n,c,h,w] = alpha[n,c] * x[n,c,h,w] + beta[n,c]
Var channel_affine(const Var& x, const Var& alpha, const Var& beta);
// out[n,c,h,w] = scale[n,0,h,w] * x[n,c,h,w] + shift[n,0,h,w]
Var spatial_affine(const Var& x, const Var& scale_map, const Var& shift_map);

// ---- losses (means over all elements) ------------------------------------------------------

Var l1_loss(const Var& out, const Var& target);
Var charbonnier_loss(const Var& out, const Var& target, Real eps);

}  // namespace exreg
