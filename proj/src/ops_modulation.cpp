#include <cmath>
#include <stdexcept>
#include <string>

#include "exreg/ops.hpp"

namespace exreg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Var channel_affine(const Var& x, const Var& alpha, const Var& beta) {
  const Tensor& X = x.value();
  require(X.rank() == 4, "channel_affine: feature must be rank 4 [N,C,H,W], got " + shape_str(X.shape()));
  const std::size_t N = X.dim(0), C = X.dim(1), P = X.dim(2) * X.dim(3);
  for (const Var* v : {&alpha, &beta}) {
    const Shape& s = v->shape();
    require(s.size() == 2, "channel_affine: modulation must be rank 2 [N,C], got " + shape_str(s));
    require(s[0] == N, "channel_affine: modulation dim 0 = " + std::to_string(s[0]) + " does not match batch " +
                           std::to_string(N));
    require(s[1] == C, "channel_affine: modulation dim 1 = " + std::to_string(s[1]) +
                           " does not match feature channels " + std::to_string(C));
  }
  Tensor out(X.shape());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const Real a = alpha.value()[nc], b = beta.value()[nc];
    const Real* src = X.ptr() + nc * P;
    Real* dst = out.ptr() + nc * P;
    for (std::size_t i = 0; i < P; ++i) dst[i] = a * src[i] + b;
  }
  return x.tape()->record(
      std::move(out), {x, alpha, beta},
      [x, alpha, beta, N, C, P](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& X = x.value();
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          const Real* gp = g.ptr() + nc * P;
          const Real* xp = X.ptr() + nc * P;
          if (x.requires_grad()) {
            const Real a = alpha.value()[nc];
            Real* dx = t.grad_buffer(x.id()).ptr() + nc * P;
            for (std::size_t i = 0; i < P; ++i) dx[i] += a * gp[i];
          }
          if (alpha.requires_grad()) {
            Real s = 0;
            for (std::size_t i = 0; i < P; ++i) s += gp[i] * xp[i];
            t.grad_buffer(alpha.id())[nc] += s;
          }
          if (beta.requires_grad()) {
            Real s = 0;
            for (std::size_t i = 0; i < P; ++i) s += gp[i];
            t.grad_buffer(beta.id())[nc] += s;
          }
        }
      },
      "channel_affine");
}

Var spatial_affine(const Var& x, const Var& scale_map, const Var& shift_map) {
  const Tensor& X = x.value();
  require(X.rank() == 4, "spatial_affine: feature must be rank 4 [N,C,H,W], got " + shape_str(X.shape()));
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3), P = H * W;
  for (const Var* v : {&scale_map, &shift_map}) {
    const Shape& s = v->shape();
    require(s.size() == 4 && s[1] == 1, "spatial_affine: map must be [N,1,H,W], got " + shape_str(s));
    require(s[0] == N, "spatial_affine: map dim 0 = " + std::to_string(s[0]) + " does not match batch " +
                           std::to_string(N));
    require(s[2] == H, "spatial_affine: map dim 2 (height) = " + std::to_string(s[2]) +
                           " does not match feature height " + std::to_string(H));
    require(s[3] == W, "spatial_affine: map dim 3 (width) = " + std::to_string(s[3]) +
                           " does not match feature width " + std::to_string(W));
  }
  Tensor out(X.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const Real* sp = scale_map.value().ptr() + n * P;
    const Real* bp = shift_map.value().ptr() + n * P;
    for (std::size_t c = 0; c < C; ++c) {
      const Real* src = X.ptr() + (n * C + c) * P;
      Real* dst = out.ptr() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] = sp[i] * src[i] + bp[i];
    }
  }
  return x.tape()->record(
      std::move(out), {x, scale_map, shift_map},
      [x, scale_map, shift_map, N, C, P](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& X = x.value();
        for (std::size_t n = 0; n < N; ++n) {
          const Real* sp = scale_map.value().ptr() + n * P;
          for (std::size_t c = 0; c < C; ++c) {
            const Real* gp = g.ptr() + (n * C + c) * P;
            const Real* xp = X.ptr() + (n * C + c) * P;
            if (x.requires_grad()) {
              Real* dx = t.grad_buffer(x.id()).ptr() + (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) dx[i] += sp[i] * gp[i];
            }
            if (scale_map.requires_grad()) {
              Real* ds = t.grad_buffer(scale_map.id()).ptr() + n * P;
              for (std::size_t i = 0; i < P; ++i) ds[i] += gp[i] * xp[i];
            }
            if (shift_map.requires_grad()) {
              Real* db = t.grad_buffer(shift_map.id()).ptr() + n * P;
              for (std::size_t i = 0; i < P; ++i) db[i] += gp[i];
            }
          }
        }
      },
      "spatial_affine");
}

Var l1_loss(const Var& out, const Var& target) {
  if (out.shape() != target.shape()) {
    throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(out.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  const Tensor& O = out.value();
  const Tensor& T = target.value();
  Tape* tape = out.tape();
  Real s = 0;
  for (std::size_t i = 0; i < O.size(); ++i) {
    const Real r = O[i] - T[i];
    s += std::abs(r);
    if (tape->record_branches()) tape->branches().push_back(r > 0 ? 2 : (r < 0 ? 0 : 1));
  }
  const Real inv = Real(1) / static_cast<Real>(O.size());
  return tape->record(
      Tensor::scalar(s * inv), {out, target},
      [out, target, inv](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& O = out.value();
        const Tensor& T = target.value();
        for (const Var* v : {&out, &target}) {
          if (!v->requires_grad()) continue;
          const Real sign = v == &out ? Real(1) : Real(-1);
          Tensor& d = t.grad_buffer(v->id());
          for (std::size_t i = 0; i < O.size(); ++i) {
            const Real r = O[i] - T[i];
            const Real sg = r > 0 ? Real(1) : (r < 0 ? Real(-1) : Real(0));
            d[i] += sign * sg * g[0] * inv;
          }
        }
      },
      "l1_loss");
}

Var charbonnier_loss(const Var& out, const Var& target, Real eps) {
  if (out.shape() != target.shape()) {
    throw std::invalid_argument("charbonnier_loss: shape mismatch " + shape_str(out.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  if (!(eps > 0)) throw std::invalid_argument("charbonnier_loss: eps must be > 0");
  const Tensor& O = out.value();
  const Tensor& T = target.value();
  const Real eps2 = eps * eps;
  Real s = 0;
  for (std::size_t i = 0; i < O.size(); ++i) {
    const Real r = O[i] - T[i];
    s += std::sqrt(r * r + eps2);
  }
  const Real inv = Real(1) / static_cast<Real>(O.size());
  return out.tape()->record(
      Tensor::scalar(s * inv), {out, target},
      [out, target, inv, eps2](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& O = out.value();
        const Tensor& T = target.value();
        for (const Var* v : {&out, &target}) {
          if (!v->requires_grad()) continue;
          const Real sign = v == &out ? Real(1) : Real(-1);
          Tensor& d = t.grad_buffer(v->id());
          for (std::size_t i = 0; i < O.size(); ++i) {
            const Real r = O[i] - T[i];
            d[i] += sign * g[0] * inv * r / std::sqrt(r * r + eps2);
          }
        }
      },
      "charbonnier_loss");
}

}  // namespace exreg
