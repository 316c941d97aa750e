#include <cmath>
#include <numeric>
#include <algorithm>
#include <stdexcept>
#include <string>

#include "exreg/ops.hpp"
#include "gemm.hpp"


namespace exreg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    for (std::size_t i = 0; i < std::min(a.shape().size(), b.shape().size()); ++i) {
      if (a.shape()[i] != b.shape()[i]) {
        throw std::invalid_argument(std::string(op) + ": dim " + std::to_string(i) + " differs (" +
                                    std::to_string(a.shape()[i]) + " vs " + std::to_string(b.shape()[i]) +
                                    "), shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
      }
    }
    throw std::invalid_argument(std::string(op) + ": rank differs, shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
}

void require_axis(const char* op, const Var& x, std::size_t axis) {
  require(axis < x.value().rank(), std::string(op) + ": axis " + std::to_string(axis) +
                                       " out of range for rank " + std::to_string(x.value().rank()));
}

// outer * n * inner decomposition around `axis`
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class F, class G>
Var unary(const Var& x, const char* op, F forward, G derivative) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = forward(X[i]);
  return x.tape()->record(
      std::move(out), {x},
      [x, derivative](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& X = x.value();
        Tensor& dx = t.grad_buffer(x.id());
        for (std::size_t i = 0; i < X.size(); ++i) dx[i] += g[i] * derivative(X[i]);
      },
      op);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && B.rank() == 2, "matmul: operands must be rank 2, got " + shape_str(A.shape()) +
                                              " and " + shape_str(B.shape()));
  const std::size_t M = A.dim(0), K = A.dim(1), N = B.dim(1);
  require(B.dim(0) == K, "matmul: lhs dim 1 = " + std::to_string(K) + " does not match rhs dim 0 = " +
                             std::to_string(B.dim(0)));
  Tensor out({M, N});
  detail::gemm(false, false, M, N, K, A.ptr(), B.ptr(), 0, out.ptr());
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b, M, N, K](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) {
          detail::gemm(false, true, M, K, N, g.ptr(), b.value().ptr(), 1, t.grad_buffer(a.id()).ptr());
        }
        if (b.requires_grad()) {
          detail::gemm(true, false, K, N, M, a.value().ptr(), g.ptr(), 1, t.grad_buffer(b.id()).ptr());
        }
      },
      "matmul");
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  require(A.rank() == 2, "transpose: operand must be rank 2, got " + shape_str(A.shape()));
  const std::size_t R = A.dim(0), C = A.dim(1);
  Tensor out({C, R});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[j * R + i] = A[i * C + j];
  return a.tape()->record(
      std::move(out), {a},
      [a, R, C](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& da = t.grad_buffer(a.id());
        for (std::size_t i = 0; i < R; ++i)
          for (std::size_t j = 0; j < C; ++j) da[i * C + j] += g[j * R + i];
      },
      "transpose");
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const std::size_t F = bias.value().size();
  require(X.rank() >= 1 && X.shape().back() == F, "add_bias: last dim of " + shape_str(X.shape()) +
                                                       " does not match bias length " + std::to_string(F));
  Tensor out = X;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % F];
  return x.tape()->record(
      std::move(out), {x, bias},
      [x, bias, F](Tape& t, const Tensor&, const Tensor& g) {
        if (x.requires_grad()) {
          Tensor& dx = t.grad_buffer(x.id());
          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        }
        if (bias.requires_grad()) {
          Tensor& db = t.grad_buffer(bias.id());
          for (std::size_t i = 0; i < g.size(); ++i) db[i % F] += g[i];
        }
      },
      "add_bias");
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_bias(matmul(x, weight), bias); }

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor&, const Tensor& g) {
        for (const Var* v : {&a, &b}) {
          if (!v->requires_grad()) continue;
          Tensor& d = t.grad_buffer(v->id());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) {
          Tensor& d = t.grad_buffer(a.id());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (b.requires_grad()) {
          Tensor& d = t.grad_buffer(b.id());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor&, const Tensor& g) {
        if (a.requires_grad()) {
          Tensor& d = t.grad_buffer(a.id());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b.value()[i];
        }
        if (b.requires_grad()) {
          Tensor& d = t.grad_buffer(b.id());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a.value()[i];
        }
      },
      "mul");
}

Var scale(const Var& a, Real s) {
  return unary(a, "scale", [s](Real v) { return v * s; }, [s](Real) { return s; });
}

Var add_scalar(const Var& a, Real s) {
  return unary(a, "add_scalar", [s](Real v) { return v + s; }, [](Real) { return Real(1); });
}

Var relu(const Var& x) {
  Tape* tape = x.tape();
  if (tape->record_branches()) {
    for (auto v : x.value().data()) tape->branches().push_back(v > 0 ? 1 : 0);
  }
  return unary(x, "relu", [](Real v) { return v > 0 ? v : Real(0); },
               [](Real v) { return v > 0 ? Real(1) : Real(0); });
}

Var logit(const Var& x, Real eps) {
  if (!(eps > 0 && eps < Real(0.5))) throw std::invalid_argument("logit: eps must be in (0, 0.5)");
  const Real lo = eps, hi = 1 - eps;
  Tape* tape = x.tape();
  if (tape->record_branches()) {
    for (auto v : x.value().data()) tape->branches().push_back(v < lo ? 0 : v > hi ? 2 : 1);
  }
  return unary(
      x, "logit",
      [lo, hi](Real v) {
        const Real c = std::clamp(v, lo, hi);
        return std::log(c / (1 - c));
      },
      [lo, hi](Real v) { return v < lo || v > hi ? Real(0) : 1 / (v * (1 - v)); });
}

Var sigmoid(const Var& x) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = Real(1) / (Real(1) + std::exp(-X[i]));
  return x.tape()->record(
      std::move(out), {x},
      [x](Tape& t, const Tensor& y, const Tensor& g) {
        Tensor& dx = t.grad_buffer(x.id());
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * y[i] * (1 - y[i]);
      },
      "sigmoid");
}

Var tanh(const Var& x) {
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::tanh(X[i]);
  return x.tape()->record(
      std::move(out), {x},
      [x](Tape& t, const Tensor& y, const Tensor& g) {
        Tensor& dx = t.grad_buffer(x.id());
        for (std::size_t i = 0; i < y.size(); ++i) dx[i] += g[i] * (1 - y[i] * y[i]);
      },
      "tanh");
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape()->record(
      std::move(out), {x},
      [x](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& dx = t.grad_buffer(x.id());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      },
      "reshape");
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: no inputs");
  require_axis("concat", xs[0], axis);
  Shape shape = xs[0].shape();
  std::size_t total = 0;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    require(s.size() == shape.size(), "concat: rank mismatch " + shape_str(s) + " vs " + shape_str(shape));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != shape[i]) {
        throw std::invalid_argument("concat: dim " + std::to_string(i) + " differs (" + std::to_string(s[i]) +
                                    " vs " + std::to_string(shape[i]) + ")");
      }
    }
    total += s[axis];
  }
  shape[axis] = total;
  Tensor out(shape);
  const AxisSplit outs = split_at(shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& v : xs) {
    offsets.push_back(off);
    const std::size_t n = v.shape()[axis];
    const Real* src = v.value().ptr();
    for (std::size_t o = 0; o < outs.outer; ++o) {
      std::copy(src + o * n * outs.inner, src + (o + 1) * n * outs.inner,
                out.ptr() + (o * outs.n + off) * outs.inner);
    }
    off += n;
  }
  return xs[0].tape()->record(
      std::move(out), xs,
      [xs, offsets, outs, axis](Tape& t, const Tensor&, const Tensor& g) {
        for (std::size_t k = 0; k < xs.size(); ++k) {
          if (!xs[k].requires_grad()) continue;
          const std::size_t n = xs[k].shape()[axis];
          Tensor& d = t.grad_buffer(xs[k].id());
          for (std::size_t o = 0; o < outs.outer; ++o) {
            const Real* src = g.ptr() + (o * outs.n + offsets[k]) * outs.inner;
            Real* dst = d.ptr() + o * n * outs.inner;
            for (std::size_t i = 0; i < n * outs.inner; ++i) dst[i] += src[i];
          }
        }
      },
      "concat");
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", x, axis);
  const Shape& s = x.shape();
  require(begin < end && end <= s[axis], "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                             ") invalid for dim " + std::to_string(axis) + " of size " +
                                             std::to_string(s[axis]));
  const AxisSplit in = split_at(s, axis);
  Shape shape = s;
  shape[axis] = end - begin;
  const std::size_t n = end - begin;
  Tensor out(shape);
  for (std::size_t o = 0; o < in.outer; ++o) {
    const Real* src = x.value().ptr() + (o * in.n + begin) * in.inner;
    std::copy(src, src + n * in.inner, out.ptr() + o * n * in.inner);
  }
  return x.tape()->record(
      std::move(out), {x},
      [x, in, begin, n](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& d = t.grad_buffer(x.id());
        for (std::size_t o = 0; o < in.outer; ++o) {
          Real* dst = d.ptr() + (o * in.n + begin) * in.inner;
          const Real* src = g.ptr() + o * n * in.inner;
          for (std::size_t i = 0; i < n * in.inner; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

Var sum(const Var& x) {
  Real s = 0;
  for (auto v : x.value().data()) s += v;
  return x.tape()->record(
      Tensor::scalar(s), {x},
      [x](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& d = t.grad_buffer(x.id());
        for (auto& v : d.data()) v += g[0];
      },
      "sum");
}

Var mean_all(const Var& x) {
  const auto n = static_cast<Real>(x.value().size());
  require(n > 0, "mean_all: empty tensor");
  return scale(sum(x), Real(1) / n);
}

Var mean(const Var& x, std::size_t axis) {
  require_axis("mean", x, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape shape;
  for (std::size_t i = 0; i < x.shape().size(); ++i)
    if (i != axis) shape.push_back(x.shape()[i]);
  if (shape.empty()) shape.push_back(1);
  Tensor out(shape);
  const Real inv = Real(1) / static_cast<Real>(sp.n);
  const Real* src = x.value().ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.n; ++k) {
      const Real* row = src + (o * sp.n + k) * sp.inner;
      Real* dst = out.ptr() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  for (auto& v : out.data()) v *= inv;
  return x.tape()->record(
      std::move(out), {x},
      [x, sp, inv](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& d = t.grad_buffer(x.id());
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t k = 0; k < sp.n; ++k) {
            Real* row = d.ptr() + (o * sp.n + k) * sp.inner;
            const Real* src = g.ptr() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) row[i] += src[i] * inv;
          }
        }
      },
      "mean");
}

Var softmax(const Var& x, std::size_t axis) {
  require_axis("softmax", x, axis);
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out(x.shape());
  const Real* X = x.value().ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      Real m = X[base];
      for (std::size_t k = 1; k < sp.n; ++k) m = std::max(m, X[base + k * sp.inner]);
      Real z = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const Real e = std::exp(X[base + k * sp.inner] - m);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  }
  return x.tape()->record(
      std::move(out), {x},
      [x, sp](Tape& t, const Tensor& Y, const Tensor& g) {
        Tensor& d = t.grad_buffer(x.id());
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            Real dot = 0;
            for (std::size_t k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * Y[base + k * sp.inner];
            for (std::size_t k = 0; k < sp.n; ++k) {
              const std::size_t idx = base + k * sp.inner;
              d[idx] += Y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, Real eps) {
  const Tensor& X = x.value();
  require(X.rank() >= 1, "layer_norm: scalar input");
  const std::size_t F = X.shape().back();
  require(gain.value().size() == F, "layer_norm: gain length " + std::to_string(gain.value().size()) +
                                        " does not match last dim " + std::to_string(F));
  require(bias.value().size() == F, "layer_norm: bias length " + std::to_string(bias.value().size()) +
                                        " does not match last dim " + std::to_string(F));
  const std::size_t rows = X.size() / F;
  Tensor out(X.shape());
  Tensor xhat(X.shape());
  std::vector<Real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = X.ptr() + r * F;
    Real mu = 0;
    for (std::size_t i = 0; i < F; ++i) mu += row[i];
    mu /= static_cast<Real>(F);
    Real var = 0;
    for (std::size_t i = 0; i < F; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<Real>(F);
    rstd[r] = Real(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < F; ++i) {
      const Real h = (row[i] - mu) * rstd[r];
      xhat[r * F + i] = h;
      out[r * F + i] = h * gain.value()[i] + bias.value()[i];
    }
  }
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), rows, F](Tape& t, const Tensor&, const Tensor& g) {
        if (gain.requires_grad()) {
          Tensor& dg = t.grad_buffer(gain.id());
          for (std::size_t i = 0; i < g.size(); ++i) dg[i % F] += g[i] * xhat[i];
        }
        if (bias.requires_grad()) {
          Tensor& db = t.grad_buffer(bias.id());
          for (std::size_t i = 0; i < g.size(); ++i) db[i % F] += g[i];
        }
        if (x.requires_grad()) {
          Tensor& dx = t.grad_buffer(x.id());
          const Tensor& G = gain.value();
          for (std::size_t r = 0; r < rows; ++r) {
            Real m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < F; ++i) {
              const Real dh = g[r * F + i] * G[i];
              m1 += dh;
              m2 += dh * xhat[r * F + i];
            }
            m1 /= static_cast<Real>(F);
            m2 /= static_cast<Real>(F);
            for (std::size_t i = 0; i < F; ++i) {
              const Real dh = g[r * F + i] * G[i];
              dx[r * F + i] += rstd[r] * (dh - m1 - xhat[r * F + i] * m2);
            }
          }
        }
      },
      "layer_norm");
}

}  // namespace exreg
