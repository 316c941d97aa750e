#include "gemm.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace exreg::detail {

namespace {
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;
using AlignedMap = Eigen::Map<Mat, Eigen::Aligned64>;
using ConstAlignedMap = Eigen::Map<const Mat, Eigen::Aligned64>;
using Buffer = std::vector<Real, Eigen::aligned_allocator<Real>>;

// Eigen peels vector loops according to the address of each operand, which changes the summation
// order. Staging through aligned buffers makes results depend only on the values and shapes.
const Real* staged(Buffer& buf, const Real* src, std::size_t n) {
  buf.resize(std::max<std::size_t>(n, 1));
  std::copy(src, src + n, buf.data());
  return buf.data();
}
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real beta, Real* c) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap C(c, M, N);
  if (beta == Real(0)) C.setZero();
  else if (beta != Real(1)) C *= beta;
  if (m == 0 || n == 0 || k == 0) return;
  thread_local Buffer abuf, bbuf, cbuf;
  const Real* ap = staged(abuf, a, m * k);
  const Real* bp = staged(bbuf, b, k * n);
  cbuf.assign(m * n, Real(0));
  AlignedMap P(cbuf.data(), M, N);
  if (!trans_a && !trans_b) {
    P.noalias() = ConstAlignedMap(ap, M, K) * ConstAlignedMap(bp, K, N);
  } else if (trans_a && !trans_b) {
    P.noalias() = ConstAlignedMap(ap, K, M).transpose() * ConstAlignedMap(bp, K, N);
  } else if (!trans_a && trans_b) {
    P.noalias() = ConstAlignedMap(ap, M, K) * ConstAlignedMap(bp, N, K).transpose();
  } else {
    P.noalias() = ConstAlignedMap(ap, K, M).transpose() * ConstAlignedMap(bp, N, K).transpose();
  }
  for (std::size_t i = 0; i < m * n; ++i) c[i] += cbuf[i];
}

}  // namespace exreg::detail
