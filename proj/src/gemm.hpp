#pragma once

#include <cstddef>

#include "exreg/tensor.hpp"

namespace exreg::detail {

// C[M,N] = beta*C + A'[M,K] * B'[K,N] on contiguous row-major buffers, where A' is A or A^T
// (A stored [K,M] when trans_a) and likewise for B.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real beta, Real* c);

}  // namespace exreg::detail
