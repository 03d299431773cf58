#ifndef SELFTUNE_DUALOPS_HPP
#define SELFTUNE_DUALOPS_HPP

#include "selftune/tensor.hpp"

namespace selftune {
namespace dualops {

// Elementwise and matrix kernels over DualTensors.  Every kernel applies
// the exact forward-mode product/chain rule to the tangent channel and
// never materialises a tangent when no operand carries one, so plain
// tensors stay plain (and bitwise-identical to an all-zero-tangent run).

DualTensor add(const DualTensor& a, const DualTensor& b);
DualTensor sub(const DualTensor& a, const DualTensor& b);
DualTensor mul(const DualTensor& a, const DualTensor& b);

// s * a where the scalar itself may carry a tangent.
DualTensor scale(const DualTensor& a, DualScalar s);

// a + s * b, the workhorse of optimizer updates.
DualTensor axpy(const DualTensor& a, DualScalar s, const DualTensor& b);

// Matrix product with optional transposes; a is [m,k] (or [k,m] if ta),
// b is [k,n] (or [n,k] if tb).
DualTensor matmul(const DualTensor& a, const DualTensor& b, bool ta = false,
                  bool tb = false);

// dst += src, growing a tangent channel on dst only if src has one.
void accumulate(DualTensor& dst, const DualTensor& src);

// Plain-value GEMM used by kernels that have already split channels.
Tensor gemm(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false);

// Global L2 norm over the value channels of a parameter list.
double global_norm(const std::vector<DualTensor>& grads);

}  // namespace dualops
}  // namespace selftune

#endif
