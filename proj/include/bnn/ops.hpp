#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

// Deterministic sign binarization: +1 where x > 0, -1 otherwise
// (zero maps to -1).
BinaryTensor binarize(const RealTensor& x);

// Exact signed dot product of two packed rows of equal length. Computed as
// len - 2 * popcount(a XOR b); canonical zero padding makes the XOR of the
// pad region vanish, so no masking is needed.
std::int32_t packed_dot(std::span<const std::uint64_t> a,
                        std::span<const std::uint64_t> b, std::size_t len);

// h[n] = sum_k w[n,k] * x[k] for w: [out,in], x: [in], all elements +-1.
IntTensor binary_matmul(const BinaryTensor& w, const BinaryTensor& x);

// Batched variant: x holds one packed row per sample, out is [batch,out].
IntTensor binary_matmul_batch(const BinaryTensor& w, const BinaryTensor& x);

// First-layer matrix product: +-1 weights against integer inputs in [0,z].
IntTensor int_matmul(const BinaryTensor& w, const IntTensor& x, int z);

// Valid (no padding) stride-1 cross-correlation of +-1 tensors.
// w: [F,C,Kh,Kw], x: [C,H,W] -> [F,U,V] with U=H-Kh+1, V=W-Kw+1.
IntTensor binary_conv2d(const BinaryTensor& w, const BinaryTensor& x);

// First-layer convolution: +-1 weights, integer inputs in [0,z].
IntTensor int_conv2d_first_layer(const BinaryTensor& w, const IntTensor& x,
                                 int z);

// 2x2 non-overlapping max pool over the trailing two dimensions of a
// [C,H,W] (or [H,W]) tensor. Odd extents: strict mode rejects, otherwise
// the trailing row/column is dropped. Output extents must stay >= 1.
IntTensor maxpool2(const IntTensor& x, bool strict = false);
RealTensor maxpool2(const RealTensor& x, bool strict = false);

// Pooling with the argmax map needed for backward routing. argmax holds,
// per output element, the flat input index that won (ties: lowest index).
struct PoolResult {
  RealTensor pooled;
  std::vector<std::size_t> argmax;
  Shape input_shape;
};
PoolResult maxpool2_with_argmax(const RealTensor& x, bool strict = false);
RealTensor maxpool2_backward(const PoolResult& fwd, const RealTensor& dpooled);

// Dense double matrix kernels used by the training path. A, B, C are
// rank-2 row-major tensors.
//   gemm_nt: C[m,n] = A[m,k] * B[n,k]^T
//   gemm_nn: C[m,n] = A[m,k] * B[k,n]
//   gemm_tn: C[k,n] += A[m,k]^T * B[m,n]   (accumulating)
RealTensor gemm_nt(const RealTensor& a, const RealTensor& b);
RealTensor gemm_nn(const RealTensor& a, const RealTensor& b);
void gemm_tn_acc(const RealTensor& a, const RealTensor& b, RealTensor& c);

// Decode packed +-1 weights into doubles, row-major [rows, row_len].
RealTensor decode_signs(const BinaryTensor& w);

}  // namespace bnn
