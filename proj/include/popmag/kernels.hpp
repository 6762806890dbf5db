#pragma once

#include "popmag/tensor.hpp"

// Dense numeric kernels behind the model. Every kernel exists twice: a plain
// serial reference in kernels::serial and an OpenMP row-parallel variant in
// kernels::parallel. The parallel variants partition independent output rows
// only, so for any thread count they produce bit-identical results to the
// serial reference; the test suite asserts exact equality and
// tools/bench_kernels compares their throughput.
//
// The unqualified wrappers dispatch on the process-wide thread setting
// (default 1, keeping training single-threaded and deterministic).
namespace popmag::kernels {

void set_threads(int n);  // n >= 1
int threads();

namespace serial {
// C[m x n] = A[m x k] * B[k x n]
void matmul(Tensor& C, const Tensor& A, const Tensor& B);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(Tensor& C, const Tensor& A, const Tensor& B);
// C[k x n] += A[m x k]^T * B[m x n]  (accumulating: used for weight grads)
void matmul_tn_acc(Tensor& C, const Tensor& A, const Tensor& B);
// Row-wise softmax in place.
void softmax_rows(Tensor& X);
// y = (x - mean) / sqrt(var + eps) per row; stores 1/sqrt(var+eps) in inv_std.
void layernorm_rows(Tensor& Y, Tensor& inv_std, const Tensor& X, double eps);
// Elementwise exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
void gelu(Tensor& Y, const Tensor& X);
// dX = dY * gelu'(X)
void gelu_backward(Tensor& dX, const Tensor& dY, const Tensor& X);
}  // namespace serial

namespace parallel {
void matmul(Tensor& C, const Tensor& A, const Tensor& B);
void matmul_nt(Tensor& C, const Tensor& A, const Tensor& B);
void matmul_tn_acc(Tensor& C, const Tensor& A, const Tensor& B);
void softmax_rows(Tensor& X);
void layernorm_rows(Tensor& Y, Tensor& inv_std, const Tensor& X, double eps);
void gelu(Tensor& Y, const Tensor& X);
void gelu_backward(Tensor& dX, const Tensor& dY, const Tensor& X);
}  // namespace parallel

void matmul(Tensor& C, const Tensor& A, const Tensor& B);
void matmul_nt(Tensor& C, const Tensor& A, const Tensor& B);
void matmul_tn_acc(Tensor& C, const Tensor& A, const Tensor& B);
void softmax_rows(Tensor& X);
void layernorm_rows(Tensor& Y, Tensor& inv_std, const Tensor& X, double eps);
void gelu(Tensor& Y, const Tensor& X);
void gelu_backward(Tensor& dX, const Tensor& dY, const Tensor& X);

}  // namespace popmag::kernels
