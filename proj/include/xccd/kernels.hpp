#pragma once

#include <cstddef>

namespace xccd::kern {

// Dense double-precision kernels behind the toy backend's hot loops.
// Each kernel has a serial reference implementation and an OpenMP variant
// that parallelizes over output rows. A thread computes a full output row
// with the same inner summation order as the serial code, so the two
// variants agree bitwise; tests assert exact equality and tools/bench_kernels
// compares their throughput.

namespace serial {

// C[M x N] = A[M x K] * B[K x N], row-major, C overwritten.
void matmul(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
            std::size_t n);

// C[M x N] = A[M x K] * B^T, with B stored [N x K].
void matmul_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n);

// C[M x N] = A^T * B, with A stored [K x M], B stored [K x N].
void matmul_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n);

// In-place row-wise softmax with max subtraction, [rows x cols].
void softmax_rows(double* x, std::size_t rows, std::size_t cols);

}  // namespace serial

namespace par {

void matmul(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n);
void matmul_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n);
void softmax_rows(double* x, std::size_t rows, std::size_t cols);

}  // namespace par

// Dispatching entry points: use the OpenMP variant when the problem is large
// enough to amortize the fork, otherwise the serial reference.
void matmul(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n);
void matmul_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n);
void softmax_rows(double* x, std::size_t rows, std::size_t cols);

}  // namespace xccd::kern
