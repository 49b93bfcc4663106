#pragma once

#include <cstddef>

// Raw dense kernels over row-major buffers. All gemm variants accumulate into C.
namespace cre::kernels {

// C[m, n] += A[m, k] * B[k, n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C[m, n] += A[k, m]^T * B[k, n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C[m, n] += A[m, k] * B[n, k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

// Unfolds an image [C, H, W] into columns [C * kh * kw, out_h * out_w]; padding reads as zero.
void im2col(const double* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w,
            double* cols);
// Adjoint of im2col: accumulates columns back into the image.
void col2im(const double* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w,
            double* image);

}  // namespace cre::kernels
