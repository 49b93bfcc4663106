#include "cre/kernels.hpp"

#include <vector>

namespace cre::kernels {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, bt.data(), c, m, k, n);
}

void im2col(const double* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w,
            double* cols) {
  const std::size_t hw = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = cols + ((c * kh + ki) * kw + kj) * hw;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long r = static_cast<long>(oh * stride + ki) - static_cast<long>(padding);
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const long q = static_cast<long>(ow * stride + kj) - static_cast<long>(padding);
            const bool inside = r >= 0 && r < static_cast<long>(height) && q >= 0 && q < static_cast<long>(width);
            row[oh * out_w + ow] =
                inside ? image[(c * height + static_cast<std::size_t>(r)) * width + static_cast<std::size_t>(q)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w,
            double* image) {
  const std::size_t hw = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = cols + ((c * kh + ki) * kw + kj) * hw;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long r = static_cast<long>(oh * stride + ki) - static_cast<long>(padding);
          if (r < 0 || r >= static_cast<long>(height)) continue;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const long q = static_cast<long>(ow * stride + kj) - static_cast<long>(padding);
            if (q < 0 || q >= static_cast<long>(width)) continue;
            image[(c * height + static_cast<std::size_t>(r)) * width + static_cast<std::size_t>(q)] +=
                row[oh * out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace cre::kernels
