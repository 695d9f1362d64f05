#pragma once

#include <algorithm>
#include <cstddef>

// Raw dense kernels on row-major buffers. Every inner loop is an axpy over a
// contiguous row so the compiler can vectorise without reassociating sums;
// accumulation order is fixed, which keeps results bit-reproducible.

namespace insight::kernels {

/// y[0..n) += a * x[0..n)
template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

/// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av != T(0)) axpy(n, av, b + p * n, crow);
    }
  }
}

/// C[m×n] += Aᵀ · B with A stored [k×m], B [k×n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    const T* arow = a + p * m;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av != T(0)) axpy(n, av, brow, c + i * n);
    }
  }
}

/// out[cols×rows] = in[rows×cols]ᵀ
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    const std::size_t i1 = std::min(rows, i0 + kBlock);
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

struct ConvGeometry {
  std::size_t in_channels, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
};

/// cols[(c,ky,kx) × (oy,ox)] gathered from one image [C×H×W]; padding reads 0.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        T* dst = cols + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            dst[oy * ow + ox] = inside ? plane[iy * g.width + ix] : T(0);
          }
        }
      }
    }
  }
}

/// Scatter-add inverse of im2col.
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const T* src = cols + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[iy * g.width + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace insight::kernels
