#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "minidl/errors.hpp"

// Flat numeric kernels behind the tensor ops. All kernels are bit-stable
// under internal parallelism: every output element is reduced by a single
// thread in a fixed index order, so results do not depend on the thread
// count.

namespace minidl::kernels {

template <class S>
inline bool all_finite(const S* p, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

template <class S>
inline void ensure_finite(const S* p, std::int64_t n, const char* op) {
    if (!all_finite(p, n)) throw NumericError(std::string(op) + " produced a non-finite value");
}

// C[M,N] = A[M,K] * B[K,N]  (+= when accumulate). The j-loop vectorizes;
// the k-order per output element is fixed.
template <class S>
inline void matmul_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        S* crow = c + static_cast<std::int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = S(0);
        const S* arow = a + static_cast<std::int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            const S* brow = b + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] = A^T * B where A is [K,M], B is [K,N].
template <class S>
inline void matmul_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        S* crow = c + static_cast<std::int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = S(0);
        for (int kk = 0; kk < k; ++kk) {
            const S av = a[static_cast<std::int64_t>(kk) * m + i];
            const S* brow = b + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] = A * B^T where A is [M,K], B is [N,K]. B is transposed into a
// scratch buffer first so the inner loops stay unit-stride.
template <class S>
inline void matmul_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
    std::vector<S> bt(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int kk = 0; kk < k; ++kk)
            bt[static_cast<std::int64_t>(kk) * n + j] = b[static_cast<std::int64_t>(j) * k + kk];
    matmul_nn(a, bt.data(), c, m, k, n, accumulate);
}

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// Unfolds one image [C,H,W] into columns [(C*kh*kw) x (OH*OW)], zero-filling
// where the window overhangs the padded border.
template <class S>
inline void im2col(const S* img, int c, int h, int w, int kh, int kw, int stride, int pad, S* cols,
                   int oh, int ow) {
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    for (int ch = 0; ch < c; ++ch) {
        const S* plane = img + static_cast<std::int64_t>(ch) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                S* row = cols + ((static_cast<std::int64_t>(ch) * kh + ki) * kw + kj) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = S(0);
                        continue;
                    }
                    const S* src = plane + static_cast<std::int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        row[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates columns back into the image. Sequential
// (overlapping windows write to the same cells).
template <class S>
inline void col2im(const S* cols, int c, int h, int w, int kh, int kw, int stride, int pad, S* img,
                   int oh, int ow) {
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    for (int ch = 0; ch < c; ++ch) {
        S* plane = img + static_cast<std::int64_t>(ch) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const S* row = cols + ((static_cast<std::int64_t>(ch) * kh + ki) * kw + kj) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    S* dst = plane + static_cast<std::int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace minidl::kernels
