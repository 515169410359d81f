#pragma once

#include <cstdint>
#include <vector>

#include "cropseg/tensor.hpp"

// Low-level layer math. Free functions over raw buffers with explicit dims;
// convolutions are im2col + GEMM, so the hot path is a single Eigen product.
// All spatial convs are stride 1 with same padding; the up-convolution is a
// 2x2 stride-2 transposed conv (non-overlapping, so it is a plain GEMM with
// a pixel scatter).

namespace cropseg::nn {

// cols is [C*k*k, H*W] row-major; pad = k/2.
template <typename S>
void im2col(const S* x, Index c, Index h, Index w, Index k, S* cols) {
  const Index pad = k / 2;
  for (Index ci = 0; ci < c; ++ci) {
    const S* src = x + ci * h * w;
    for (Index dy = 0; dy < k; ++dy) {
      for (Index dx = 0; dx < k; ++dx) {
        S* row = cols + ((ci * k + dy) * k + dx) * h * w;
        const Index xlo = std::max<Index>(0, pad - dx);
        const Index xhi = std::min<Index>(w, w + pad - dx);
        for (Index y0 = 0; y0 < h; ++y0) {
          S* dst = row + y0 * w;
          const Index sy = y0 + dy - pad;
          if (sy < 0 || sy >= h || xhi <= xlo) {
            std::memset(dst, 0, sizeof(S) * static_cast<size_t>(w));
            continue;
          }
          if (xlo > 0) std::memset(dst, 0, sizeof(S) * static_cast<size_t>(xlo));
          if (xhi < w) std::memset(dst + xhi, 0, sizeof(S) * static_cast<size_t>(w - xhi));
          std::memcpy(dst + xlo, src + sy * w + (xlo + dx - pad),
                      sizeof(S) * static_cast<size_t>(xhi - xlo));
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds columns back into the image gradient.
template <typename S>
void col2im_add(const S* cols, Index c, Index h, Index w, Index k, S* dx) {
  const Index pad = k / 2;
  for (Index ci = 0; ci < c; ++ci) {
    S* dst = dx + ci * h * w;
    for (Index dy = 0; dy < k; ++dy) {
      for (Index dx_ = 0; dx_ < k; ++dx_) {
        const S* row = cols + ((ci * k + dy) * k + dx_) * h * w;
        const Index xlo = std::max<Index>(0, pad - dx_);
        const Index xhi = std::min<Index>(w, w + pad - dx_);
        if (xhi <= xlo) continue;
        for (Index y0 = 0; y0 < h; ++y0) {
          const Index sy = y0 + dy - pad;
          if (sy < 0 || sy >= h) continue;
          const S* s = row + y0 * w + xlo;
          S* d = dst + sy * w + (xlo + dx_ - pad);
          for (Index i = 0; i < xhi - xlo; ++i) d[i] += s[i];
        }
      }
    }
  }
}

// x [Cin,H,W], weight [Cout, Cin*k*k] row-major, bias [Cout] or null,
// y [Cout,H,W]. `cols` is scratch, resized as needed.
template <typename S>
void conv2d_forward(const S* x, Index cin, Index h, Index w, const S* weight, const S* bias,
                    Index cout, Index k, S* y, std::vector<S>& cols) {
  const Index hw = h * w;
  MapRM<S> ymap(y, cout, hw);
  if (k == 1) {
    ymap.noalias() = ConstMapRM<S>(weight, cout, cin) * ConstMapRM<S>(x, cin, hw);
  } else {
    cols.resize(static_cast<size_t>(cin * k * k * hw));
    im2col(x, cin, h, w, k, cols.data());
    ymap.noalias() =
        ConstMapRM<S>(weight, cout, cin * k * k) * ConstMapRM<S>(cols.data(), cin * k * k, hw);
  }
  if (bias) {
    for (Index co = 0; co < cout; ++co) ymap.row(co).array() += bias[co];
  }
}

// Accumulates dW [Cout, Cin*k*k], dB [Cout], and (when dx != null) dX [Cin,H,W].
// Recomputes im2col from the stored input activation.
template <typename S>
void conv2d_backward(const S* x, Index cin, Index h, Index w, const S* weight, Index cout,
                     Index k, const S* dy, S* dw, S* db, S* dx, std::vector<S>& cols,
                     std::vector<S>& dcols) {
  const Index hw = h * w;
  ConstMapRM<S> dymap(dy, cout, hw);
  if (db) {
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dbv(db, cout);
    dbv.noalias() += dymap.rowwise().sum();
  }
  if (k == 1) {
    MapRM<S>(dw, cout, cin).noalias() += dymap * ConstMapRM<S>(x, cin, hw).transpose();
    if (dx) {
      MapRM<S>(dx, cin, hw).noalias() +=
          ConstMapRM<S>(weight, cout, cin).transpose() * dymap;
    }
    return;
  }
  const Index rows = cin * k * k;
  cols.resize(static_cast<size_t>(rows * hw));
  im2col(x, cin, h, w, k, cols.data());
  MapRM<S>(dw, cout, rows).noalias() += dymap * ConstMapRM<S>(cols.data(), rows, hw).transpose();
  if (dx) {
    dcols.resize(static_cast<size_t>(rows * hw));
    MapRM<S>(dcols.data(), rows, hw).noalias() =
        ConstMapRM<S>(weight, cout, rows).transpose() * dymap;
    col2im_add(dcols.data(), cin, h, w, k, dx);
  }
}

// 2x2 stride-2 transposed conv. weight [Cin, Cout*4] row-major (serialized
// as [Cin, Cout, 2, 2]); x [Cin,H,W] -> y [Cout,2H,2W].
template <typename S>
void deconv2_forward(const S* x, Index cin, Index h, Index w, const S* weight, const S* bias,
                     Index cout, S* y, std::vector<S>& cols) {
  const Index hw = h * w;
  cols.resize(static_cast<size_t>(cout * 4 * hw));
  MapRM<S> cmap(cols.data(), cout * 4, hw);
  cmap.noalias() = ConstMapRM<S>(weight, cin, cout * 4).transpose() * ConstMapRM<S>(x, cin, hw);
  const Index H2 = 2 * h, W2 = 2 * w;
  for (Index co = 0; co < cout; ++co) {
    const S b = bias ? bias[co] : S(0);
    for (Index q = 0; q < 4; ++q) {
      const S* row = cols.data() + (co * 4 + q) * hw;
      const Index dy = q >> 1, dx = q & 1;
      for (Index y0 = 0; y0 < h; ++y0) {
        S* dst = y + (co * H2 + 2 * y0 + dy) * W2 + dx;
        const S* s = row + y0 * w;
        for (Index x0 = 0; x0 < w; ++x0) dst[2 * x0] = s[x0] + b;
      }
    }
  }
}

template <typename S>
void deconv2_backward(const S* x, Index cin, Index h, Index w, const S* weight, Index cout,
                      const S* dy, S* dw, S* db, S* dx, std::vector<S>& dcols) {
  const Index hw = h * w;
  const Index H2 = 2 * h, W2 = 2 * w;
  dcols.resize(static_cast<size_t>(cout * 4 * hw));
  for (Index co = 0; co < cout; ++co) {
    S bsum = 0;
    for (Index q = 0; q < 4; ++q) {
      S* row = dcols.data() + (co * 4 + q) * hw;
      const Index dy_ = q >> 1, dx_ = q & 1;
      for (Index y0 = 0; y0 < h; ++y0) {
        const S* src = dy + (co * H2 + 2 * y0 + dy_) * W2 + dx_;
        S* d = row + y0 * w;
        for (Index x0 = 0; x0 < w; ++x0) {
          d[x0] = src[2 * x0];
          bsum += src[2 * x0];
        }
      }
    }
    if (db) db[co] += bsum;
  }
  ConstMapRM<S> dcmap(dcols.data(), cout * 4, hw);
  MapRM<S>(dw, cin, cout * 4).noalias() += ConstMapRM<S>(x, cin, hw) * dcmap.transpose();
  if (dx) {
    MapRM<S>(dx, cin, hw).noalias() += ConstMapRM<S>(weight, cin, cout * 4) * dcmap;
  }
}

// 2x2 stride-2 spatial max pool; idx records the winner (dy*2+dx) per cell.
template <typename S>
void maxpool2_forward(const S* x, Index c, Index h, Index w, S* y, std::uint8_t* idx) {
  const Index ho = h / 2, wo = w / 2;
  for (Index ci = 0; ci < c; ++ci) {
    const S* src = x + ci * h * w;
    S* dst = y + ci * ho * wo;
    std::uint8_t* id = idx ? idx + ci * ho * wo : nullptr;
    for (Index y0 = 0; y0 < ho; ++y0) {
      const S* r0 = src + (2 * y0) * w;
      const S* r1 = src + (2 * y0 + 1) * w;
      for (Index x0 = 0; x0 < wo; ++x0) {
        const S v[4] = {r0[2 * x0], r0[2 * x0 + 1], r1[2 * x0], r1[2 * x0 + 1]};
        int best = 0;
        for (int q = 1; q < 4; ++q)
          if (v[q] > v[best]) best = q;
        dst[y0 * wo + x0] = v[best];
        if (id) id[y0 * wo + x0] = static_cast<std::uint8_t>(best);
      }
    }
  }
}

template <typename S>
void maxpool2_backward(const S* dy, const std::uint8_t* idx, Index c, Index h, Index w, S* dx) {
  const Index ho = h / 2, wo = w / 2;
  for (Index ci = 0; ci < c; ++ci) {
    const S* g = dy + ci * ho * wo;
    const std::uint8_t* id = idx + ci * ho * wo;
    S* dst = dx + ci * h * w;
    for (Index y0 = 0; y0 < ho; ++y0) {
      for (Index x0 = 0; x0 < wo; ++x0) {
        const int q = id[y0 * wo + x0];
        dst[(2 * y0 + (q >> 1)) * w + (2 * x0 + (q & 1))] += g[y0 * wo + x0];
      }
    }
  }
}

// Non-overlapping max pool over the leading (time) axis: x [T, n] -> y [T/win, n];
// idx records the winning offset within each window.
template <typename S>
void tmaxpool_forward(const S* x, Index t, Index n, Index win, S* y, std::uint8_t* idx) {
  const Index to = t / win;
  for (Index k = 0; k < to; ++k) {
    const S* base = x + k * win * n;
    S* dst = y + k * n;
    std::uint8_t* id = idx ? idx + k * n : nullptr;
    std::memcpy(dst, base, sizeof(S) * static_cast<size_t>(n));
    if (id) std::memset(id, 0, static_cast<size_t>(n));
    for (Index j = 1; j < win; ++j) {
      const S* s = base + j * n;
      for (Index i = 0; i < n; ++i) {
        if (s[i] > dst[i]) {
          dst[i] = s[i];
          if (id) id[i] = static_cast<std::uint8_t>(j);
        }
      }
    }
  }
}

template <typename S>
void tmaxpool_backward(const S* dy, const std::uint8_t* idx, Index t, Index n, Index win, S* dx) {
  const Index to = t / win;
  for (Index k = 0; k < to; ++k) {
    const S* g = dy + k * n;
    const std::uint8_t* id = idx + k * n;
    S* base = dx + k * win * n;
    for (Index i = 0; i < n; ++i) base[id[i] * n + i] += g[i];
  }
}

template <typename S>
void relu_inplace(S* x, Index n) {
  for (Index i = 0; i < n; ++i)
    if (x[i] < S(0)) x[i] = S(0);
}

// grad *= (act > 0); `act` is the post-ReLU activation.
template <typename S>
void relu_backward_inplace(const S* act, S* grad, Index n) {
  for (Index i = 0; i < n; ++i)
    if (act[i] <= S(0)) grad[i] = S(0);
}

template <typename S>
S sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

}  // namespace cropseg::nn
