#pragma once

// Low-level network kernels on NCHW tensors: convolution (im2col + GEMM),
// 2x transposed convolution, batch normalization, ReLU, 2x2 max pooling,
// channel concatenation and absolute difference. Each op has a forward and
// a matching backward; backward accumulates into the given gradients.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <vector>

#include "scd/tensor.hpp"

namespace scd {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatX<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatX<T>>;

// ---- convolution, kernel k x k, stride 1, zero padding (k-1)/2 ----

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, T* cols) {
    const int pad = (k - 1) / 2;
    const size_t hw = static_cast<size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols + ((static_cast<size_t>(ci) * k + ky) * k + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    const int iy = y + ky - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + static_cast<size_t>(y) * w,
                                  row + static_cast<size_t>(y + 1) * w, T(0));
                        continue;
                    }
                    const T* src = x + static_cast<size_t>(ci) * hw +
                                   static_cast<size_t>(iy) * w;
                    T* dst = row + static_cast<size_t>(y) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int ix = xx + kx - pad;
                        dst[xx] = (ix < 0 || ix >= w) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, T* x) {
    const int pad = (k - 1) / 2;
    const size_t hw = static_cast<size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols + ((static_cast<size_t>(ci) * k + ky) * k + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    const int iy = y + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = x + static_cast<size_t>(ci) * hw +
                             static_cast<size_t>(iy) * w;
                    const T* src = row + static_cast<size_t>(y) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int ix = xx + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[xx];
                    }
                }
            }
        }
    }
}

// weight: (Cout, Cin, k, k), bias: (Cout). y must be (N, Cout, H, W).
template <typename T>
void conv_forward(const Tensor<T>& x, const Tensor<T>& weight,
                  const Tensor<T>& bias, int k, Tensor<T>& y) {
    const int cin = x.c(), h = x.h(), w = x.w(), cout = weight.n();
    const size_t hw = static_cast<size_t>(h) * w;
    std::vector<T> cols(static_cast<size_t>(cin) * k * k * hw);
    CMapM<T> wm(weight.data(), cout, static_cast<size_t>(cin) * k * k);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x.data() + x.plane(n, 0), cin, h, w, k, cols.data());
        CMapM<T> cm(cols.data(), static_cast<size_t>(cin) * k * k, hw);
        MapM<T> ym(y.data() + y.plane(n, 0), cout, hw);
        ym.noalias() = wm * cm;
        for (int co = 0; co < cout; ++co)
            ym.row(co).array() += bias[co];
    }
}

template <typename T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& weight, int k,
                   const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dweight,
                   Tensor<T>& dbias) {
    const int cin = x.c(), h = x.h(), w = x.w(), cout = weight.n();
    const size_t hw = static_cast<size_t>(h) * w;
    std::vector<T> cols(static_cast<size_t>(cin) * k * k * hw);
    std::vector<T> dcols(cols.size());
    CMapM<T> wm(weight.data(), cout, static_cast<size_t>(cin) * k * k);
    MapM<T> dwm(dweight.data(), cout, static_cast<size_t>(cin) * k * k);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x.data() + x.plane(n, 0), cin, h, w, k, cols.data());
        CMapM<T> cm(cols.data(), static_cast<size_t>(cin) * k * k, hw);
        CMapM<T> dym(dy.data() + dy.plane(n, 0), cout, hw);
        dwm.noalias() += dym * cm.transpose();
        for (int co = 0; co < cout; ++co)
            dbias[co] += dym.row(co).sum();
        MapM<T> dcm(dcols.data(), static_cast<size_t>(cin) * k * k, hw);
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcols.data(), cin, h, w, k, dx.data() + dx.plane(n, 0));
    }
}

// ---- transposed convolution, kernel 2, stride 2 (2x upsampling) ----
// weight: (Cin, Cout, 2, 2); output is (N, Cout, 2H, 2W). Kernel equals
// stride, so every input pixel scatters into a disjoint 2x2 block.

template <typename T>
void upconv2_forward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& bias, Tensor<T>& y) {
    const int cin = x.c(), h = x.h(), w = x.w(), cout = weight.c();
    for (int n = 0; n < x.n(); ++n)
        for (int co = 0; co < cout; ++co)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    for (int yy = 0; yy < h; ++yy) {
                        T* dst = y.data() + y.plane(n, co) +
                                 static_cast<size_t>(2 * yy + a) * 2 * w + b;
                        for (int xx = 0; xx < w; ++xx)
                            dst[2 * xx] = bias[co];
                    }
                    for (int ci = 0; ci < cin; ++ci) {
                        const T wv = weight.at(ci, co, a, b);
                        const T* src = x.data() + x.plane(n, ci);
                        for (int yy = 0; yy < h; ++yy) {
                            T* dst = y.data() + y.plane(n, co) +
                                     static_cast<size_t>(2 * yy + a) * 2 * w + b;
                            const T* sr = src + static_cast<size_t>(yy) * w;
                            for (int xx = 0; xx < w; ++xx)
                                dst[2 * xx] += wv * sr[xx];
                        }
                    }
                }
}

template <typename T>
void upconv2_backward(const Tensor<T>& x, const Tensor<T>& weight,
                      const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dweight,
                      Tensor<T>& dbias) {
    const int cin = x.c(), h = x.h(), w = x.w(), cout = weight.c();
    for (int n = 0; n < x.n(); ++n)
        for (int co = 0; co < cout; ++co)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    T bsum = 0;
                    for (int yy = 0; yy < h; ++yy) {
                        const T* dyr = dy.data() + dy.plane(n, co) +
                                       static_cast<size_t>(2 * yy + a) * 2 * w + b;
                        for (int xx = 0; xx < w; ++xx) bsum += dyr[2 * xx];
                    }
                    dbias[co] += bsum;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T wv = weight.at(ci, co, a, b);
                        T wsum = 0;
                        const T* src = x.data() + x.plane(n, ci);
                        T* dsx = dx.data() + dx.plane(n, ci);
                        for (int yy = 0; yy < h; ++yy) {
                            const T* dyr = dy.data() + dy.plane(n, co) +
                                           static_cast<size_t>(2 * yy + a) * 2 * w + b;
                            const T* sr = src + static_cast<size_t>(yy) * w;
                            T* dr = dsx + static_cast<size_t>(yy) * w;
                            for (int xx = 0; xx < w; ++xx) {
                                const T g = dyr[2 * xx];
                                wsum += g * sr[xx];
                                dr[xx] += g * wv;
                            }
                        }
                        dweight.at(ci, co, a, b) += wsum;
                    }
                }
}

// ---- batch normalization ----

template <typename T>
struct BatchNormCtx {
    std::vector<T> mean, inv_std;  // per channel, stats actually used
};

// Training mode uses biased batch statistics and updates the running
// buffers in place; eval mode normalizes with the running buffers and
// leaves them untouched.
template <typename T>
void batchnorm_forward(const Tensor<T>& x, const std::vector<T>& gamma,
                       const std::vector<T>& beta, std::vector<T>& run_mean,
                       std::vector<T>& run_var, bool training, T momentum,
                       T eps, Tensor<T>& y, BatchNormCtx<T>& ctx) {
    const int c = x.c();
    const size_t hw = static_cast<size_t>(x.h()) * x.w();
    const size_t cnt = static_cast<size_t>(x.n()) * hw;
    ctx.mean.assign(c, T(0));
    ctx.inv_std.assign(c, T(0));
    for (int ci = 0; ci < c; ++ci) {
        T mean, var;
        if (training) {
            T s = 0, s2 = 0;
            for (int n = 0; n < x.n(); ++n) {
                const T* p = x.data() + x.plane(n, ci);
                for (size_t i = 0; i < hw; ++i) {
                    s += p[i];
                    s2 += p[i] * p[i];
                }
            }
            mean = s / static_cast<T>(cnt);
            var = s2 / static_cast<T>(cnt) - mean * mean;
            if (var < 0) var = 0;
            run_mean[ci] = (T(1) - momentum) * run_mean[ci] + momentum * mean;
            run_var[ci] = (T(1) - momentum) * run_var[ci] + momentum * var;
        } else {
            mean = run_mean[ci];
            var = run_var[ci];
        }
        const T inv = T(1) / std::sqrt(var + eps);
        ctx.mean[ci] = mean;
        ctx.inv_std[ci] = inv;
        for (int n = 0; n < x.n(); ++n) {
            const T* p = x.data() + x.plane(n, ci);
            T* q = y.data() + y.plane(n, ci);
            for (size_t i = 0; i < hw; ++i)
                q[i] = gamma[ci] * (p[i] - mean) * inv + beta[ci];
        }
    }
}

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const std::vector<T>& gamma,
                        const BatchNormCtx<T>& ctx, bool training,
                        const Tensor<T>& dy, Tensor<T>& dx,
                        std::vector<T>& dgamma, std::vector<T>& dbeta) {
    const int c = x.c();
    const size_t hw = static_cast<size_t>(x.h()) * x.w();
    const size_t cnt = static_cast<size_t>(x.n()) * hw;
    for (int ci = 0; ci < c; ++ci) {
        const T mean = ctx.mean[ci], inv = ctx.inv_std[ci];
        T sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < x.n(); ++n) {
            const T* px = x.data() + x.plane(n, ci);
            const T* pdy = dy.data() + dy.plane(n, ci);
            for (size_t i = 0; i < hw; ++i) {
                sum_dy += pdy[i];
                sum_dy_xhat += pdy[i] * (px[i] - mean) * inv;
            }
        }
        dbeta[ci] += sum_dy;
        dgamma[ci] += sum_dy_xhat;
        const T m_dy = sum_dy / static_cast<T>(cnt);
        const T m_dy_xhat = sum_dy_xhat / static_cast<T>(cnt);
        for (int n = 0; n < x.n(); ++n) {
            const T* px = x.data() + x.plane(n, ci);
            const T* pdy = dy.data() + dy.plane(n, ci);
            T* pdx = dx.data() + dx.plane(n, ci);
            if (training) {
                for (size_t i = 0; i < hw; ++i) {
                    const T xhat = (px[i] - mean) * inv;
                    pdx[i] += gamma[ci] * inv *
                              (pdy[i] - m_dy - xhat * m_dy_xhat);
                }
            } else {
                // running statistics are constants
                for (size_t i = 0; i < hw; ++i)
                    pdx[i] += gamma[ci] * inv * pdy[i];
            }
        }
    }
}

// ---- pointwise ops ----

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    for (size_t i = 0; i < x.size(); ++i)
        dx[i] += x[i] > T(0) ? dy[i] : T(0);
}

// 2x2 max pool, stride 2; argmax saved for backward.
template <typename T>
void maxpool2_forward(const Tensor<T>& x, Tensor<T>& y,
                      std::vector<int32_t>& argmax) {
    const int h = x.h(), w = x.w(), oh = h / 2, ow = w / 2;
    argmax.resize(y.size());
    size_t oi = 0;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const T* p = x.data() + x.plane(n, c);
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    int best = (2 * yy) * w + 2 * xx;
                    T bv = p[best];
                    const int cand[3] = {(2 * yy) * w + 2 * xx + 1,
                                         (2 * yy + 1) * w + 2 * xx,
                                         (2 * yy + 1) * w + 2 * xx + 1};
                    for (int k = 0; k < 3; ++k)
                        if (p[cand[k]] > bv) {
                            bv = p[cand[k]];
                            best = cand[k];
                        }
                    y[oi] = bv;
                    argmax[oi] = best;
                    ++oi;
                }
        }
}

template <typename T>
void maxpool2_backward(const Tensor<T>& x, const Tensor<T>& dy,
                       const std::vector<int32_t>& argmax, Tensor<T>& dx) {
    size_t oi = 0;
    const size_t ohw = static_cast<size_t>(dy.h()) * dy.w();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            T* pdx = dx.data() + dx.plane(n, c);
            for (size_t i = 0; i < ohw; ++i, ++oi)
                pdx[argmax[oi]] += dy[oi];
        }
}

}  // namespace scd
