#pragma once

#include <Eigen/Core>

#include "tape.hpp"

namespace autopose {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col is (Cin*kh*kw) x (Hout*Wout), row-major.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Hout, int Wout, T* col) {
  const int HWo = Hout * Wout;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * HWo;
        for (int oh = 0; oh < Hout; ++oh) {
          const int ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < Wout; ++ow) dst[oh * Wout + ow] = T(0);
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wout; ++ow) {
            const int iw = ow * stride + kj - pad;
            dst[oh * Wout + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Hout, int Wout, T* x) {
  const int HWo = Hout * Wout;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * HWo;
        for (int oh = 0; oh < Hout; ++oh) {
          const int ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) continue;
          T* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wout; ++ow) {
            const int iw = ow * stride + kj - pad;
            if (iw >= 0 && iw < W) dst[iw] += src[oh * Wout + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, NCHW, zero padding. w {Cout,Cin,kh,kw}; pass b = -1 for
// no bias.
template <typename T>
int conv2d(Tape<T>& t, int x, int w, int b, int stride, int pad) {
  const auto& xv = t.val(x);
  const auto& wv = t.val(w);
  if (xv.shape.size() != 4 || wv.shape.size() != 4)
    throw std::invalid_argument("conv2d: expects 4-d tensors");
  const int N = xv.shape[0], Cin = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  const int Cout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
  if (wv.shape[1] != Cin)
    throw std::invalid_argument("conv2d: channel mismatch (input " + std::to_string(Cin) +
                                ", weight expects " + std::to_string(wv.shape[1]) + ")");
  const int Hout = detail::conv_out_dim(H, kh, stride, pad);
  const int Wout = detail::conv_out_dim(W, kw, stride, pad);
  if (Hout < 1 || Wout < 1) throw std::invalid_argument("conv2d: output would be empty");
  const int K = Cin * kh * kw, HWo = Hout * Wout;

  Tensor<T> out(shape4(N, Cout, Hout, Wout));
  std::vector<T> col(static_cast<std::size_t>(K) * HWo);
  for (int n = 0; n < N; ++n) {
    detail::im2col(xv.data.data() + static_cast<std::size_t>(n) * Cin * H * W, Cin, H, W, kh, kw,
                   stride, pad, Hout, Wout, col.data());
    detail::CMapMat<T> Wm(wv.data.data(), Cout, K);
    detail::CMapMat<T> Cm(col.data(), K, HWo);
    detail::MapMat<T> Om(out.data.data() + static_cast<std::size_t>(n) * Cout * HWo, Cout, HWo);
    Om.noalias() = Wm * Cm;
  }
  if (b >= 0) {
    const auto& bv = t.val(b);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Cout; ++c) {
        T* dst = out.data.data() + (static_cast<std::size_t>(n) * Cout + c) * HWo;
        for (int i = 0; i < HWo; ++i) dst[i] += bv.data[c];
      }
  }

  bool ng = t.needs_grad(x) || t.needs_grad(w) || (b >= 0 && t.needs_grad(b));
  return t.push(std::move(out), ng,
                [x, w, b, stride, pad, N, Cin, H, W, Cout, kh, kw, Hout, Wout, K,
                 HWo](Tape<T>& tp, int id) {
                  const auto& g = tp.grad(id);
                  const auto& xv = tp.val(x);
                  const auto& wv = tp.val(w);
                  std::vector<T> col(static_cast<std::size_t>(K) * HWo);
                  for (int n = 0; n < N; ++n) {
                    const T* gn = g.data.data() + static_cast<std::size_t>(n) * Cout * HWo;
                    if (tp.needs_grad(w) || tp.needs_grad(x))
                      detail::im2col(xv.data.data() + static_cast<std::size_t>(n) * Cin * H * W,
                                     Cin, H, W, kh, kw, stride, pad, Hout, Wout, col.data());
                    if (tp.needs_grad(w)) {
                      detail::CMapMat<T> Gm(gn, Cout, HWo);
                      detail::CMapMat<T> Cm(col.data(), K, HWo);
                      detail::MapMat<T> GW(tp.grad(w).data.data(), Cout, K);
                      GW.noalias() += Gm * Cm.transpose();
                    }
                    if (tp.needs_grad(x)) {
                      std::vector<T> dcol(static_cast<std::size_t>(K) * HWo);
                      detail::CMapMat<T> Wm(wv.data.data(), Cout, K);
                      detail::CMapMat<T> Gm(gn, Cout, HWo);
                      detail::MapMat<T> Dm(dcol.data(), K, HWo);
                      Dm.noalias() = Wm.transpose() * Gm;
                      detail::col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Hout, Wout,
                                         tp.grad(x).data.data() +
                                             static_cast<std::size_t>(n) * Cin * H * W);
                    }
                  }
                  if (b >= 0 && tp.needs_grad(b)) {
                    auto& gb = tp.grad(b);
                    for (int n = 0; n < N; ++n)
                      for (int c = 0; c < Cout; ++c) {
                        const T* gn = g.data.data() + (static_cast<std::size_t>(n) * Cout + c) * HWo;
                        T acc = T(0);
                        for (int i = 0; i < HWo; ++i) acc += gn[i];
                        gb.data[c] += acc;
                      }
                  }
                });
}

// Batch normalization over (N,H,W) per channel, always using the statistics
// of the current batch. gamma/beta {C}.
template <typename T>
int batchnorm(Tape<T>& t, int x, int gamma, int beta, double eps = 1e-5) {
  const auto& xv = t.val(x);
  if (xv.shape.size() != 4) throw std::invalid_argument("batchnorm: expects 4-d");
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
  Tensor<T> out(xv.shape);
  std::vector<double> mean(C, 0.0), inv_std(C, 0.0);
  const int HW = H * W;
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* p = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) s += p[i];
    }
    mean[c] = s / static_cast<double>(m);
    double v = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* p = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) {
        const double d = p[i] - mean[c];
        v += d * d;
      }
    }
    inv_std[c] = 1.0 / std::sqrt(v / static_cast<double>(m) + eps);
  }
  const auto& gv = t.val(gamma);
  const auto& bv = t.val(beta);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      T* o = out.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      const double a = gv.data[c] * inv_std[c];
      const double sh = bv.data[c] - a * mean[c];
      for (int i = 0; i < HW; ++i) o[i] = static_cast<T>(a * p[i] + sh);
    }
  bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  return t.push(std::move(out), ng,
                [x, gamma, beta, mean, inv_std, N, C, HW, m](Tape<T>& tp, int id) {
                  const auto& g = tp.grad(id);
                  const auto& xv = tp.val(x);
                  const auto& gv = tp.val(gamma);
                  for (int c = 0; c < C; ++c) {
                    // sums over the normalization set
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int n = 0; n < N; ++n) {
                      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                      for (int i = 0; i < HW; ++i) {
                        const double xv_hat = (xv.data[base + i] - mean[c]) * inv_std[c];
                        sum_g += g.data[base + i];
                        sum_gx += g.data[base + i] * xv_hat;
                      }
                    }
                    if (tp.needs_grad(beta)) tp.grad(beta).data[c] += static_cast<T>(sum_g);
                    if (tp.needs_grad(gamma)) tp.grad(gamma).data[c] += static_cast<T>(sum_gx);
                    if (tp.needs_grad(x)) {
                      auto& gx = tp.grad(x);
                      const double a = gv.data[c] * inv_std[c];
                      const double mg = sum_g / static_cast<double>(m);
                      const double mgx = sum_gx / static_cast<double>(m);
                      for (int n = 0; n < N; ++n) {
                        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
                        for (int i = 0; i < HW; ++i) {
                          const double x_hat = (xv.data[base + i] - mean[c]) * inv_std[c];
                          gx.data[base + i] +=
                              static_cast<T>(a * (g.data[base + i] - mg - x_hat * mgx));
                        }
                      }
                    }
                  }
                });
}

// 3x3 stride-1 same-padding pools.
template <typename T>
int maxpool3(Tape<T>& t, int x) {
  const auto& xv = t.val(x);
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  Tensor<T> out(xv.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      T* o = out.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          T best = std::numeric_limits<T>::lowest();
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              best = std::max(best, p[ii * W + jj]);
            }
          o[i * W + j] = best;
        }
    }
  return t.push(std::move(out), t.needs_grad(x), [x, N, C, H, W](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    const auto& xv = tp.val(x);
    auto& gx = tp.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            // first maximum in scan order receives the gradient
            T best = std::numeric_limits<T>::lowest();
            int bi = -1;
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const int ii = i + di, jj = j + dj;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                if (xv.data[base + ii * W + jj] > best) {
                  best = xv.data[base + ii * W + jj];
                  bi = ii * W + jj;
                }
              }
            gx.data[base + bi] += g.data[base + i * W + j];
          }
      }
  });
}

// Average pool including padded zeros in the divisor (divide by 9).
template <typename T>
int avgpool3(Tape<T>& t, int x) {
  const auto& xv = t.val(x);
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  Tensor<T> out(xv.shape);
  const T inv = T(1) / T(9);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      T* o = out.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          T acc = T(0);
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              acc += p[ii * W + jj];
            }
          o[i * W + j] = acc * inv;
        }
    }
  return t.push(std::move(out), t.needs_grad(x), [x, N, C, H, W, inv](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    auto& gx = tp.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const T gv = g.data[base + i * W + j] * inv;
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const int ii = i + di, jj = j + dj;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                gx.data[base + ii * W + jj] += gv;
              }
          }
      }
  });
}

// Nearest-neighbor resize to an explicit output size: src index = floor(i*in/out).
template <typename T>
int nearest_resize(Tape<T>& t, int x, int Hout, int Wout) {
  const auto& xv = t.val(x);
  const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
  if (Hout < 1 || Wout < 1) throw std::invalid_argument("nearest_resize: bad target size");
  Tensor<T> out(shape4(N, C, Hout, Wout));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      T* o = out.data.data() + (static_cast<std::size_t>(n) * C + c) * Hout * Wout;
      for (int i = 0; i < Hout; ++i) {
        const int si = static_cast<int>(static_cast<std::int64_t>(i) * H / Hout);
        for (int j = 0; j < Wout; ++j) {
          const int sj = static_cast<int>(static_cast<std::int64_t>(j) * W / Wout);
          o[i * Wout + j] = p[si * W + sj];
        }
      }
    }
  return t.push(std::move(out), t.needs_grad(x), [x, N, C, H, W, Hout, Wout](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    auto& gx = tp.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t ib = (static_cast<std::size_t>(n) * C + c) * H * W;
        const std::size_t ob = (static_cast<std::size_t>(n) * C + c) * Hout * Wout;
        for (int i = 0; i < Hout; ++i) {
          const int si = static_cast<int>(static_cast<std::int64_t>(i) * H / Hout);
          for (int j = 0; j < Wout; ++j) {
            const int sj = static_cast<int>(static_cast<std::int64_t>(j) * W / Wout);
            gx.data[ib + si * W + sj] += g.data[ob + i * Wout + j];
          }
        }
      }
  });
}

template <typename T>
int concat_channels(Tape<T>& t, const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("concat_channels: empty");
  const auto& first = t.val(ids[0]);
  const int N = first.shape[0], H = first.shape[2], W = first.shape[3];
  int Ctot = 0;
  for (int id : ids) {
    const auto& v = t.val(id);
    if (v.shape[0] != N || v.shape[2] != H || v.shape[3] != W)
      throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    Ctot += v.shape[1];
  }
  Tensor<T> out(shape4(N, Ctot, H, W));
  const int HW = H * W;
  for (int n = 0; n < N; ++n) {
    int coff = 0;
    for (int id : ids) {
      const auto& v = t.val(id);
      const int C = v.shape[1];
      std::copy(v.data.begin() + static_cast<std::size_t>(n) * C * HW,
                v.data.begin() + static_cast<std::size_t>(n + 1) * C * HW,
                out.data.begin() + (static_cast<std::size_t>(n) * Ctot + coff) * HW);
      coff += C;
    }
  }
  bool ng = false;
  for (int id : ids) ng = ng || t.needs_grad(id);
  auto ids_c = ids;
  return t.push(std::move(out), ng, [ids_c, N, HW, Ctot](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    for (int n = 0; n < N; ++n) {
      int coff = 0;
      for (int src : ids_c) {
        const int C = tp.val(src).shape[1];
        if (tp.needs_grad(src)) {
          auto& gs = tp.grad(src);
          const T* gp = g.data.data() + (static_cast<std::size_t>(n) * Ctot + coff) * HW;
          T* dp = gs.data.data() + static_cast<std::size_t>(n) * C * HW;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(C) * HW; ++i) dp[i] += gp[i];
        }
        coff += C;
      }
    }
  });
}

}  // namespace autopose
