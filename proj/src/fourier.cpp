#include "dhmamba/fourier.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dhm {

namespace {

using cd = std::complex<double>;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place radix-2 Cooley-Tukey, n a power of two. sign = -1 forward.
void fft_pow2(std::vector<cd>& a, int sign) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / len;
    const cd wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cd w(1.0);
      for (int k = 0; k < len / 2; ++k) {
        cd u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Direct DFT for non-power-of-two extents; desk-scale sizes keep O(n^2) cheap.
void dft_naive(std::vector<cd>& a, int sign) {
  const int n = static_cast<int>(a.size());
  std::vector<cd> out(n);
  std::vector<cd> tw(n);
  for (int k = 0; k < n; ++k) {
    const double ang = sign * 2.0 * std::numbers::pi * k / n;
    tw[k] = cd(std::cos(ang), std::sin(ang));
  }
  for (int k = 0; k < n; ++k) {
    cd acc(0.0);
    for (int t = 0; t < n; ++t) acc += a[t] * tw[static_cast<int>((static_cast<int64_t>(k) * t) % n)];
    out[k] = acc;
  }
  a = std::move(out);
}

void fft_1d(std::vector<cd>& a, int sign) {
  if (a.size() <= 1) return;
  if (is_pow2(static_cast<int>(a.size())))
    fft_pow2(a, sign);
  else
    dft_naive(a, sign);
}

// Row-column 2D transform, unnormalized.
ComplexGrid transform2d(const ComplexGrid& g, int sign) {
  ComplexGrid out = g;
  std::vector<cd> buf;
  buf.resize(static_cast<size_t>(g.w));
  for (int i = 0; i < g.h; ++i) {
    for (int j = 0; j < g.w; ++j) buf[j] = out.at(i, j);
    fft_1d(buf, sign);
    for (int j = 0; j < g.w; ++j) out.set(i, j, buf[j]);
  }
  buf.resize(static_cast<size_t>(g.h));
  for (int j = 0; j < g.w; ++j) {
    buf.resize(static_cast<size_t>(g.h));
    for (int i = 0; i < g.h; ++i) buf[i] = out.at(i, j);
    fft_1d(buf, sign);
    for (int i = 0; i < g.h; ++i) out.set(i, j, buf[i]);
  }
  return out;
}

ComplexGrid roll(const ComplexGrid& g, int di, int dj) {
  ComplexGrid out(g.h, g.w);
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) out.set((i + di) % g.h, (j + dj) % g.w, g.at(i, j));
  return out;
}

}  // namespace

ComplexGrid fft2(const ComplexGrid& g) { return transform2d(g, -1); }

ComplexGrid ifft2(const ComplexGrid& g) {
  ComplexGrid out = transform2d(g, +1);
  const double inv = 1.0 / static_cast<double>(g.size());
  for (auto& v : out.re) v *= inv;
  for (auto& v : out.im) v *= inv;
  return out;
}

ComplexGrid fftshift(const ComplexGrid& g) { return roll(g, g.h / 2, g.w / 2); }

ComplexGrid ifftshift(const ComplexGrid& g) {
  return roll(g, g.h - g.h / 2, g.w - g.w / 2);
}

namespace {

void check_4d_named(const Tensor& x, const char* op) {
  if (x.shape().size() != 4)
    throw std::invalid_argument(std::string(op) + ": expected 4D tensor, got " +
                                shape_str(x.shape()));
}

}  // namespace

Tensor fft2_pack(const Tensor& x) {
  check_4d_named(x, "fft2_pack");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  std::vector<double> y(static_cast<size_t>(B) * 2 * C * hw);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      ComplexGrid g(H, W);
      std::copy_n(x.data() + (static_cast<int64_t>(b) * C + c) * hw, hw, g.re.begin());
      ComplexGrid K = fftshift(fft2(g));
      // unitary scaling keeps spectral feature magnitudes comparable to the
      // image branch
      const double u = 1.0 / std::sqrt(static_cast<double>(hw));
      double* yre = y.data() + (static_cast<int64_t>(b) * 2 * C + c) * hw;
      double* yim = y.data() + (static_cast<int64_t>(b) * 2 * C + C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        yre[i] = u * K.re[i];
        yim[i] = u * K.im[i];
      }
    }
  auto xi = x.impl();
  return make_op_result(
      {B, 2 * C, H, W}, std::move(y), {x},
      [xi, B, C, H, W, hw](TensorImpl& self) {
        auto* gx = xi->requires_grad ? &xi->ensure_grad() : nullptr;
        if (!gx) return;
        // adjoint of the unitary (Re,Im)-split of fftshift . fft2 on a real
        // input: gx = Re( sqrt(H*W) * ifft2( ifftshift(gRe + i*gIm) ) )
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            ComplexGrid g(H, W);
            std::copy_n(self.grad.begin() + (static_cast<int64_t>(b) * 2 * C + c) * hw, hw,
                        g.re.begin());
            std::copy_n(self.grad.begin() + (static_cast<int64_t>(b) * 2 * C + C + c) * hw, hw,
                        g.im.begin());
            ComplexGrid adj = ifft2(ifftshift(g));
            const double scale = std::sqrt(static_cast<double>(hw));
            double* out = gx->data() + (static_cast<int64_t>(b) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) out[i] += scale * adj.re[i];
          }
      },
      "fft2_pack");
}

Tensor ifft2_unpack_real(const Tensor& x) {
  check_4d_named(x, "ifft2_unpack_real");
  const int C2 = x.dim(1);
  if (C2 % 2 != 0)
    throw std::invalid_argument("ifft2_unpack_real: channel count must be even (re/im pairs)");
  const int B = x.dim(0), C = C2 / 2, H = x.dim(2), W = x.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  std::vector<double> y(static_cast<size_t>(B) * C * hw);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      ComplexGrid g(H, W);
      std::copy_n(x.data() + (static_cast<int64_t>(b) * C2 + c) * hw, hw, g.re.begin());
      std::copy_n(x.data() + (static_cast<int64_t>(b) * C2 + C + c) * hw, hw, g.im.begin());
      ComplexGrid img = ifft2(ifftshift(g));
      const double s = std::sqrt(static_cast<double>(hw));  // undoes the unitary pack scale
      double* yo = y.data() + (static_cast<int64_t>(b) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) yo[i] = s * img.re[i];
    }
  auto xi = x.impl();
  return make_op_result(
      {B, C, H, W}, std::move(y), {x},
      [xi, B, C, C2, H, W, hw](TensorImpl& self) {
        auto* gx = xi->requires_grad ? &xi->ensure_grad() : nullptr;
        if (!gx) return;
        // adjoint of sqrt(H*W) * Re(ifft2 . ifftshift):
        // v = sqrt(H*W) * fftshift(ifft2(g_real)); grad(re) += Re(v),
        // grad(im) += -Im(v)
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            ComplexGrid g(H, W);
            std::copy_n(self.grad.begin() + (static_cast<int64_t>(b) * C + c) * hw, hw,
                        g.re.begin());
            ComplexGrid v = fftshift(ifft2(g));
            const double s = std::sqrt(static_cast<double>(hw));
            for (double& vv : v.re) vv *= s;
            for (double& vv : v.im) vv *= s;
            double* gre = gx->data() + (static_cast<int64_t>(b) * C2 + c) * hw;
            double* gim = gx->data() + (static_cast<int64_t>(b) * C2 + C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              gre[i] += v.re[i];
              gim[i] -= v.im[i];
            }
          }
      },
      "ifft2_unpack_real");
}

}  // namespace dhm
