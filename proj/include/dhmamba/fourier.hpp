#pragma once

#include <complex>
#include <vector>

#include "dhmamba/tensor.hpp"

namespace dhm {

// H x W complex grid, row-major. Carries k-space data and FFT results.
struct ComplexGrid {
  int h = 0, w = 0;
  std::vector<double> re, im;

  ComplexGrid() = default;
  ComplexGrid(int height, int width)
      : h(height), w(width), re(static_cast<size_t>(height) * width, 0.0),
        im(static_cast<size_t>(height) * width, 0.0) {}

  int64_t size() const { return static_cast<int64_t>(h) * w; }
  std::complex<double> at(int i, int j) const {
    return {re[static_cast<size_t>(i) * w + j], im[static_cast<size_t>(i) * w + j]};
  }
  void set(int i, int j, std::complex<double> v) {
    re[static_cast<size_t>(i) * w + j] = v.real();
    im[static_cast<size_t>(i) * w + j] = v.imag();
  }
};

// Unnormalized forward 2D DFT; radix-2 along power-of-two extents, direct DFT
// otherwise. ifft2 applies the 1/(H*W) normalization so ifft2(fft2(g)) == g.
ComplexGrid fft2(const ComplexGrid& g);
ComplexGrid ifft2(const ComplexGrid& g);

// Moves the DC bin to (floor(H/2), floor(W/2)); ifftshift is the exact inverse
// for all parities.
ComplexGrid fftshift(const ComplexGrid& g);
ComplexGrid ifftshift(const ComplexGrid& g);

// Autodiff bridges between the image branch (real channels) and the k-space
// branch (re/im packed as 2C real channels, centered spectrum):
//   fft2_pack:        [B,C,H,W] -> [B,2C,H,W], channel c -> (Re, Im) of
//                     fftshift(fft2(channel)) at c and C+c.
//   ifft2_unpack_real:[B,2C,H,W] -> [B,C,H,W], real part of
//                     ifft2(ifftshift(complex channel pair)).
Tensor fft2_pack(const Tensor& x);
Tensor ifft2_unpack_real(const Tensor& x);

}  // namespace dhm
