#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhmamba/fourier.hpp"
#include "dhmamba/rng.hpp"

namespace dhm {

enum class MaskKind { cartesian1d, radial, random2d };

// Binary sampling pattern aligned to the *centered* spectrum (DC at
// (floor(H/2), floor(W/2))); callers ifftshift it before multiplying an
// unshifted transform.
struct MaskSpec {
  MaskKind kind = MaskKind::cartesian1d;
  int h = 0, w = 0;
  int af = 0;
  double center_fraction = 0.0;
  uint64_t seed = 0;
  std::vector<uint8_t> mask;  // H*W, row-major, values in {0,1}

  uint8_t at(int i, int j) const { return mask[static_cast<size_t>(i) * w + j]; }
  double sampled_fraction() const;
};

// Center columns always sampled: round(0.08*W) at AF=4, round(0.04*W) at AF=8.
// Remaining columns drawn Bernoulli(p) with p chosen so the expected total is
// W/AF (clamped to 0 with a warning if the center already exceeds the budget).
MaskSpec cartesian_mask(int h, int w, int af, uint64_t seed);

// n equispaced spokes through the centered DC, n chosen so the sampled
// fraction lands within 5% of 1/AF; the last spoke may be drawn partially to
// hit the target. AF >= 2.
MaskSpec radial_mask(int h, int w, int af, uint64_t seed);

// Fully sampled central square covering 4% of the area plus Bernoulli(p)
// elsewhere calibrated to an expected 1/AF overall. AF=1 gives all ones.
MaskSpec random_mask(int h, int w, int af, uint64_t seed);

// Synthetic complex test image: sum of seeded random ellipses clipped to
// [0,1] with a smooth low-order polynomial phase.
struct Phantom {
  int h = 0, w = 0;
  std::vector<double> magnitude;  // in [0,1]
  std::vector<double> phase;

  ComplexGrid complex_image() const;
};

Phantom make_phantom(int h, int w, uint64_t seed, int n_ellipses = 6);

// K = fft2(I); K_s = ifftshift(mask) .* K; I_s = ifft2(K_s).
struct Undersampled {
  ComplexGrid k_s;
  ComplexGrid image;  // zero-filled reconstruction
};

Undersampled undersample(const ComplexGrid& ground_truth, const MaskSpec& mask);

struct MetricsReport {
  double nmse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;  // dB, capped at 100
};

// NMSE = ||x_hat - x||^2 / ||x||^2; PSNR = 10 log10(max(x)^2 / MSE) capped at
// 100 dB; SSIM with a 7x7 uniform window, K1=0.01, K2=0.03, data range max(x).
MetricsReport compute_metrics(const std::vector<double>& x_hat, const std::vector<double>& x,
                              int h, int w);

double magnitude_of(const ComplexGrid& g, std::vector<double>& out);  // returns max
std::vector<double> magnitude_of(const ComplexGrid& g);

// 8-bit binary PGM (P5), values scaled from [0, max] to [0, 255].
void write_pgm(const std::string& path, const std::vector<double>& img, int h, int w);
void write_pgm(const std::string& path, const MaskSpec& mask);

}  // namespace dhm
