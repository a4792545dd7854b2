#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dhmamba/mrisim.hpp"
#include "dhmamba/oracles.hpp"

using namespace dhm;

TEST_CASE("cartesian mask: center block, column structure, determinism") {
  const MaskSpec m = cartesian_mask(24, 100, 4, 7);
  // 8 central columns always sampled (8% of 100)
  int center_cols = 0;
  for (int j = 0; j < 100; ++j) {
    bool col = m.at(0, j) == 1;
    // constant along the column
    for (int i = 1; i < 24; ++i) CHECK(m.at(i, j) == m.at(0, j));
    if (j >= 46 && j < 54) {
      CHECK(col);
      ++center_cols;
    }
  }
  CHECK(center_cols == 8);

  const MaskSpec m2 = cartesian_mask(24, 100, 4, 7);
  CHECK(m.mask == m2.mask);
  const MaskSpec m3 = cartesian_mask(24, 100, 4, 8);
  CHECK(m.mask != m3.mask);

  CHECK_THROWS(cartesian_mask(24, 100, 5, 7));  // other AFs use radial/random
  CHECK_THROWS(cartesian_mask(24, 4, 4, 7));    // W too small
}

TEST_CASE("cartesian AF=8 uses a 4% center") {
  const MaskSpec m = cartesian_mask(8, 100, 8, 3);
  int center = 0;
  for (int j = 48; j < 52; ++j) center += m.at(0, j);
  CHECK(center == 4);
}

TEST_CASE("cartesian mask Monte-Carlo fraction approximates 1/AF") {
  for (int af : {4, 8}) {
    double total = 0.0;
    const int trials = 300;
    for (int s = 0; s < trials; ++s) total += cartesian_mask(4, 256, af, 1000 + s).sampled_fraction();
    const double mean = total / trials;
    CHECK(mean > 0.9 / af);
    CHECK(mean < 1.1 / af);
  }
}

TEST_CASE("radial mask: fraction within 5% of 1/AF, center sampled") {
  for (int af : {4, 5, 8, 10}) {
    const MaskSpec m = radial_mask(64, 64, af, 2);
    const double f = m.sampled_fraction();
    CHECK(f >= 0.95 / af);
    CHECK(f <= 1.05 / af);
    CHECK(m.at(32, 32) == 1);  // every spoke passes through the centered DC
  }
  // odd grid: n=2 spokes pass through the exact center pixel
  const MaskSpec odd = radial_mask(33, 33, 10, 1);
  CHECK(odd.at(16, 16) == 1);
}

TEST_CASE("random mask: AF=1 all ones, center square, calibrated fraction") {
  const MaskSpec id = random_mask(16, 16, 1, 5);
  CHECK(id.sampled_fraction() == 1.0);

  const MaskSpec m = random_mask(64, 64, 4, 5);
  // 4% central square: side ~ sqrt(0.04*64*64) = 12.8 -> 13
  for (int i = 32 - 6; i < 32 + 6; ++i)
    for (int j = 32 - 6; j < 32 + 6; ++j) CHECK(m.at(i, j) == 1);

  double total = 0.0;
  const int trials = 200;
  for (int s = 0; s < trials; ++s) total += random_mask(64, 64, 4, s).sampled_fraction();
  CHECK(total / trials == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("phantom: determinism, bounds, symmetry of a single centered ellipse") {
  const Phantom a = make_phantom(32, 32, 11);
  const Phantom b = make_phantom(32, 32, 11);
  CHECK(a.magnitude == b.magnitude);
  CHECK(a.phase == b.phase);
  const Phantom c = make_phantom(32, 32, 12);
  CHECK(a.magnitude != c.magnitude);

  for (double v : a.magnitude) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (double v : a.phase) CHECK(std::isfinite(v));

  // single centered axis-aligned ellipse: symmetric under both axis flips
  const Phantom e = make_phantom(31, 31, 3, 1);
  for (int i = 0; i < 31; ++i)
    for (int j = 0; j < 31; ++j) {
      CHECK(e.magnitude[static_cast<size_t>(i) * 31 + j] ==
            doctest::Approx(e.magnitude[static_cast<size_t>(30 - i) * 31 + j]));
      CHECK(e.magnitude[static_cast<size_t>(i) * 31 + j] ==
            doctest::Approx(e.magnitude[static_cast<size_t>(i) * 31 + (30 - j)]));
    }
}

TEST_CASE("phantom mean magnitude over seeds stays inside (0, 1)") {
  double acc = 0.0;
  for (int s = 0; s < 100; ++s) {
    const Phantom p = make_phantom(16, 16, static_cast<uint64_t>(s));
    double m = 0.0;
    for (double v : p.magnitude) m += v;
    acc += m / 256.0;
  }
  acc /= 100.0;
  CHECK(acc > 0.0);
  CHECK(acc < 1.0);
}

TEST_CASE("undersample: identity, zero, and masked-entry semantics") {
  const Phantom ph = make_phantom(16, 16, 9);
  const ComplexGrid gt = ph.complex_image();

  MaskSpec ones;
  ones.h = ones.w = 16;
  ones.mask.assign(256, 1);
  const Undersampled ui = undersample(gt, ones);
  for (size_t i = 0; i < gt.re.size(); ++i) {
    CHECK(std::abs(ui.image.re[i] - gt.re[i]) < 1e-10);
    CHECK(std::abs(ui.image.im[i] - gt.im[i]) < 1e-10);
  }

  MaskSpec zeros = ones;
  zeros.mask.assign(256, 0);
  const Undersampled uz = undersample(gt, zeros);
  for (size_t i = 0; i < gt.re.size(); ++i) {
    CHECK(uz.image.re[i] == 0.0);
    CHECK(uz.k_s.re[i] == 0.0);
  }

  // masked entries are exactly zero, kept entries equal the full transform
  const MaskSpec m = cartesian_mask(16, 16, 4, 21);
  const Undersampled um = undersample(gt, m);
  const ComplexGrid K = fft2(gt);
  const ComplexGrid mg = [&] {
    ComplexGrid g(16, 16);
    for (size_t i = 0; i < m.mask.size(); ++i) g.re[i] = m.mask[i];
    return ifftshift(g);
  }();
  for (size_t i = 0; i < K.re.size(); ++i) {
    if (mg.re[i] == 0.0) {
      CHECK(um.k_s.re[i] == 0.0);
      CHECK(um.k_s.im[i] == 0.0);
    } else {
      CHECK(um.k_s.re[i] == doctest::Approx(K.re[i]));
      CHECK(um.k_s.im[i] == doctest::Approx(K.im[i]));
    }
  }

  MaskSpec bad = ones;
  bad.w = 8;
  CHECK_THROWS(undersample(gt, bad));
}

TEST_CASE("metrics: perfect reconstruction and closed forms") {
  const Phantom ph = make_phantom(16, 16, 31);
  const MetricsReport r = compute_metrics(ph.magnitude, ph.magnitude, 16, 16);
  CHECK(r.nmse == 0.0);
  CHECK(r.ssim == doctest::Approx(1.0));
  CHECK(r.psnr == 100.0);

  // constant offset on a range-1 image: MSE = c^2, PSNR = -20 log10|c|
  std::vector<double> x(64, 0.0), xh(64, 0.1);
  x[0] = 1.0;
  xh[0] = 1.1;
  const MetricsReport r2 = compute_metrics(xh, x, 8, 8);
  CHECK(r2.psnr == doctest::Approx(-20.0 * std::log10(0.1)).epsilon(1e-10));

  CHECK_THROWS(compute_metrics(xh, std::vector<double>(64, 0.0), 8, 8));
}

TEST_CASE("ssim matches the direct sliding-window reference") {
  Rng rng(33);
  std::vector<double> a(8 * 8), b(8 * 8);
  for (auto& v : a) v = rng.uniform(0.0, 1.0);
  for (size_t i = 0; i < b.size(); ++i) b[i] = a[i] + 0.1 * rng.normal();
  double mx = 0.0;
  for (double v : a) mx = std::max(mx, v);
  const MetricsReport r = compute_metrics(b, a, 8, 8);
  CHECK(std::abs(r.ssim - oracle::ssim_reference(b, a, 8, 8, mx)) < 1e-10);
}

TEST_CASE("zero-filled quality degrades with acceleration") {
  const Phantom ph = make_phantom(32, 32, 77);
  const ComplexGrid gt = ph.complex_image();
  const std::vector<double> ref = magnitude_of(gt);
  const Undersampled u4 = undersample(gt, cartesian_mask(32, 32, 4, 1));
  const MetricsReport r4 = compute_metrics(magnitude_of(u4.image), ref, 32, 32);
  CHECK(r4.psnr < 100.0);
  CHECK(r4.nmse > 0.0);
}

TEST_CASE("pgm export writes a valid header and is deterministic") {
  const MaskSpec m = cartesian_mask(8, 16, 4, 3);
  write_pgm("mask_a.pgm", m);
  write_pgm("mask_b.pgm", m);
  std::ifstream fa("mask_a.pgm", std::ios::binary), fb("mask_b.pgm", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(sa.substr(0, 3) == "P5\n");
  CHECK(sa.find("16 8\n255\n") != std::string::npos);
  CHECK(sa.size() == sa.find("255\n") + 4 + 8 * 16);
  std::remove("mask_a.pgm");
  std::remove("mask_b.pgm");
}
