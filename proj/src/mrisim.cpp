#include "dhmamba/mrisim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace dhm {

double MaskSpec::sampled_fraction() const {
  int64_t n = 0;
  for (uint8_t v : mask) n += v;
  return static_cast<double>(n) / (static_cast<double>(h) * w);
}

MaskSpec cartesian_mask(int h, int w, int af, uint64_t seed) {
  if (w < 8) throw std::invalid_argument("cartesian_mask: W must be >= 8");
  if (af != 4 && af != 8)
    throw std::invalid_argument("cartesian_mask: AF must be 4 or 8 (use radial/random otherwise)");
  const double frac = (af == 4) ? 0.08 : 0.04;
  const int n_center = static_cast<int>(std::floor(frac * w + 0.5));
  MaskSpec m;
  m.kind = MaskKind::cartesian1d;
  m.h = h;
  m.w = w;
  m.af = af;
  m.center_fraction = frac;
  m.seed = seed;
  m.mask.assign(static_cast<size_t>(h) * w, 0);

  const int c0 = w / 2 - n_center / 2;  // center block around the DC column
  std::vector<uint8_t> cols(static_cast<size_t>(w), 0);
  for (int j = c0; j < c0 + n_center; ++j) cols[static_cast<size_t>(j)] = 1;

  double p = (static_cast<double>(w) / af - n_center) / (w - n_center);
  if (p < 0.0) {
    std::cerr << "cartesian_mask: center lines already exceed W/AF budget; "
                 "clamping sample probability to 0\n";
    p = 0.0;
  }
  Rng rng(seed, "mask.cartesian");
  for (int j = 0; j < w; ++j)
    if (!cols[static_cast<size_t>(j)] && rng.bernoulli(p)) cols[static_cast<size_t>(j)] = 1;

  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) m.mask[static_cast<size_t>(i) * w + j] = cols[static_cast<size_t>(j)];
  return m;
}

namespace {

// Pixels of one spoke at angle theta through the centered DC, ordered from the
// center outward; half-pixel steps avoid gaps in the rasterization.
std::vector<std::pair<int, int>> spoke_pixels(int h, int w, double theta) {
  const int ci = h / 2, cj = w / 2;
  const double di = std::sin(theta), dj = std::cos(theta);
  const double rmax = std::hypot(static_cast<double>(h), static_cast<double>(w));
  std::vector<std::pair<int, int>> px;
  std::pair<int, int> last{-1, -1};
  for (double t = 0.0; t <= rmax; t += 0.5) {
    const int i = ci + static_cast<int>(std::lround(t * di));
    const int j = cj + static_cast<int>(std::lround(t * dj));
    if (i < 0 || i >= h || j < 0 || j >= w) break;
    if (std::pair<int, int>{i, j} != last) {
      px.emplace_back(i, j);
      last = {i, j};
    }
  }
  return px;
}

int64_t paint_spokes(std::vector<uint8_t>& mask, int h, int w, int n_spokes,
                     int64_t partial_budget) {
  // partial_budget < 0 paints every spoke fully; otherwise painting stops as
  // soon as the newly painted count reaches the budget, leaving the spoke in
  // progress partially drawn (center outward).
  int64_t painted = 0;
  for (int k = 0; k < n_spokes; ++k) {
    const double theta = 2.0 * M_PI * k / n_spokes;  // full circle: spokes are rays
    for (auto [i, j] : spoke_pixels(h, w, theta)) {
      uint8_t& cell = mask[static_cast<size_t>(i) * w + j];
      if (!cell) {
        cell = 1;
        ++painted;
        if (partial_budget >= 0 && painted >= partial_budget) return painted;
      }
    }
  }
  return painted;
}

int64_t count_spoke_coverage(int h, int w, int n_spokes) {
  std::vector<uint8_t> scratch(static_cast<size_t>(h) * w, 0);
  return paint_spokes(scratch, h, w, n_spokes, -1);
}

}  // namespace

MaskSpec radial_mask(int h, int w, int af, uint64_t seed) {
  if (af < 2) throw std::invalid_argument("radial_mask: AF must be >= 2");
  MaskSpec m;
  m.kind = MaskKind::radial;
  m.h = h;
  m.w = w;
  m.af = af;
  m.seed = seed;
  m.mask.assign(static_cast<size_t>(h) * w, 0);

  const double total = static_cast<double>(h) * w;
  const int64_t target = static_cast<int64_t>(std::llround(total / af));
  const int64_t lo_ok = static_cast<int64_t>(std::ceil(0.95 * total / af));
  const int64_t hi_ok = static_cast<int64_t>(std::floor(1.05 * total / af));
  if (target < 1) throw std::runtime_error("radial_mask: target fraction unreachable");

  // Smallest spoke count whose full coverage meets the target; the final
  // spoke is then drawn partially (center outward) to land on it exactly.
  int lo = 1, hi = 4 * (h + w);
  if (count_spoke_coverage(h, w, hi) < target)
    throw std::runtime_error("radial_mask: target fraction unreachable with spokes");
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    if (count_spoke_coverage(h, w, mid) >= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  const int64_t painted = paint_spokes(m.mask, h, w, lo, target);
  if (painted < lo_ok || painted > hi_ok)
    throw std::runtime_error("radial_mask: calibration failed to land within 5% of 1/AF");
  return m;
}

MaskSpec random_mask(int h, int w, int af, uint64_t seed) {
  if (af < 1) throw std::invalid_argument("random_mask: AF must be >= 1");
  MaskSpec m;
  m.kind = MaskKind::random2d;
  m.h = h;
  m.w = w;
  m.af = af;
  m.seed = seed;
  m.mask.assign(static_cast<size_t>(h) * w, 0);
  if (af == 1) {
    std::fill(m.mask.begin(), m.mask.end(), 1);
    return m;
  }

  // Central square covering 4% of the area, centered on DC.
  const double total = static_cast<double>(h) * w;
  const int side_i = std::max(1, std::min(h, static_cast<int>(std::lround(std::sqrt(0.04 * total)))));
  const int side_j = std::max(1, std::min(w, side_i));
  const int i0 = h / 2 - side_i / 2, j0 = w / 2 - side_j / 2;
  int64_t n_center = 0;
  for (int i = i0; i < i0 + side_i; ++i)
    for (int j = j0; j < j0 + side_j; ++j) {
      m.mask[static_cast<size_t>(i) * w + j] = 1;
      ++n_center;
    }
  m.center_fraction = static_cast<double>(n_center) / total;

  double p = (total / af - static_cast<double>(n_center)) / (total - static_cast<double>(n_center));
  if (p < 0.0) {
    std::cerr << "random_mask: center square already exceeds 1/AF budget; "
                 "clamping sample probability to 0\n";
    p = 0.0;
  }
  Rng rng(seed, "mask.random2d");
  for (size_t idx = 0; idx < m.mask.size(); ++idx)
    if (!m.mask[idx] && rng.bernoulli(p)) m.mask[idx] = 1;
  return m;
}

ComplexGrid Phantom::complex_image() const {
  ComplexGrid g(h, w);
  for (size_t idx = 0; idx < magnitude.size(); ++idx) {
    g.re[idx] = magnitude[idx] * std::cos(phase[idx]);
    g.im[idx] = magnitude[idx] * std::sin(phase[idx]);
  }
  return g;
}

Phantom make_phantom(int h, int w, uint64_t seed, int n_ellipses) {
  if (n_ellipses < 1) throw std::invalid_argument("make_phantom: n_ellipses must be >= 1");
  Phantom p;
  p.h = h;
  p.w = w;
  p.magnitude.assign(static_cast<size_t>(h) * w, 0.0);
  p.phase.assign(static_cast<size_t>(h) * w, 0.0);

  Rng rng(seed, "phantom");
  // Coordinates normalized to [-1, 1] in both axes.
  for (int e = 0; e < n_ellipses; ++e) {
    // First ellipse is a centered, axis-aligned "skull" so even n_ellipses=1
    // gives a symmetric, non-trivial image.
    const double cx = (e == 0) ? 0.0 : rng.uniform(-0.5, 0.5);
    const double cy = (e == 0) ? 0.0 : rng.uniform(-0.5, 0.5);
    const double ax = (e == 0) ? 0.8 : rng.uniform(0.1, 0.5);
    const double ay = (e == 0) ? 0.7 : rng.uniform(0.1, 0.5);
    const double ang = (e == 0) ? 0.0 : rng.uniform(0.0, M_PI);
    const double amp = (e == 0) ? 0.6 : rng.uniform(-0.35, 0.45);
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (int i = 0; i < h; ++i) {
      const double y = (h > 1) ? (2.0 * i / (h - 1) - 1.0) : 0.0;
      for (int j = 0; j < w; ++j) {
        const double x = (w > 1) ? (2.0 * j / (w - 1) - 1.0) : 0.0;
        const double u = ca * (x - cx) + sa * (y - cy);
        const double v = -sa * (x - cx) + ca * (y - cy);
        if ((u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0)
          p.magnitude[static_cast<size_t>(i) * w + j] += amp;
      }
    }
  }
  for (double& v : p.magnitude) v = std::clamp(v, 0.0, 1.0);

  // Smooth quadratic phase surface with small seeded coefficients.
  const double a0 = rng.uniform(-0.5, 0.5), a1 = rng.uniform(-0.5, 0.5);
  const double a2 = rng.uniform(-0.5, 0.5), a3 = rng.uniform(-0.5, 0.5);
  const double a4 = rng.uniform(-0.5, 0.5), a5 = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < h; ++i) {
    const double y = (h > 1) ? (2.0 * i / (h - 1) - 1.0) : 0.0;
    for (int j = 0; j < w; ++j) {
      const double x = (w > 1) ? (2.0 * j / (w - 1) - 1.0) : 0.0;
      p.phase[static_cast<size_t>(i) * w + j] =
          a0 + a1 * x + a2 * y + a3 * x * x + a4 * y * y + a5 * x * y;
    }
  }
  return p;
}

Undersampled undersample(const ComplexGrid& ground_truth, const MaskSpec& mask) {
  if (ground_truth.h != mask.h || ground_truth.w != mask.w)
    throw std::invalid_argument("undersample: shape mismatch");
  ComplexGrid mgrid(mask.h, mask.w);
  for (size_t idx = 0; idx < mask.mask.size(); ++idx) mgrid.re[idx] = mask.mask[idx];
  const ComplexGrid m_unshifted = ifftshift(mgrid);

  Undersampled out;
  out.k_s = fft2(ground_truth);
  for (size_t idx = 0; idx < out.k_s.re.size(); ++idx) {
    out.k_s.re[idx] *= m_unshifted.re[idx];
    out.k_s.im[idx] *= m_unshifted.re[idx];
  }
  out.image = ifft2(out.k_s);
  return out;
}

double magnitude_of(const ComplexGrid& g, std::vector<double>& out) {
  out.resize(g.re.size());
  double mx = 0.0;
  for (size_t idx = 0; idx < out.size(); ++idx) {
    out[idx] = std::hypot(g.re[idx], g.im[idx]);
    mx = std::max(mx, out[idx]);
  }
  return mx;
}

std::vector<double> magnitude_of(const ComplexGrid& g) {
  std::vector<double> out;
  magnitude_of(g, out);
  return out;
}

MetricsReport compute_metrics(const std::vector<double>& x_hat, const std::vector<double>& x,
                              int h, int w) {
  const size_t n = static_cast<size_t>(h) * w;
  if (x_hat.size() != n || x.size() != n)
    throw std::invalid_argument("compute_metrics: shape mismatch");

  double ref_energy = 0.0, err_energy = 0.0, ref_max = 0.0;
  for (size_t idx = 0; idx < n; ++idx) {
    ref_energy += x[idx] * x[idx];
    const double d = x_hat[idx] - x[idx];
    err_energy += d * d;
    ref_max = std::max(ref_max, x[idx]);
  }
  if (ref_energy == 0.0) throw std::invalid_argument("compute_metrics: zero reference image");

  MetricsReport r;
  r.nmse = err_energy / ref_energy;
  const double mse = err_energy / static_cast<double>(n);
  r.psnr = (mse == 0.0) ? 100.0 : std::min(100.0, 10.0 * std::log10(ref_max * ref_max / mse));

  // SSIM: 7x7 uniform window, valid positions only (windows fully inside).
  const double L = ref_max;
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const int win = 7;
  double acc = 0.0;
  int64_t count = 0;
  if (h >= win && w >= win) {
    for (int i = 0; i + win <= h; ++i) {
      for (int j = 0; j + win <= w; ++j) {
        double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
        for (int di = 0; di < win; ++di)
          for (int dj = 0; dj < win; ++dj) {
            const double a = x_hat[static_cast<size_t>(i + di) * w + (j + dj)];
            const double b = x[static_cast<size_t>(i + di) * w + (j + dj)];
            mu_a += a;
            mu_b += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
          }
        const double nn = win * win;
        mu_a /= nn;
        mu_b /= nn;
        const double va = saa / nn - mu_a * mu_a;
        const double vb = sbb / nn - mu_b * mu_b;
        const double cov = sab / nn - mu_a * mu_b;
        acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
        ++count;
      }
    }
  } else {
    // Image smaller than the window: one global window.
    double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
    for (size_t idx = 0; idx < n; ++idx) {
      const double a = x_hat[idx], b = x[idx];
      mu_a += a;
      mu_b += b;
      saa += a * a;
      sbb += b * b;
      sab += a * b;
    }
    const double nn = static_cast<double>(n);
    mu_a /= nn;
    mu_b /= nn;
    const double va = saa / nn - mu_a * mu_a;
    const double vb = sbb / nn - mu_b * mu_b;
    const double cov = sab / nn - mu_a * mu_b;
    acc = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
          ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    count = 1;
  }
  r.ssim = acc / static_cast<double>(count);
  return r;
}

namespace {

void write_pgm_bytes(const std::string& path, const std::vector<uint8_t>& bytes, int h, int w) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + tmp);
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_pgm(const std::string& path, const std::vector<double>& img, int h, int w) {
  if (img.size() != static_cast<size_t>(h) * w)
    throw std::invalid_argument("write_pgm: shape mismatch");
  double mx = 0.0;
  for (double v : img) mx = std::max(mx, v);
  if (mx <= 0.0) mx = 1.0;
  std::vector<uint8_t> bytes(img.size());
  for (size_t idx = 0; idx < img.size(); ++idx) {
    const double v = std::clamp(img[idx] / mx, 0.0, 1.0);
    bytes[idx] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  write_pgm_bytes(path, bytes, h, w);
}

void write_pgm(const std::string& path, const MaskSpec& mask) {
  std::vector<uint8_t> bytes(mask.mask.size());
  for (size_t idx = 0; idx < bytes.size(); ++idx) bytes[idx] = mask.mask[idx] ? 255 : 0;
  write_pgm_bytes(path, bytes, mask.h, mask.w);
}

}  // namespace dhm
