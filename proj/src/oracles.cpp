#include "dhmamba/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dhm::oracle {

ComplexGrid dft2(const ComplexGrid& g, bool inverse) {
  const int h = g.h, w = g.w;
  const double sign = inverse ? 1.0 : -1.0;
  ComplexGrid out(h, w);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double ang =
              sign * 2.0 * M_PI *
              (static_cast<double>(u) * i / h + static_cast<double>(v) * j / w);
          acc += g.at(i, j) * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      if (inverse) acc /= static_cast<double>(h) * w;
      out.set(u, v, acc);
    }
  return out;
}

std::vector<double> conv2d_reference(const std::vector<double>& x, int b, int cin, int h, int w,
                                     const std::vector<double>& weight, int cout, int kh, int kw,
                                     const std::vector<double>& bias, int stride, int padding,
                                     int groups) {
  if (cin % groups != 0 || cout % groups != 0)
    throw std::invalid_argument("conv2d_reference: bad groups");
  const int cing = cin / groups, coutg = cout / groups;
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(b) * cout * oh * ow, 0.0);
  for (int n = 0; n < b; ++n)
    for (int oc = 0; oc < cout; ++oc) {
      const int g = oc / coutg;
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(oc)];
          for (int ic = 0; ic < cing; ++ic)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int ii = oi * stride - padding + ki;
                const int jj = oj * stride - padding + kj;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                const size_t xi =
                    ((static_cast<size_t>(n) * cin + (g * cing + ic)) * h + ii) * w + jj;
                const size_t wi =
                    ((static_cast<size_t>(oc) * cing + ic) * kh + ki) * kw + kj;
                acc += x[xi] * weight[wi];
              }
          y[((static_cast<size_t>(n) * cout + oc) * oh + oi) * ow + oj] = acc;
        }
    }
  return y;
}

namespace {

// Quadrant of (di, dj) offsets measured like atan2(di, dj) in [0, 2pi):
// 0: dj > 0, di >= 0; 1: dj <= 0, di > 0; 2: dj < 0, di <= 0; 3: dj >= 0, di < 0.
int quadrant(int di, int dj) {
  if (dj > 0 && di >= 0) return 0;
  if (dj <= 0 && di > 0) return 1;
  if (dj < 0 && di <= 0) return 2;
  return 3;
}

// true if angle of p is strictly less than angle of q (both nonzero offsets).
bool angle_less(std::pair<int, int> p, std::pair<int, int> q) {
  const int qp = quadrant(p.first, p.second), qq = quadrant(q.first, q.second);
  if (qp != qq) return qp < qq;
  // same quadrant: compare via cross product, positive means p comes first ccw
  const long long cross = static_cast<long long>(p.second) * q.first -
                          static_cast<long long>(p.first) * q.second;
  return cross > 0;
}

}  // namespace

std::vector<int> circular_order_reference(int h, int w, bool start_at_180, bool clockwise) {
  const int ci = h / 2, cj = w / 2;
  std::vector<int> pos(static_cast<size_t>(h) * w);
  std::iota(pos.begin(), pos.end(), 0);

  auto ring = [&](int p) {
    const int i = p / w, j = p % w;
    return std::max(std::abs(i - ci), std::abs(j - cj));
  };
  // Rotate offsets so the start angle maps to angle zero, mirroring for
  // clockwise order; then angle_less gives the within-ring order directly.
  auto key_offsets = [&](int p) {
    int di = p / w - ci, dj = p % w - cj;
    if (start_at_180) {
      di = -di;
      dj = -dj;
    }
    if (clockwise) di = -di;
    return std::pair<int, int>{di, dj};
  };

  std::stable_sort(pos.begin(), pos.end(), [&](int p, int q) {
    const int rp = ring(p), rq = ring(q);
    if (rp != rq) return rp < rq;
    if (rp == 0) return false;
    const auto op = key_offsets(p), oq = key_offsets(q);
    if (op != oq && (angle_less(op, oq) || angle_less(oq, op)))
      return angle_less(op, oq);
    // exact angle tie: row-major position
    return p < q;
  });
  return pos;
}

double ssim_reference(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                      double data_range) {
  const int win = 7;
  if (h < win || w < win) throw std::invalid_argument("ssim_reference: image below window size");
  const double c1 = std::pow(0.01 * data_range, 2), c2 = std::pow(0.03 * data_range, 2);
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i + win <= h; ++i)
    for (int j = 0; j + win <= w; ++j) {
      std::vector<double> wa, wb;
      for (int di = 0; di < win; ++di)
        for (int dj = 0; dj < win; ++dj) {
          wa.push_back(a[static_cast<size_t>(i + di) * w + (j + dj)]);
          wb.push_back(b[static_cast<size_t>(i + di) * w + (j + dj)]);
        }
      const double n = static_cast<double>(wa.size());
      const double ma = std::accumulate(wa.begin(), wa.end(), 0.0) / n;
      const double mb = std::accumulate(wb.begin(), wb.end(), 0.0) / n;
      double va = 0, vb = 0, cov = 0;
      for (size_t k = 0; k < wa.size(); ++k) {
        va += (wa[k] - ma) * (wa[k] - ma);
        vb += (wb[k] - mb) * (wb[k] - mb);
        cov += (wa[k] - ma) * (wb[k] - mb);
      }
      va /= n;
      vb /= n;
      cov /= n;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / count;
}

double fd_max_rel_err(const std::function<Tensor()>& scalar_fn, std::vector<Tensor> leaves,
                      double eps, int max_checks_per_leaf, uint64_t probe_seed) {
  // analytic pass
  for (Tensor& t : leaves) t.zero_grad();
  Tensor out = scalar_fn();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : leaves)
    analytic.push_back(t.has_grad() ? t.grad()
                                    : std::vector<double>(static_cast<size_t>(t.size()), 0.0));

  Rng rng(probe_seed, "fd.probe");
  double worst = 0.0;
  NoGradGuard ng;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& t = leaves[li];
    const int64_t n = t.size();
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (max_checks_per_leaf > 0 && n > max_checks_per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      idx.resize(static_cast<size_t>(max_checks_per_leaf));
    }
    for (int64_t k : idx) {
      double* p = t.data() + k;
      const double saved = *p;
      *p = saved + eps;
      const double fp = scalar_fn().item();
      *p = saved - eps;
      const double fm = scalar_fn().item();
      *p = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[li][static_cast<size_t>(k)];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-2});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dhm::oracle
