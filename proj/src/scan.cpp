#include "dhmamba/scan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dhm {

ScanPath ScanPath::from_order(int h, int w, std::vector<int> order) {
  const int64_t n = static_cast<int64_t>(h) * w;
  if (static_cast<int64_t>(order.size()) != n)
    throw std::invalid_argument("ScanPath: order length does not match H*W");
  ScanPath p;
  p.h = h;
  p.w = w;
  p.order = std::move(order);
  p.inverse.assign(static_cast<size_t>(n), -1);
  for (int64_t t = 0; t < n; ++t) {
    const int pos = p.order[t];
    if (pos < 0 || pos >= n || p.inverse[pos] != -1)
      throw std::invalid_argument("ScanPath: order is not a permutation");
    p.inverse[pos] = static_cast<int>(t);
  }
  return p;
}

bool ScanPath::is_permutation() const {
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != static_cast<int>(i)) return false;
  return true;
}

std::array<ScanPath, 4> raster_paths(int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("raster_paths: H, W must be >= 1");
  const int n = h * w;
  std::vector<int> row(n), col(n);
  for (int i = 0; i < n; ++i) row[i] = i;
  int t = 0;
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < h; ++i) col[t++] = i * w + j;
  std::vector<int> row_r(row.rbegin(), row.rend());
  std::vector<int> col_r(col.rbegin(), col.rend());
  return {ScanPath::from_order(h, w, std::move(row)),
          ScanPath::from_order(h, w, std::move(row_r)),
          ScanPath::from_order(h, w, std::move(col)),
          ScanPath::from_order(h, w, std::move(col_r))};
}

int ring_index(int h, int w, int p) {
  const int ci = h / 2, cj = w / 2;
  const int i = p / w, j = p % w;
  return std::max(std::abs(i - ci), std::abs(j - cj));
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

ScanPath circular_path(int h, int w, double start_angle, bool clockwise) {
  const int n = h * w;
  const int ci = h / 2, cj = w / 2;
  struct Key {
    int ring;
    double angle_key;
    int i, j;
  };
  std::vector<Key> keys(static_cast<size_t>(n));
  std::vector<int> order(static_cast<size_t>(n));
  for (int p = 0; p < n; ++p) {
    const int i = p / w, j = p % w;
    double a = std::atan2(static_cast<double>(i - ci), static_cast<double>(j - cj));
    if (a < 0) a += kTwoPi;  // [0, 2pi)
    double key = clockwise ? start_angle - a : a - start_angle;
    key = std::fmod(key + 2.0 * kTwoPi, kTwoPi);
    keys[p] = {std::max(std::abs(i - ci), std::abs(j - cj)), key, i, j};
    order[p] = p;
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Key &ka = keys[a], &kb = keys[b];
    if (ka.ring != kb.ring) return ka.ring < kb.ring;
    if (ka.angle_key != kb.angle_key) return ka.angle_key < kb.angle_key;
    if (ka.i != kb.i) return ka.i < kb.i;
    return ka.j < kb.j;
  });
  return ScanPath::from_order(h, w, std::move(order));
}

}  // namespace

std::array<ScanPath, 4> circular_paths(int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("circular_paths: H, W must be >= 1");
  return {circular_path(h, w, 0.0, true), circular_path(h, w, 0.0, false),
          circular_path(h, w, std::numbers::pi, true),
          circular_path(h, w, std::numbers::pi, false)};
}

Tensor apply_path(const Tensor& f, const ScanPath& p) {
  if (f.shape().size() != 4 || f.dim(2) != p.h || f.dim(3) != p.w)
    throw std::invalid_argument("apply_path: feature map " + shape_str(f.shape()) +
                                " does not match path " + std::to_string(p.h) + "x" +
                                std::to_string(p.w));
  return gather_positions(f, p.order);
}

Tensor invert_path(const Tensor& seq, const ScanPath& p) {
  if (seq.shape().size() != 3 || seq.dim(2) != p.h * p.w)
    throw std::invalid_argument("invert_path: sequence " + shape_str(seq.shape()) +
                                " does not match path length " + std::to_string(p.h * p.w));
  return scatter_positions(seq, p.order, p.h, p.w);
}

Tensor hierarchical_downsample(const Tensor& f, int s, const Tensor& kernel) {
  if (s < 1) throw std::invalid_argument("hierarchical_downsample: s must be >= 1");
  if (f.shape().size() != 4)
    throw std::invalid_argument("hierarchical_downsample: expected [B,C,H,W]");
  const int C = f.dim(1);
  if (kernel.shape() != Shape{C, 1, s, s})
    throw std::invalid_argument("hierarchical_downsample: kernel must be [C,1,s,s], got " +
                                shape_str(kernel.shape()));
  if (f.dim(2) % s != 0 || f.dim(3) % s != 0)
    throw std::invalid_argument("hierarchical_downsample: H, W must be divisible by s");
  return conv2d(f, kernel, Tensor(), s, 0, C);
}

}  // namespace dhm
