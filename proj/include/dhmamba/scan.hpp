#pragma once

#include <array>
#include <vector>

#include "dhmamba/tensor.hpp"

namespace dhm {

// Bijective ordering of H x W grid positions. order[t] is the flattened
// row-major position visited at step t; inverse[order[t]] == t.
struct ScanPath {
  int h = 0, w = 0;
  std::vector<int> order;
  std::vector<int> inverse;

  static ScanPath from_order(int h, int w, std::vector<int> order);
  bool is_permutation() const;
};

// Raster paths delta_1..delta_4: row-major forward, row-major reversed,
// column-major forward, column-major reversed.
std::array<ScanPath, 4> raster_paths(int h, int w);

// Circular paths xi_1..xi_4 over a centered-DC grid: concentric Chebyshev
// rings around (floor(H/2), floor(W/2)), positions within a ring ordered by
// angle. The four paths are (start 0 deg, cw), (start 0 deg, ccw),
// (start 180 deg, cw), (start 180 deg, ccw).
std::array<ScanPath, 4> circular_paths(int h, int w);

// Chebyshev ring index of flattened position p on an H x W grid.
int ring_index(int h, int w, int p);

// [B,C,H,W] -> [B,C,L]: sequence element t is the feature at order[t].
Tensor apply_path(const Tensor& f, const ScanPath& p);
// Exact inverse of apply_path.
Tensor invert_path(const Tensor& seq, const ScanPath& p);

// Strided depthwise convolution with per-channel s x s kernels ([C,1,s,s]).
// H and W must be divisible by s (callers replicate-pad beforehand).
Tensor hierarchical_downsample(const Tensor& f, int s, const Tensor& kernel);

}  // namespace dhm
