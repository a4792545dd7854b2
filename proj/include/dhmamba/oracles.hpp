#pragma once

#include <functional>
#include <vector>

#include "dhmamba/fourier.hpp"
#include "dhmamba/rng.hpp"
#include "dhmamba/tensor.hpp"

namespace dhm::oracle {

// Direct O(N^2)-per-axis DFT, written against the defining sum. Reference for
// the fast transform; forward unnormalized, inverse carries 1/(HW).
ComplexGrid dft2(const ComplexGrid& g, bool inverse = false);

// Direct convolution sum (cross-correlation, stride/padding/groups semantics
// identical to the tensor op); plain loops over output positions.
std::vector<double> conv2d_reference(const std::vector<double>& x, int b, int cin, int h, int w,
                                     const std::vector<double>& weight, int cout, int kh, int kw,
                                     const std::vector<double>& bias, int stride, int padding,
                                     int groups);

// Ring/angle ordering of grid positions computed with integer-only
// comparisons (quadrant classification + cross products), independent of the
// float sort used by the scan module. Returns flattened row-major positions.
std::vector<int> circular_order_reference(int h, int w, bool start_at_180, bool clockwise);

// Mean SSIM over all fully-interior 7x7 uniform windows, written directly
// from the windowed-statistics definition.
double ssim_reference(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                      double data_range);

// Central finite differences against the tape's analytic gradients.
// scalar_fn must rebuild the graph from the leaves on every call; up to
// max_checks_per_leaf randomly chosen elements of each leaf are probed.
// Error metric: |analytic - numeric| / max(|analytic|, |numeric|, 1e-2).
double fd_max_rel_err(const std::function<Tensor()>& scalar_fn, std::vector<Tensor> leaves,
                      double eps = 1e-5, int max_checks_per_leaf = 0, uint64_t probe_seed = 0);

}  // namespace dhm::oracle
