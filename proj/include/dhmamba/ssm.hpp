#pragma once

#include <vector>

#include "dhmamba/tensor.hpp"

namespace dhm {

// Learnable set for one S6 operator. A is diagonal per channel,
// A = -exp(A_log); B_t and C_t are projected from the channel vector and
// shared across channels per step; Delta_t is per channel via softplus.
struct S6Params {
  int channels = 0;
  int state_size = 0;
  Tensor A_log;    // [C, H]
  Tensor D;        // [C]
  Tensor W_B;      // [H, C]
  Tensor W_C;      // [H, C]
  Tensor W_delta;  // [C, C]
  Tensor b_delta;  // [C]

  static S6Params init(int channels, int state_size, Rng& rng);
};

// Per-timestep input-dependent parameters (inspection helper, not taped).
struct SelectiveInputs {
  int len = 0;
  std::vector<double> delta;  // [C, L] per channel
  std::vector<double> B;      // [H, L]
  std::vector<double> C;      // [H, L]
};

// Zero-order-hold discretization, elementwise on a diagonal A:
//   Abar = exp(delta*a)
//   Bbar = (exp(delta*a) - 1)/a * b, with the series limit delta*b*(1 +
//   delta*a/2) when |delta*a| < 1e-8.
// Throws if delta <= 0.
std::pair<double, double> discretize(double a, double b, double delta);
void discretize(const std::vector<double>& a, const std::vector<double>& b, double delta,
                std::vector<double>& a_bar, std::vector<double>& b_bar);

// Selective scan over [B,C,L]: h_k = Abar_k h_{k-1} + Bbar_k x_k,
// y_k = C_k . h_k + D x_k, with Delta/B/C produced from x_k. Differentiable
// with respect to x and all parameters.
Tensor s6_scan(const Tensor& x, const S6Params& p);

// The selective projections for a single batch item (oracle surface).
SelectiveInputs selective_params(const Tensor& x, const S6Params& p, int batch = 0);

// Frozen (input-independent, single-channel) forms used as the
// recurrence/convolution equivalence oracle pair. All vectors are length
// state_size.
std::vector<double> lti_kernel(const std::vector<double>& a_bar,
                               const std::vector<double>& b_bar,
                               const std::vector<double>& c, int len);
std::vector<double> frozen_scan(const std::vector<double>& a_bar,
                                const std::vector<double>& b_bar,
                                const std::vector<double>& c, double d,
                                const std::vector<double>& x);
// Causal convolution of x with kernel plus d*x.
std::vector<double> causal_conv(const std::vector<double>& kernel, double d,
                                const std::vector<double>& x);

}  // namespace dhm
