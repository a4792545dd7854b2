#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dhmamba/rng.hpp"

namespace dhm {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

// Dense real tensor with reverse-mode autodiff. Values are immutable once
// written by the producing op; one forward/backward tape is confined to a
// single thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // uniform(-bound, bound) with bound = 1/sqrt(fan_in)
  static Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng, bool requires_grad = true);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int64_t size() const;
  double* data();
  const double* data() const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  bool has_grad() const;
  std::vector<double>& grad();              // allocates zeros on first use
  const std::vector<double>& grad() const;  // must exist
  void zero_grad();

  bool all_finite() const;

  // Reverse-mode pass from a scalar output. Visits each tape node once.
  void backward() const;

  // Detached copy sharing nothing with the tape.
  Tensor detach() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until needed
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// RAII switch: disable tape recording (e.g. inside finite-difference probes
// and evaluation loops).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Tape-node factory used by all ops (also by fourier/ssm custom ops).
Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> backward_fn,
                      const char* op);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);

enum class Act { gelu, silu, sigmoid, softplus };
Tensor activation(Act kind, const Tensor& x);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- shape / layout ----
Tensor pixel_shuffle(const Tensor& x, int r);    // [B,C*r^2,H,W] -> [B,C,H*r,W*r]
Tensor pixel_unshuffle(const Tensor& x, int r);  // inverse
enum class UpsampleMode { nearest, bilinear };
Tensor upsample(const Tensor& x, int s, UpsampleMode mode = UpsampleMode::nearest);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int c0, int c1);  // [c0, c1)
Tensor pad_replicate_br(const Tensor& x, int pad_h, int pad_w);  // bottom/right
Tensor crop_br(const Tensor& x, int out_h, int out_w);           // keep top-left

// Flatten [B,C,H,W] -> [B,C,L] with sequence element t taken at order[t]
// (flattened row-major positions); scatter is the exact inverse.
Tensor gather_positions(const Tensor& x, const std::vector<int>& order);
Tensor scatter_positions(const Tensor& seq, const std::vector<int>& order, int h, int w);

// ---- channel-structured ----
// y[b,c,...] = x[b,c,...] * s[c]
Tensor scale_channels(const Tensor& x, const Tensor& s);
// y[b,c,h,w] = x[b,c,h,w] * gate[b,c,0,0]
Tensor mul_channel_gate(const Tensor& x, const Tensor& gate);
Tensor global_avg_pool(const Tensor& x);  // [B,C,H,W] -> [B,C,1,1]

// ---- linear maps ----
// x [B,C,H,W], weight [O,C/groups,kh,kw], bias [O] (optional, pass undefined)
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups = 1);
// x [B,C,L], weight [O,C], bias [O] (optional): per-timestep projection
Tensor linear_seq(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Normalization over the channel axis at every (batch, position).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// ---- composite blocks ----
struct ChannelAttention {
  int ratio = 4;
  Tensor w1, b1;  // 1x1 conv C -> C/ratio
  Tensor w2, b2;  // 1x1 conv C/ratio -> C
  static ChannelAttention init(int channels, int ratio, Rng& rng);
};
// f scaled per channel by sigmoid(W2 * gelu(W1 * gap(f)))
Tensor channel_attention(const Tensor& f, const ChannelAttention& p);

Tensor l1_loss(const Tensor& a, const Tensor& b);  // mean absolute difference

}  // namespace dhm
