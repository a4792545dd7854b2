#include "dhmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace dhm {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check(numel(shape) == static_cast<int64_t>(data.size()),
        "Tensor::from: shape " + shape_str(shape) + " does not match data length " +
            std::to_string(data.size()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::uniform_fan_in(Shape shape, int fan_in, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  for (auto& v : t.impl()->data) v = rng.uniform(-bound, bound);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(impl_->data.size()); }
double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }

double Tensor::item() const {
  check(size() == 1, "Tensor::item: tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { impl_->requires_grad = rg; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::vector<double>& Tensor::grad() { return impl_->ensure_grad(); }
const std::vector<double>& Tensor::grad() const {
  check(!impl_->grad.empty(), "Tensor::grad: no gradient present");
  return impl_->grad;
}
void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  check(size() == 1, "backward: output must be scalar, shape " + shape_str(shape()));
  // Iterative DFS topological order; the tape is a DAG by construction, but a
  // cycle (hand-built impl graph) is detected via the on-stack mark.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> done;
  std::unordered_set<TensorImpl*> on_stack;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{impl_.get(), 0}};
  on_stack.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (done.count(p)) continue;
      if (on_stack.count(p)) throw std::runtime_error("backward: cycle detected in tape");
      on_stack.insert(p);
      stack.push_back({p, 0});
    } else {
      done.insert(f.node);
      on_stack.erase(f.node);
      topo.push_back(f.node);
      stack.pop_back();
    }
  }
  impl_->ensure_grad();
  impl_->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> backward_fn, const char* op) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) rg = rg || (p.defined() && p.requires_grad());
  }
  if (rg) {
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->op = op;
    for (const auto& p : parents)
      if (p.defined()) impl->parents.push_back(p.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return out;
}

namespace {

// Accumulate g into the parent's grad when it participates.
inline std::vector<double>* grad_of(const std::shared_ptr<TensorImpl>& p) {
  if (!p || !p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> y(a.size());
  for (int64_t i = 0; i < a.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_op_result(
      a.shape(), std::move(y), {a, b},
      [ai, bi](TensorImpl& self) {
        if (auto* ga = grad_of(ai))
          for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
        if (auto* gb = grad_of(bi))
          for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i];
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> y(a.size());
  for (int64_t i = 0; i < a.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_op_result(
      a.shape(), std::move(y), {a, b},
      [ai, bi](TensorImpl& self) {
        if (auto* ga = grad_of(ai))
          for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
        if (auto* gb = grad_of(bi))
          for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] -= self.grad[i];
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> y(a.size());
  for (int64_t i = 0; i < a.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_op_result(
      a.shape(), std::move(y), {a, b},
      [ai, bi](TensorImpl& self) {
        if (auto* ga = grad_of(ai))
          for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bi->data[i];
        if (auto* gb = grad_of(bi))
          for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * ai->data[i];
      },
      "mul");
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> y(a.size());
  for (int64_t i = 0; i < a.size(); ++i) y[i] = a.data()[i] * c;
  auto ai = a.impl();
  return make_op_result(
      a.shape(), std::move(y), {a},
      [ai, c](TensorImpl& self) {
        if (auto* ga = grad_of(ai))
          for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * c;
      },
      "scale");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor abs(const Tensor& a) {
  std::vector<double> y(a.size());
  for (int64_t i = 0; i < a.size(); ++i) y[i] = std::abs(a.data()[i]);
  auto ai = a.impl();
  return make_op_result(
      a.shape(), std::move(y), {a},
      [ai](TensorImpl& self) {
        if (auto* ga = grad_of(ai))
          for (size_t i = 0; i < self.grad.size(); ++i) {
            double x = ai->data[i];
            (*ga)[i] += self.grad[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
          }
      },
      "abs");
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double sigmoid_fn(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double softplus_fn(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double act_fwd(Act k, double x) {
  switch (k) {
    case Act::gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    case Act::silu: return x * sigmoid_fn(x);
    case Act::sigmoid: return sigmoid_fn(x);
    case Act::softplus: return softplus_fn(x);
  }
  return 0.0;
}

inline double act_bwd(Act k, double x) {
  switch (k) {
    case Act::gelu:
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    case Act::silu: {
      double s = sigmoid_fn(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case Act::sigmoid: {
      double s = sigmoid_fn(x);
      return s * (1.0 - s);
    }
    case Act::softplus: return sigmoid_fn(x);
  }
  return 0.0;
}

}  // namespace

Tensor activation(Act kind, const Tensor& x) {
  std::vector<double> y(x.size());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = act_fwd(kind, x.data()[i]);
  auto xi = x.impl();
  return make_op_result(
      x.shape(), std::move(y), {x},
      [xi, kind](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (size_t i = 0; i < self.grad.size(); ++i)
            (*gx)[i] += self.grad[i] * act_bwd(kind, xi->data[i]);
      },
      "activation");
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  auto xi = x.impl();
  return make_op_result(
      {1}, {acc}, {x},
      [xi](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (auto& g : *gx) g += self.grad[0];
      },
      "sum_all");
}

Tensor mean_all(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  const double inv = 1.0 / static_cast<double>(x.size());
  auto xi = x.impl();
  return make_op_result(
      {1}, {acc * inv}, {x},
      [xi, inv](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (auto& g : *gx) g += self.grad[0] * inv;
      },
      "mean_all");
}

// ---------------------------------------------------------------- layout

namespace {
void check_4d(const Tensor& x, const char* op) {
  check(x.shape().size() == 4, std::string(op) + ": expected 4D tensor, got " + shape_str(x.shape()));
}
}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
  check_4d(x, "pixel_shuffle");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(r >= 1, "pixel_shuffle: r must be >= 1");
  check(C % (r * r) == 0, "pixel_shuffle: channel count " + std::to_string(C) +
                              " not divisible by r^2=" + std::to_string(r * r));
  const int Co = C / (r * r), Ho = H * r, Wo = W * r;
  std::vector<double> y(static_cast<size_t>(x.size()));
  auto src_index = [=](int b, int co, int oh, int ow) {
    int h = oh / r, dr = oh % r, w = ow / r, dc = ow % r;
    int c = co * r * r + dr * r + dc;
    return ((static_cast<int64_t>(b) * C + c) * H + h) * W + w;
  };
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
          y[((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo + ow] =
              x.data()[src_index(b, co, oh, ow)];
  auto xi = x.impl();
  return make_op_result(
      {B, Co, Ho, Wo}, std::move(y), {x},
      [xi, B, Co, Ho, Wo, src_index](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int co = 0; co < Co; ++co)
              for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow)
                  (*gx)[static_cast<size_t>(src_index(b, co, oh, ow))] +=
                      self.grad[((static_cast<int64_t>(b) * Co + co) * Ho + oh) * Wo + ow];
      },
      "pixel_shuffle");
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  check_4d(x, "pixel_unshuffle");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(r >= 1, "pixel_unshuffle: r must be >= 1");
  check(H % r == 0 && W % r == 0, "pixel_unshuffle: spatial dims not divisible by r");
  const int Co = C * r * r, Ho = H / r, Wo = W / r;
  std::vector<double> y(static_cast<size_t>(x.size()));
  auto dst_index = [=](int b, int c, int h, int w) {
    // inverse of pixel_shuffle's source indexing
    int co = c, dr = (h % r), dc = (w % r);
    int cc = co * r * r + dr * r + dc;
    return ((static_cast<int64_t>(b) * Co + cc) * Ho + h / r) * Wo + w / r;
  };
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          y[static_cast<size_t>(dst_index(b, c, h, w))] =
              x.data()[((static_cast<int64_t>(b) * C + c) * H + h) * W + w];
  auto xi = x.impl();
  return make_op_result(
      {B, Co, Ho, Wo}, std::move(y), {x},
      [xi, B, C, H, W, dst_index](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
              for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                  (*gx)[((static_cast<int64_t>(b) * C + c) * H + h) * W + w] +=
                      self.grad[static_cast<size_t>(dst_index(b, c, h, w))];
      },
      "pixel_unshuffle");
}

Tensor upsample(const Tensor& x, int s, UpsampleMode mode) {
  check_4d(x, "upsample");
  check(s >= 1, "upsample: s must be >= 1");
  if (s == 1) return scale(x, 1.0);  // identity with tape link
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * s, Wo = W * s;
  std::vector<double> y(static_cast<size_t>(B) * C * Ho * Wo);
  auto xi = x.impl();
  if (mode == UpsampleMode::nearest) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow)
            y[((static_cast<int64_t>(b) * C + c) * Ho + oh) * Wo + ow] =
                x.data()[((static_cast<int64_t>(b) * C + c) * H + oh / s) * W + ow / s];
    return make_op_result(
        {B, C, Ho, Wo}, std::move(y), {x},
        [xi, B, C, H, W, Ho, Wo, s](TensorImpl& self) {
          if (auto* gx = grad_of(xi))
            for (int b = 0; b < B; ++b)
              for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < Ho; ++oh)
                  for (int ow = 0; ow < Wo; ++ow)
                    (*gx)[((static_cast<int64_t>(b) * C + c) * H + oh / s) * W + ow / s] +=
                        self.grad[((static_cast<int64_t>(b) * C + c) * Ho + oh) * Wo + ow];
        },
        "upsample_nearest");
  }
  // bilinear, half-pixel centers, clamped at the border
  auto taps = [s](int o, int n, int& i0, int& i1, double& w1) {
    double pos = (o + 0.5) / s - 0.5;
    double f = std::floor(pos);
    i0 = std::clamp(static_cast<int>(f), 0, n - 1);
    i1 = std::clamp(i0 + 1, 0, n - 1);
    w1 = std::clamp(pos - f, 0.0, 1.0);
    if (pos < 0) w1 = 0.0;
  };
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* xc = x.data() + (static_cast<int64_t>(b) * C + c) * H * W;
      for (int oh = 0; oh < Ho; ++oh) {
        int r0, r1;
        double wr;
        taps(oh, H, r0, r1, wr);
        for (int ow = 0; ow < Wo; ++ow) {
          int c0, c1;
          double wc;
          taps(ow, W, c0, c1, wc);
          y[((static_cast<int64_t>(b) * C + c) * Ho + oh) * Wo + ow] =
              (1 - wr) * ((1 - wc) * xc[r0 * W + c0] + wc * xc[r0 * W + c1]) +
              wr * ((1 - wc) * xc[r1 * W + c0] + wc * xc[r1 * W + c1]);
        }
      }
    }
  return make_op_result(
      {B, C, Ho, Wo}, std::move(y), {x},
      [xi, B, C, H, W, Ho, Wo, taps](TensorImpl& self) {
        auto* gx = grad_of(xi);
        if (!gx) return;
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            double* gc = gx->data() + (static_cast<int64_t>(b) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh) {
              int r0, r1;
              double wr;
              taps(oh, H, r0, r1, wr);
              for (int ow = 0; ow < Wo; ++ow) {
                int c0, c1;
                double wc;
                taps(ow, W, c0, c1, wc);
                double g = self.grad[((static_cast<int64_t>(b) * C + c) * Ho + oh) * Wo + ow];
                gc[r0 * W + c0] += g * (1 - wr) * (1 - wc);
                gc[r0 * W + c1] += g * (1 - wr) * wc;
                gc[r1 * W + c0] += g * wr * (1 - wc);
                gc[r1 * W + c1] += g * wr * wc;
              }
            }
          }
      },
      "upsample_bilinear");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_4d(a, "concat_channels");
  check_4d(b, "concat_channels");
  check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "concat_channels: non-channel dims differ");
  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  std::vector<double> y(static_cast<size_t>(B) * (Ca + Cb) * hw);
  for (int bb = 0; bb < B; ++bb) {
    std::copy_n(a.data() + bb * Ca * hw, Ca * hw, y.begin() + bb * (Ca + Cb) * hw);
    std::copy_n(b.data() + bb * Cb * hw, Cb * hw, y.begin() + (bb * (Ca + Cb) + Ca) * hw);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_op_result(
      {B, Ca + Cb, H, W}, std::move(y), {a, b},
      [ai, bi, B, Ca, Cb, hw](TensorImpl& self) {
        if (auto* ga = grad_of(ai))
          for (int bb = 0; bb < B; ++bb)
            for (int64_t i = 0; i < Ca * hw; ++i)
              (*ga)[bb * Ca * hw + i] += self.grad[bb * (Ca + Cb) * hw + i];
        if (auto* gb = grad_of(bi))
          for (int bb = 0; bb < B; ++bb)
            for (int64_t i = 0; i < Cb * hw; ++i)
              (*gb)[bb * Cb * hw + i] += self.grad[(bb * (Ca + Cb) + Ca) * hw + i];
      },
      "concat_channels");
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  check_4d(x, "slice_channels");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad range");
  const int Co = c1 - c0;
  const int64_t hw = static_cast<int64_t>(H) * W;
  std::vector<double> y(static_cast<size_t>(B) * Co * hw);
  for (int b = 0; b < B; ++b)
    std::copy_n(x.data() + (b * C + c0) * hw, Co * hw, y.begin() + b * Co * hw);
  auto xi = x.impl();
  return make_op_result(
      {B, Co, H, W}, std::move(y), {x},
      [xi, B, C, c0, Co, hw](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int64_t i = 0; i < Co * hw; ++i)
              (*gx)[(b * C + c0) * hw + i] += self.grad[b * Co * hw + i];
      },
      "slice_channels");
}

Tensor pad_replicate_br(const Tensor& x, int pad_h, int pad_w) {
  check_4d(x, "pad_replicate_br");
  check(pad_h >= 0 && pad_w >= 0, "pad_replicate_br: negative pad");
  if (pad_h == 0 && pad_w == 0) return scale(x, 1.0);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H + pad_h, Wo = W + pad_w;
  std::vector<double> y(static_cast<size_t>(B) * C * Ho * Wo);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
          y[((static_cast<int64_t>(b) * C + c) * Ho + oh) * Wo + ow] =
              x.data()[((static_cast<int64_t>(b) * C + c) * H + std::min(oh, H - 1)) * W +
                       std::min(ow, W - 1)];
  auto xi = x.impl();
  return make_op_result(
      {B, C, Ho, Wo}, std::move(y), {x},
      [xi, B, C, H, W, Ho, Wo](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
              for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow)
                  (*gx)[((static_cast<int64_t>(b) * C + c) * H + std::min(oh, H - 1)) * W +
                        std::min(ow, W - 1)] +=
                      self.grad[((static_cast<int64_t>(b) * C + c) * Ho + oh) * Wo + ow];
      },
      "pad_replicate_br");
}

Tensor crop_br(const Tensor& x, int out_h, int out_w) {
  check_4d(x, "crop_br");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(out_h <= H && out_w <= W && out_h >= 1 && out_w >= 1, "crop_br: bad crop size");
  if (out_h == H && out_w == W) return scale(x, 1.0);
  std::vector<double> y(static_cast<size_t>(B) * C * out_h * out_w);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < out_h; ++h)
        for (int w = 0; w < out_w; ++w)
          y[((static_cast<int64_t>(b) * C + c) * out_h + h) * out_w + w] =
              x.data()[((static_cast<int64_t>(b) * C + c) * H + h) * W + w];
  auto xi = x.impl();
  return make_op_result(
      {B, C, out_h, out_w}, std::move(y), {x},
      [xi, B, C, H, W, out_h, out_w](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
              for (int h = 0; h < out_h; ++h)
                for (int w = 0; w < out_w; ++w)
                  (*gx)[((static_cast<int64_t>(b) * C + c) * H + h) * W + w] +=
                      self.grad[((static_cast<int64_t>(b) * C + c) * out_h + h) * out_w + w];
      },
      "crop_br");
}

Tensor gather_positions(const Tensor& x, const std::vector<int>& order) {
  check_4d(x, "gather_positions");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t L = static_cast<int64_t>(H) * W;
  check(static_cast<int64_t>(order.size()) == L,
        "gather_positions: order length " + std::to_string(order.size()) + " != H*W");
  std::vector<double> y(static_cast<size_t>(B) * C * L);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* xc = x.data() + (static_cast<int64_t>(b) * C + c) * L;
      double* yc = y.data() + (static_cast<int64_t>(b) * C + c) * L;
      for (int64_t t = 0; t < L; ++t) yc[t] = xc[order[t]];
    }
  auto xi = x.impl();
  auto ord = order;  // keep a copy alive for the backward pass
  return make_op_result(
      {B, C, static_cast<int>(L)}, std::move(y), {x},
      [xi, B, C, L, ord](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              double* gc = gx->data() + (static_cast<int64_t>(b) * C + c) * L;
              const double* g = self.grad.data() + (static_cast<int64_t>(b) * C + c) * L;
              for (int64_t t = 0; t < L; ++t) gc[ord[t]] += g[t];
            }
      },
      "gather_positions");
}

Tensor scatter_positions(const Tensor& seq, const std::vector<int>& order, int h, int w) {
  check(seq.shape().size() == 3, "scatter_positions: expected [B,C,L], got " + shape_str(seq.shape()));
  const int B = seq.dim(0), C = seq.dim(1);
  const int64_t L = seq.dim(2);
  check(L == static_cast<int64_t>(h) * w && static_cast<int64_t>(order.size()) == L,
        "scatter_positions: L/order/h*w mismatch");
  std::vector<double> y(static_cast<size_t>(B) * C * L);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* sc = seq.data() + (static_cast<int64_t>(b) * C + c) * L;
      double* yc = y.data() + (static_cast<int64_t>(b) * C + c) * L;
      for (int64_t t = 0; t < L; ++t) yc[order[t]] = sc[t];
    }
  auto si = seq.impl();
  auto ord = order;
  return make_op_result(
      {B, C, h, w}, std::move(y), {seq},
      [si, B, C, L, ord](TensorImpl& self) {
        if (auto* gs = grad_of(si))
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              double* gc = gs->data() + (static_cast<int64_t>(b) * C + c) * L;
              const double* g = self.grad.data() + (static_cast<int64_t>(b) * C + c) * L;
              for (int64_t t = 0; t < L; ++t) gc[t] += g[ord[t]];
            }
      },
      "scatter_positions");
}

// ---------------------------------------------------------------- channel ops

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  check(x.shape().size() >= 2, "scale_channels: need at least [B,C]");
  const int B = x.dim(0), C = x.dim(1);
  check(s.shape() == Shape{C}, "scale_channels: scale shape " + shape_str(s.shape()) +
                                   " != [" + std::to_string(C) + "]");
  int64_t inner = 1;
  for (size_t i = 2; i < x.shape().size(); ++i) inner *= x.shape()[i];
  std::vector<double> y(static_cast<size_t>(x.size()));
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double sc = s.data()[c];
      const double* xc = x.data() + (static_cast<int64_t>(b) * C + c) * inner;
      double* yc = y.data() + (static_cast<int64_t>(b) * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) yc[i] = xc[i] * sc;
    }
  auto xi = x.impl(), si = s.impl();
  return make_op_result(
      x.shape(), std::move(y), {x, s},
      [xi, si, B, C, inner](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gs = grad_of(si);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * inner;
            if (gx)
              for (int64_t i = 0; i < inner; ++i)
                (*gx)[off + i] += self.grad[off + i] * si->data[c];
            if (gs) {
              double acc = 0.0;
              for (int64_t i = 0; i < inner; ++i) acc += self.grad[off + i] * xi->data[off + i];
              (*gs)[c] += acc;
            }
          }
      },
      "scale_channels");
}

Tensor mul_channel_gate(const Tensor& x, const Tensor& gate) {
  check_4d(x, "mul_channel_gate");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(gate.shape() == Shape{B, C, 1, 1}, "mul_channel_gate: gate must be [B,C,1,1]");
  const int64_t hw = static_cast<int64_t>(H) * W;
  std::vector<double> y(static_cast<size_t>(x.size()));
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double g = gate.data()[b * C + c];
      const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) y[off + i] = x.data()[off + i] * g;
    }
  auto xi = x.impl(), gi = gate.impl();
  return make_op_result(
      x.shape(), std::move(y), {x, gate},
      [xi, gi, B, C, hw](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gg = grad_of(gi);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
            if (gx)
              for (int64_t i = 0; i < hw; ++i)
                (*gx)[off + i] += self.grad[off + i] * gi->data[b * C + c];
            if (gg) {
              double acc = 0.0;
              for (int64_t i = 0; i < hw; ++i) acc += self.grad[off + i] * xi->data[off + i];
              (*gg)[b * C + c] += acc;
            }
          }
      },
      "mul_channel_gate");
}

Tensor global_avg_pool(const Tensor& x) {
  check_4d(x, "global_avg_pool");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  const double inv = 1.0 / static_cast<double>(hw);
  std::vector<double> y(static_cast<size_t>(B) * C);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) acc += x.data()[off + i];
      y[b * C + c] = acc * inv;
    }
  auto xi = x.impl();
  return make_op_result(
      {B, C, 1, 1}, std::move(y), {x},
      [xi, B, C, hw, inv](TensorImpl& self) {
        if (auto* gx = grad_of(xi))
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              const double g = self.grad[b * C + c] * inv;
              const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) (*gx)[off + i] += g;
            }
      },
      "global_avg_pool");
}

// ---------------------------------------------------------------- linear maps

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
              int padding, int groups) {
  check_4d(x, "conv2d");
  check(weight.shape().size() == 4, "conv2d: weight must be 4D");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = weight.dim(0), Cg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  check(groups >= 1 && C % groups == 0 && O % groups == 0,
        "conv2d: channels " + std::to_string(C) + " / out " + std::to_string(O) +
            " not divisible by groups " + std::to_string(groups));
  check(Cg == C / groups, "conv2d: weight in-channels " + std::to_string(Cg) +
                              " != C/groups = " + std::to_string(C / groups));
  check(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d: kernel does not fit padded input");
  if (bias.defined())
    check(bias.shape() == Shape{O}, "conv2d: bias shape " + shape_str(bias.shape()) +
                                        " != [" + std::to_string(O) + "]");
  const int Og = O / groups;
  std::vector<double> y(static_cast<size_t>(B) * O * Ho * Wo, 0.0);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      const int g = o / Og;
      const double bv = bias.defined() ? bias.data()[o] : 0.0;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = bv;
          for (int cc = 0; cc < Cg; ++cc) {
            const int ci = g * Cg + cc;
            const double* xc = x.data() + (static_cast<int64_t>(b) * C + ci) * H * W;
            const double* wc = weight.data() + ((static_cast<int64_t>(o) * Cg + cc) * kh) * kw;
            for (int u = 0; u < kh; ++u) {
              const int ih = oh * stride - padding + u;
              if (ih < 0 || ih >= H) continue;
              for (int v = 0; v < kw; ++v) {
                const int iw = ow * stride - padding + v;
                if (iw < 0 || iw >= W) continue;
                acc += xc[ih * W + iw] * wc[u * kw + v];
              }
            }
          }
          y[((static_cast<int64_t>(b) * O + o) * Ho + oh) * Wo + ow] = acc;
        }
    }
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_op_result(
      {B, O, Ho, Wo}, std::move(y),
      bias.defined() ? std::vector<Tensor>{x, weight, bias} : std::vector<Tensor>{x, weight},
      [=](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gw = grad_of(wi);
        auto* gb = bi ? grad_of(bi) : nullptr;
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) {
            const int g = o / Og;
            for (int oh = 0; oh < Ho; ++oh)
              for (int ow = 0; ow < Wo; ++ow) {
                const double go =
                    self.grad[((static_cast<int64_t>(b) * O + o) * Ho + oh) * Wo + ow];
                if (go == 0.0) continue;
                if (gb) (*gb)[o] += go;
                for (int cc = 0; cc < Cg; ++cc) {
                  const int ci = g * Cg + cc;
                  const int64_t xoff = (static_cast<int64_t>(b) * C + ci) * H * W;
                  const int64_t woff = (static_cast<int64_t>(o) * Cg + cc) * kh * kw;
                  for (int u = 0; u < kh; ++u) {
                    const int ih = oh * stride - padding + u;
                    if (ih < 0 || ih >= H) continue;
                    for (int v = 0; v < kw; ++v) {
                      const int iw = ow * stride - padding + v;
                      if (iw < 0 || iw >= W) continue;
                      if (gx) (*gx)[xoff + ih * W + iw] += go * wi->data[woff + u * kw + v];
                      if (gw) (*gw)[woff + u * kw + v] += go * xi->data[xoff + ih * W + iw];
                    }
                  }
                }
              }
          }
      },
      "conv2d");
}

Tensor linear_seq(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check(x.shape().size() == 3, "linear_seq: expected [B,C,L], got " + shape_str(x.shape()));
  check(weight.shape().size() == 2, "linear_seq: weight must be [O,C]");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const int O = weight.dim(0);
  check(weight.dim(1) == C, "linear_seq: weight in-dim " + std::to_string(weight.dim(1)) +
                                " != C = " + std::to_string(C));
  if (bias.defined()) check(bias.shape() == Shape{O}, "linear_seq: bias shape mismatch");
  std::vector<double> y(static_cast<size_t>(B) * O * L, 0.0);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      const double bv = bias.defined() ? bias.data()[o] : 0.0;
      double* yo = y.data() + (static_cast<int64_t>(b) * O + o) * L;
      for (int t = 0; t < L; ++t) yo[t] = bv;
      for (int c = 0; c < C; ++c) {
        const double w = weight.data()[o * C + c];
        const double* xc = x.data() + (static_cast<int64_t>(b) * C + c) * L;
        for (int t = 0; t < L; ++t) yo[t] += w * xc[t];
      }
    }
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return make_op_result(
      {B, O, L}, std::move(y),
      bias.defined() ? std::vector<Tensor>{x, weight, bias} : std::vector<Tensor>{x, weight},
      [=](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gw = grad_of(wi);
        auto* gb = bi ? grad_of(bi) : nullptr;
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) {
            const double* go = self.grad.data() + (static_cast<int64_t>(b) * O + o) * L;
            if (gb)
              for (int t = 0; t < L; ++t) (*gb)[o] += go[t];
            for (int c = 0; c < C; ++c) {
              const int64_t xoff = (static_cast<int64_t>(b) * C + c) * L;
              if (gx) {
                const double w = wi->data[o * C + c];
                for (int t = 0; t < L; ++t) (*gx)[xoff + t] += go[t] * w;
              }
              if (gw) {
                double acc = 0.0;
                for (int t = 0; t < L; ++t) acc += go[t] * xi->data[xoff + t];
                (*gw)[o * C + c] += acc;
              }
            }
          }
      },
      "linear_seq");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check(x.shape().size() >= 2, "layer_norm: need at least [B,C]");
  check(eps > 0, "layer_norm: eps must be positive");
  const int B = x.dim(0), C = x.dim(1);
  check(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
        "layer_norm: gamma/beta must be [" + std::to_string(C) + "], got " +
            shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  int64_t inner = 1;
  for (size_t i = 2; i < x.shape().size(); ++i) inner *= x.shape()[i];
  std::vector<double> y(static_cast<size_t>(x.size()));
  // cache normalized values and inverse stddev per position for backward
  std::vector<double> xhat(static_cast<size_t>(x.size()));
  std::vector<double> inv_std(static_cast<size_t>(B) * inner);
  const double invC = 1.0 / C;
  for (int b = 0; b < B; ++b)
    for (int64_t p = 0; p < inner; ++p) {
      double mean = 0.0;
      for (int c = 0; c < C; ++c) mean += x.data()[(static_cast<int64_t>(b) * C + c) * inner + p];
      mean *= invC;
      double var = 0.0;
      for (int c = 0; c < C; ++c) {
        const double d = x.data()[(static_cast<int64_t>(b) * C + c) * inner + p] - mean;
        var += d * d;
      }
      var *= invC;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * inner + p] = is;
      for (int c = 0; c < C; ++c) {
        const int64_t idx = (static_cast<int64_t>(b) * C + c) * inner + p;
        const double xh = (x.data()[idx] - mean) * is;
        xhat[idx] = xh;
        y[idx] = gamma.data()[c] * xh + beta.data()[c];
      }
    }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_op_result(
      x.shape(), std::move(y), {x, gamma, beta},
      [xi, gi, bi, B, C, inner, invC, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gg = grad_of(gi);
        auto* gb = grad_of(bi);
        for (int b = 0; b < B; ++b)
          for (int64_t p = 0; p < inner; ++p) {
            double sum_gh = 0.0, sum_ghx = 0.0;
            for (int c = 0; c < C; ++c) {
              const int64_t idx = (static_cast<int64_t>(b) * C + c) * inner + p;
              const double gh = self.grad[idx] * gi->data[c];
              sum_gh += gh;
              sum_ghx += gh * xhat[idx];
              if (gg) (*gg)[c] += self.grad[idx] * xhat[idx];
              if (gb) (*gb)[c] += self.grad[idx];
            }
            if (gx) {
              const double is = inv_std[b * inner + p];
              for (int c = 0; c < C; ++c) {
                const int64_t idx = (static_cast<int64_t>(b) * C + c) * inner + p;
                const double gh = self.grad[idx] * gi->data[c];
                (*gx)[idx] += is * (gh - invC * sum_gh - xhat[idx] * invC * sum_ghx);
              }
            }
          }
      },
      "layer_norm");
}

// ---------------------------------------------------------------- composites

ChannelAttention ChannelAttention::init(int channels, int ratio, Rng& rng) {
  if (ratio < 1 || channels % ratio != 0)
    throw std::invalid_argument("ChannelAttention: channels " + std::to_string(channels) +
                                " not divisible by ratio " + std::to_string(ratio));
  ChannelAttention p;
  p.ratio = ratio;
  const int mid = channels / ratio;
  p.w1 = Tensor::uniform_fan_in({mid, channels, 1, 1}, channels, rng);
  p.b1 = Tensor::zeros({mid}, true);
  p.w2 = Tensor::uniform_fan_in({channels, mid, 1, 1}, mid, rng);
  p.b2 = Tensor::zeros({channels}, true);
  return p;
}

Tensor channel_attention(const Tensor& f, const ChannelAttention& p) {
  Tensor pooled = global_avg_pool(f);
  Tensor a = conv2d(pooled, p.w1, p.b1, 1, 0);
  a = activation(Act::gelu, a);
  a = conv2d(a, p.w2, p.b2, 1, 0);
  Tensor gate = activation(Act::sigmoid, a);
  return mul_channel_gate(f, gate);
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l1_loss");
  return mean_all(abs(sub(a, b)));
}

}  // namespace dhm
