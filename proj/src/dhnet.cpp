#include "dhmamba/dhnet.hpp"

#include <stdexcept>

#include "dhmamba/fourier.hpp"

namespace dhm {

void ModelConfig::validate() const {
  if (groups < 1 || blocks < 1 || channels < 1 || state_size < 1 || stride < 1 ||
      shuffle_r < 1 || expand < 1)
    throw std::invalid_argument("ModelConfig: all sizes must be positive");
  if (n_lr < 0 || n_lr > 4) throw std::invalid_argument("ModelConfig: n_lr must be in 0..4");
  if (channels % 4 != 0)
    throw std::invalid_argument("ModelConfig: channels must be divisible by 4 (CAB ratio)");
}

ModelConfig ModelConfig::paper_preset() {
  ModelConfig cfg;
  cfg.groups = 6;
  cfg.blocks = 6;
  cfg.channels = 64;
  cfg.state_size = 16;
  cfg.stride = 2;
  cfg.n_lr = 3;
  return cfg;
}

HiScanParams HiScanParams::init(int channels, int state_size, int s, int expand, Rng& rng) {
  HiScanParams p;
  const int ce = channels * expand;
  p.s6_hr = S6Params::init(ce, state_size, rng);
  p.s6_lr = S6Params::init(ce, state_size, rng);
  p.down_kernel = Tensor::uniform_fan_in({ce, 1, s, s}, s * s, rng);
  if (expand > 1) {
    p.in_w = Tensor::uniform_fan_in({ce, channels, 1, 1}, channels, rng);
    p.in_b = Tensor::zeros({ce}, true);
    p.out_w = Tensor::uniform_fan_in({channels, ce, 1, 1}, ce, rng);
    p.out_b = Tensor::zeros({channels}, true);
  }
  return p;
}

LemParams LemParams::init(int channels, Rng& rng) {
  LemParams p;
  const int c = channels;
  p.w_expand = Tensor::uniform_fan_in({2 * c, c, 1, 1}, c, rng);
  p.b_expand = Tensor::zeros({2 * c}, true);
  p.w_c1 = Tensor::uniform_fan_in({c, c, 1, 1}, c, rng);
  p.b_c1 = Tensor::zeros({c}, true);
  p.w_dw = Tensor::uniform_fan_in({c, 1, 3, 3}, 9, rng);
  p.b_dw = Tensor::zeros({c}, true);
  p.cab = ChannelAttention::init(c, 4, rng);
  p.ln_gamma = Tensor::full({c}, 1.0, true);
  p.ln_beta = Tensor::zeros({c}, true);
  // zero start: the module contributes nothing until trained, keeping each
  // block near-identity at initialization
  p.w_out = Tensor::zeros({c, c, 1, 1}, true);
  p.b_out = Tensor::zeros({c}, true);
  return p;
}

DhmBlockParams DhmBlockParams::init(const ModelConfig& cfg, Rng& rng) {
  DhmBlockParams p;
  const int c = cfg.channels;
  p.ln1_gamma = Tensor::full({c}, 1.0, true);
  p.ln1_beta = Tensor::zeros({c}, true);
  p.ln2_gamma = Tensor::full({c}, 1.0, true);
  p.ln2_beta = Tensor::zeros({c}, true);
  p.image = HiScanParams::init(c, cfg.state_size, cfg.stride, cfg.expand, rng);
  p.kspace = HiScanParams::init(2 * c, cfg.state_size, cfg.stride, cfg.expand, rng);
  p.alpha = Tensor::full({c}, 1.0, true);
  p.beta = Tensor::full({c}, 1.0, true);
  p.lem = LemParams::init(c, rng);
  return p;
}

DhmGroupParams DhmGroupParams::init(const ModelConfig& cfg, Rng& rng) {
  DhmGroupParams p;
  p.blocks.reserve(static_cast<size_t>(cfg.blocks));
  for (int i = 0; i < cfg.blocks; ++i) p.blocks.push_back(DhmBlockParams::init(cfg, rng));
  const int c = cfg.channels;
  p.conv_w = Tensor::uniform_fan_in({c, c, 3, 3}, c * 9, rng);
  p.conv_b = Tensor::zeros({c}, true);
  return p;
}

Model Model::init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, "weights");
  Model m;
  m.cfg = cfg;
  const int c = cfg.channels, r = cfg.shuffle_r;
  m.head_w = Tensor::uniform_fan_in({c, 2, 3, 3}, 2 * 9, rng);
  m.head_b = Tensor::zeros({c}, true);
  m.groups.reserve(static_cast<size_t>(cfg.groups));
  for (int i = 0; i < cfg.groups; ++i) m.groups.push_back(DhmGroupParams::init(cfg, rng));
  m.tail_w = Tensor::uniform_fan_in({c, c, 3, 3}, c * 9, rng);
  m.tail_b = Tensor::zeros({c}, true);
  m.rec1_w = Tensor::uniform_fan_in({c * r * r, c, 3, 3}, c * 9, rng);
  m.rec1_b = Tensor::zeros({c * r * r}, true);
  // zero start: the first forward reproduces the degraded input exactly, so
  // training begins at the zero-filled baseline instead of noise
  m.rec2_w = Tensor::zeros({2, c, 3, 3}, true);
  m.rec2_b = Tensor::zeros({2}, true);
  return m;
}

ScanContext make_scan_context(int h, int w, int stride) {
  ScanContext ctx;
  ctx.h = h;
  ctx.w = w;
  ctx.hp = (h + stride - 1) / stride * stride;
  ctx.wp = (w + stride - 1) / stride * stride;
  ctx.lh = ctx.hp / stride;
  ctx.lw = ctx.wp / stride;
  ctx.raster_hr = raster_paths(h, w);
  ctx.raster_lr = raster_paths(ctx.lh, ctx.lw);
  ctx.circ_hr = circular_paths(h, w);
  ctx.circ_lr = circular_paths(ctx.lh, ctx.lw);
  return ctx;
}

ScannedSequences hi_scan(const Tensor& x, const std::array<ScanPath, 4>& hr_paths,
                         const std::array<ScanPath, 4>& lr_paths, int n_lr, int stride,
                         const Tensor& down_kernel) {
  if (n_lr < 0 || n_lr > 4) throw std::invalid_argument("hi_scan: n_lr must be in 0..4");
  ScannedSequences out;
  const int n_hr = 4 - n_lr;
  for (int k = 0; k < n_hr; ++k) out.hr.push_back(apply_path(x, hr_paths[k]));
  if (n_lr > 0) {
    const int h = x.dim(2), w = x.dim(3);
    const int hp = (h + stride - 1) / stride * stride;
    const int wp = (w + stride - 1) / stride * stride;
    Tensor padded = pad_replicate_br(x, hp - h, wp - w);
    Tensor low = hierarchical_downsample(padded, stride, down_kernel);
    for (int k = n_hr; k < 4; ++k) out.lr.push_back(apply_path(low, lr_paths[k]));
  }
  return out;
}

Tensor hire(const ScannedSequences& seqs, const S6Params& s6_hr, const S6Params& s6_lr,
            const std::array<ScanPath, 4>& hr_paths, const std::array<ScanPath, 4>& lr_paths,
            int n_lr, int stride, UpsampleMode mode, int out_h, int out_w) {
  const int n_hr = 4 - n_lr;
  if (static_cast<int>(seqs.hr.size()) != n_hr || static_cast<int>(seqs.lr.size()) != n_lr)
    throw std::invalid_argument("hire: sequence counts do not match n_lr");
  Tensor hr_sum;
  for (int k = 0; k < n_hr; ++k) {
    Tensor m = invert_path(s6_scan(seqs.hr[k], s6_hr), hr_paths[k]);
    hr_sum = hr_sum.defined() ? add(hr_sum, m) : m;
  }
  Tensor lr_up;
  if (n_lr > 0) {
    Tensor lr_sum;
    for (int k = 0; k < n_lr; ++k) {
      Tensor m = invert_path(s6_scan(seqs.lr[k], s6_lr), lr_paths[n_hr + k]);
      lr_sum = lr_sum.defined() ? add(lr_sum, m) : m;
    }
    lr_up = crop_br(upsample(lr_sum, stride, mode), out_h, out_w);
  }
  // average over contributing paths so the fused magnitude does not scale
  // with the path count (learnable scales absorb the factor during training)
  if (!hr_sum.defined()) return scale(lr_up, 1.0 / n_lr);
  if (!lr_up.defined()) return scale(hr_sum, 1.0 / n_hr);
  return scale(add(hr_sum, lr_up), 0.25);
}

Tensor lem(const Tensor& f, const LemParams& p) {
  const int c = f.dim(1);
  Tensor e = conv2d(f, p.w_expand, p.b_expand, 1, 0);
  Tensor f1 = slice_channels(e, 0, c);
  Tensor f2 = slice_channels(e, c, 2 * c);
  Tensor cr = conv2d(f1, p.w_c1, p.b_c1, 1, 0);
  cr = conv2d(cr, p.w_dw, p.b_dw, 1, 1, c);
  cr = channel_attention(cr, p.cab);
  Tensor gate = activation(Act::gelu, layer_norm(f2, p.ln_gamma, p.ln_beta));
  return conv2d(mul(gate, cr), p.w_out, p.b_out, 1, 0);
}

namespace {

Tensor branch(const Tensor& x, const HiScanParams& p, const std::array<ScanPath, 4>& hr_paths,
              const std::array<ScanPath, 4>& lr_paths, const ScanContext& ctx,
              const ModelConfig& cfg) {
  Tensor in = x;
  if (p.in_w.defined()) in = conv2d(in, p.in_w, p.in_b, 1, 0);
  ScannedSequences seqs = hi_scan(in, hr_paths, lr_paths, cfg.n_lr, cfg.stride, p.down_kernel);
  Tensor out = hire(seqs, p.s6_hr, p.s6_lr, hr_paths, lr_paths, cfg.n_lr, cfg.stride,
                    cfg.upsample, ctx.h, ctx.w);
  if (p.out_w.defined()) out = conv2d(out, p.out_w, p.out_b, 1, 0);
  return out;
}

}  // namespace

Tensor dhm(const Tensor& s_in, const DhmBlockParams& p, const ScanContext& ctx,
           const ModelConfig& cfg) {
  // image branch on raster paths
  Tensor s_out = branch(s_in, p.image, ctx.raster_hr, ctx.raster_lr, ctx, cfg);
  // k-space branch on the packed centered spectrum with circular paths
  Tensor k_in = fft2_pack(s_in);
  Tensor k_out = branch(k_in, p.kspace, ctx.circ_hr, ctx.circ_lr, ctx, cfg);
  Tensor from_k = ifft2_unpack_real(k_out);
  return add(s_out, from_k);
}

Tensor dhm_block(const Tensor& f, const DhmBlockParams& p, const ScanContext& ctx,
                 const ModelConfig& cfg) {
  Tensor f1 = add(scale_channels(f, p.alpha), dhm(layer_norm(f, p.ln1_gamma, p.ln1_beta), p, ctx, cfg));
  return add(scale_channels(f1, p.beta), lem(layer_norm(f1, p.ln2_gamma, p.ln2_beta), p.lem));
}

Tensor dhm_group(const Tensor& f, const DhmGroupParams& p, const ScanContext& ctx,
                 const ModelConfig& cfg) {
  Tensor x = f;
  for (const auto& blk : p.blocks) x = dhm_block(x, blk, ctx, cfg);
  x = conv2d(x, p.conv_w, p.conv_b, 1, 1);
  return add(f, x);
}

Tensor Model::forward(const Tensor& input) const {
  if (input.shape().size() != 4 || input.dim(1) != 2)
    throw std::invalid_argument("Model::forward: expected [B,2,H,W], got " +
                                shape_str(input.shape()));
  const ScanContext ctx = make_scan_context(input.dim(2), input.dim(3), cfg.stride);
  Tensor fs = conv2d(input, head_w, head_b, 1, 1);
  Tensor f = fs;
  for (const auto& g : groups) f = dhm_group(f, g, ctx, cfg);
  Tensor fd = conv2d(f, tail_w, tail_b, 1, 1);
  Tensor x = add(fs, fd);
  x = conv2d(x, rec1_w, rec1_b, 1, 1);
  x = pixel_shuffle(x, cfg.shuffle_r);
  x = conv2d(x, rec2_w, rec2_b, 1, 1);
  // global residual: the head predicts a correction to the degraded input
  Tensor base = cfg.shuffle_r == 1 ? input : upsample(input, cfg.shuffle_r);
  return add(x, base);
}

namespace {

void visit_s6(S6Params& p, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".A_log", p.A_log);
  fn(prefix + ".D", p.D);
  fn(prefix + ".W_B", p.W_B);
  fn(prefix + ".W_C", p.W_C);
  fn(prefix + ".W_delta", p.W_delta);
  fn(prefix + ".b_delta", p.b_delta);
}

void visit_hiscan(HiScanParams& p, const std::string& prefix, const ParamVisitor& fn) {
  visit_s6(p.s6_hr, prefix + ".s6_hr", fn);
  visit_s6(p.s6_lr, prefix + ".s6_lr", fn);
  fn(prefix + ".down_kernel", p.down_kernel);
  if (p.in_w.defined()) {
    fn(prefix + ".in_w", p.in_w);
    fn(prefix + ".in_b", p.in_b);
    fn(prefix + ".out_w", p.out_w);
    fn(prefix + ".out_b", p.out_b);
  }
}

void visit_lem(LemParams& p, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w_expand", p.w_expand);
  fn(prefix + ".b_expand", p.b_expand);
  fn(prefix + ".w_c1", p.w_c1);
  fn(prefix + ".b_c1", p.b_c1);
  fn(prefix + ".w_dw", p.w_dw);
  fn(prefix + ".b_dw", p.b_dw);
  fn(prefix + ".cab.w1", p.cab.w1);
  fn(prefix + ".cab.b1", p.cab.b1);
  fn(prefix + ".cab.w2", p.cab.w2);
  fn(prefix + ".cab.b2", p.cab.b2);
  fn(prefix + ".ln_gamma", p.ln_gamma);
  fn(prefix + ".ln_beta", p.ln_beta);
  fn(prefix + ".w_out", p.w_out);
  fn(prefix + ".b_out", p.b_out);
}

void visit_block(DhmBlockParams& p, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".ln1_gamma", p.ln1_gamma);
  fn(prefix + ".ln1_beta", p.ln1_beta);
  fn(prefix + ".ln2_gamma", p.ln2_gamma);
  fn(prefix + ".ln2_beta", p.ln2_beta);
  visit_hiscan(p.image, prefix + ".image", fn);
  visit_hiscan(p.kspace, prefix + ".kspace", fn);
  fn(prefix + ".alpha", p.alpha);
  fn(prefix + ".beta", p.beta);
  visit_lem(p.lem, prefix + ".lem", fn);
}

}  // namespace

void visit_params(Model& model, const ParamVisitor& fn) {
  fn("head_w", model.head_w);
  fn("head_b", model.head_b);
  for (size_t g = 0; g < model.groups.size(); ++g) {
    const std::string gp = "group" + std::to_string(g);
    for (size_t b = 0; b < model.groups[g].blocks.size(); ++b)
      visit_block(model.groups[g].blocks[b], gp + ".block" + std::to_string(b), fn);
    fn(gp + ".conv_w", model.groups[g].conv_w);
    fn(gp + ".conv_b", model.groups[g].conv_b);
  }
  fn("tail_w", model.tail_w);
  fn("tail_b", model.tail_b);
  fn("rec1_w", model.rec1_w);
  fn("rec1_b", model.rec1_b);
  fn("rec2_w", model.rec2_w);
  fn("rec2_b", model.rec2_b);
}

int64_t param_count(Model& model) {
  int64_t n = 0;
  visit_params(model, [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

}  // namespace dhm
