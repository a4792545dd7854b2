#include "dhmamba/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dhm {

namespace {

const char* upsample_name(UpsampleMode m) {
  return m == UpsampleMode::nearest ? "nearest" : "bilinear";
}

UpsampleMode upsample_from(const std::string& s) {
  if (s == "nearest") return UpsampleMode::nearest;
  if (s == "bilinear") return UpsampleMode::bilinear;
  throw std::runtime_error("unknown upsample mode: " + s);
}

void atomic_write(const std::string& path, const std::string& payload) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + tmp);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

// ---- checkpoints -----------------------------------------------------------

void save_checkpoint(const std::string& path, Model& model, int64_t step,
                     const std::string& rng_state) {
  std::ostringstream out;
  out << "dhmamba-checkpoint 1\n";
  const ModelConfig& c = model.cfg;
  out << "config " << c.groups << ' ' << c.blocks << ' ' << c.channels << ' ' << c.state_size
      << ' ' << c.stride << ' ' << c.n_lr << ' ' << c.shuffle_r << ' ' << c.expand << ' '
      << upsample_name(c.upsample) << ' ' << c.seed << '\n';
  out << "step " << step << '\n';
  out << "rng " << rng_state << '\n';

  std::vector<Tensor> tensors;
  std::ostringstream manifest;
  int count = 0;
  visit_params(model, [&](const std::string& name, Tensor& t) {
    manifest << name << " f64 " << t.shape().size();
    for (int d : t.shape()) manifest << ' ' << d;
    manifest << '\n';
    tensors.push_back(t);
    ++count;
  });
  out << "tensors " << count << '\n' << manifest.str() << "blob\n";
  for (Tensor& t : tensors)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  atomic_write(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line, word;

  std::getline(f, line);
  if (line != "dhmamba-checkpoint 1")
    throw std::runtime_error("bad checkpoint header: " + line);

  Checkpoint ckpt;
  ModelConfig cfg;
  {
    std::getline(f, line);
    std::istringstream is(line);
    std::string ups;
    is >> word >> cfg.groups >> cfg.blocks >> cfg.channels >> cfg.state_size >> cfg.stride >>
        cfg.n_lr >> cfg.shuffle_r >> cfg.expand >> ups >> cfg.seed;
    if (word != "config" || !is) throw std::runtime_error("bad checkpoint config line");
    cfg.upsample = upsample_from(ups);
  }
  {
    std::getline(f, line);
    std::istringstream is(line);
    is >> word >> ckpt.step;
    if (word != "step" || !is) throw std::runtime_error("bad checkpoint step line");
  }
  {
    std::getline(f, line);
    if (line.rfind("rng", 0) != 0) throw std::runtime_error("bad checkpoint rng line");
    ckpt.rng_state = line.size() > 4 ? line.substr(4) : "";
  }

  ckpt.model = Model::init(cfg);
  int count = 0;
  {
    std::getline(f, line);
    std::istringstream is(line);
    is >> word >> count;
    if (word != "tensors" || !is) throw std::runtime_error("bad checkpoint tensors line");
  }
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::getline(f, line);
    std::istringstream is(line);
    Entry e;
    std::string dtype;
    int ndim = 0;
    is >> e.name >> dtype >> ndim;
    if (!is || dtype != "f64") throw std::runtime_error("bad manifest line: " + line);
    e.shape.resize(static_cast<size_t>(ndim));
    for (int& d : e.shape) is >> d;
    entries.push_back(std::move(e));
  }
  std::getline(f, line);
  if (line != "blob") throw std::runtime_error("missing blob marker");

  size_t idx = 0;
  visit_params(ckpt.model, [&](const std::string& name, Tensor& t) {
    if (idx >= entries.size() || entries[idx].name != name || entries[idx].shape != t.shape())
      throw std::runtime_error("checkpoint/config mismatch at tensor " + name);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    ++idx;
  });
  if (!f || idx != entries.size()) throw std::runtime_error("truncated checkpoint blob");
  return ckpt;
}

// ---- optimizer / schedule --------------------------------------------------

double cosine_lr(int64_t step, int64_t total, double lr_init, double lr_final) {
  if (total <= 0) return lr_final;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(M_PI * t));
}

AdamW::AdamW(Model& model, double beta1, double beta2, double weight_decay, double eps)
    : beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {
  visit_params(model, [&](const std::string&, Tensor& t) {
    m_.emplace_back(static_cast<size_t>(t.size()), 0.0);
    v_.emplace_back(static_cast<size_t>(t.size()), 0.0);
  });
}

void AdamW::step(Model& model, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  size_t k = 0;
  visit_params(model, [&](const std::string&, Tensor& t) {
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    ++k;
    double* p = t.data();
    const size_t n = static_cast<size_t>(t.size());
    const double* g = t.has_grad() ? t.grad().data() : nullptr;
    for (size_t i = 0; i < n; ++i) {
      const double gi = g ? g[i] : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p[i]);
    }
    t.zero_grad();
  });
}

// ---- training / evaluation -------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (!(lr_init >= lr_final && lr_final > 0.0))
    throw std::invalid_argument("TrainConfig: need lr_init >= lr_final > 0");
  if (steps < 0 || batch < 1 || corpus < 1 || image_size < 8)
    throw std::invalid_argument("TrainConfig: bad steps/batch/corpus/image_size");
}

namespace {

MaskSpec make_mask(MaskKind kind, int h, int w, int af, uint64_t seed) {
  switch (kind) {
    case MaskKind::cartesian1d:
      return cartesian_mask(h, w, af, seed);
    case MaskKind::radial:
      return radial_mask(h, w, af, seed);
    case MaskKind::random2d:
      return random_mask(h, w, af, seed);
  }
  throw std::invalid_argument("make_mask: bad kind");
}

struct Sample {
  std::vector<double> input;   // [2,H,W]: zero-filled re, im
  std::vector<double> target;  // [2,H,W]: ground-truth re, im
  std::vector<double> gt_magnitude;
  std::vector<double> zf_magnitude;
};

Sample make_sample(MaskKind kind, int af, int size, uint64_t phantom_seed, uint64_t mask_seed) {
  const Phantom ph = make_phantom(size, size, phantom_seed);
  const ComplexGrid gt = ph.complex_image();
  const MaskSpec mask = make_mask(kind, size, size, af, mask_seed);
  const Undersampled us = undersample(gt, mask);

  Sample s;
  const size_t n = gt.re.size();
  s.input.resize(2 * n);
  s.target.resize(2 * n);
  std::copy(us.image.re.begin(), us.image.re.end(), s.input.begin());
  std::copy(us.image.im.begin(), us.image.im.end(), s.input.begin() + static_cast<long>(n));
  std::copy(gt.re.begin(), gt.re.end(), s.target.begin());
  std::copy(gt.im.begin(), gt.im.end(), s.target.begin() + static_cast<long>(n));
  s.gt_magnitude = magnitude_of(gt);
  s.zf_magnitude = magnitude_of(us.image);
  return s;
}

double grad_norm(Model& model) {
  double acc = 0.0;
  visit_params(model, [&](const std::string&, Tensor& t) {
    if (!t.has_grad()) return;
    for (double g : t.grad()) acc += g * g;
  });
  return std::sqrt(acc);
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  Model model = Model::init(mc);

  Rng seeder(cfg.seed, "train.data");
  std::vector<Sample> corpus;
  corpus.reserve(static_cast<size_t>(cfg.corpus));
  for (int k = 0; k < cfg.corpus; ++k) {
    const uint64_t ps = static_cast<uint64_t>(seeder.engine()());
    const uint64_t ms = static_cast<uint64_t>(seeder.engine()());
    corpus.push_back(make_sample(cfg.mask_kind, cfg.af, cfg.image_size, ps, ms));
  }

  AdamW opt(model, cfg.beta1, cfg.beta2, cfg.weight_decay);
  Rng order(cfg.seed, "train.order");
  TrainResult res;
  res.loss_log.reserve(static_cast<size_t>(cfg.steps));

  const int s = cfg.image_size;
  const size_t plane = static_cast<size_t>(s) * s;
  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg.steps, cfg.lr_init, cfg.lr_final);

    std::vector<double> in(static_cast<size_t>(cfg.batch) * 2 * plane);
    std::vector<double> tgt(in.size());
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& sm = corpus[static_cast<size_t>(order.uniform_int(0, cfg.corpus - 1))];
      std::copy(sm.input.begin(), sm.input.end(), in.begin() + static_cast<long>(b * 2 * plane));
      std::copy(sm.target.begin(), sm.target.end(),
                tgt.begin() + static_cast<long>(b * 2 * plane));
    }
    Tensor input = Tensor::from({cfg.batch, 2, s, s}, std::move(in));
    Tensor target = Tensor::from({cfg.batch, 2, s, s}, std::move(tgt));

    Tensor loss = l1_loss(model.forward(input), target);
    const double lv = loss.item();
    loss.backward();
    if (!std::isfinite(lv)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at step " << step << " (lr=" << lr
          << ", grad norm=" << grad_norm(model) << ")";
      throw std::runtime_error(msg.str());
    }
    opt.step(model, lr);
    res.loss_log.push_back(lv);
  }

  std::ostringstream rs;
  rs << order.engine();
  res.checkpoint.model = std::move(model);
  res.checkpoint.step = cfg.steps;
  res.checkpoint.rng_state = rs.str();
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_loss_csv(cfg.out_dir + "/loss.csv", res.loss_log, cfg);
    save_checkpoint(cfg.out_dir + "/model.ckpt", res.checkpoint.model, res.checkpoint.step,
                    res.checkpoint.rng_state);
  }
  return res;
}

namespace {

MetricsReport mean_of(const std::vector<MetricsReport>& v) {
  MetricsReport m;
  for (const auto& r : v) {
    m.nmse += r.nmse;
    m.ssim += r.ssim;
    m.psnr += r.psnr;
  }
  const double n = static_cast<double>(v.size());
  m.nmse /= n;
  m.ssim /= n;
  m.psnr /= n;
  return m;
}

MetricsReport std_of(const std::vector<MetricsReport>& v, const MetricsReport& mean) {
  MetricsReport s;
  if (v.size() < 2) return s;
  for (const auto& r : v) {
    s.nmse += (r.nmse - mean.nmse) * (r.nmse - mean.nmse);
    s.ssim += (r.ssim - mean.ssim) * (r.ssim - mean.ssim);
    s.psnr += (r.psnr - mean.psnr) * (r.psnr - mean.psnr);
  }
  const double n = static_cast<double>(v.size() - 1);
  s.nmse = std::sqrt(s.nmse / n);
  s.ssim = std::sqrt(s.ssim / n);
  s.psnr = std::sqrt(s.psnr / n);
  return s;
}

}  // namespace

RunReport evaluate(const Model& model, int n_images, MaskKind kind, int af, int image_size,
                   uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  NoGradGuard ng;
  Rng seeder(seed, "eval.data");

  RunReport rep;
  std::vector<MetricsReport> mm, zz;
  const int s = image_size;
  const size_t plane = static_cast<size_t>(s) * s;
  for (int i = 0; i < n_images; ++i) {
    const uint64_t ps = static_cast<uint64_t>(seeder.engine()());
    const uint64_t ms = static_cast<uint64_t>(seeder.engine()());
    const Sample sm = make_sample(kind, af, s, ps, ms);

    Tensor input = Tensor::from({1, 2, s, s}, sm.input);
    Tensor out = model.forward(input);
    std::vector<double> mag(plane);
    const double* o = out.data();
    for (size_t p = 0; p < plane; ++p) mag[p] = std::hypot(o[p], o[plane + p]);

    EvalRow row;
    row.model = compute_metrics(mag, sm.gt_magnitude, s, s);
    row.zero_filled = compute_metrics(sm.zf_magnitude, sm.gt_magnitude, s, s);
    mm.push_back(row.model);
    zz.push_back(row.zero_filled);
    rep.rows.push_back(row);
  }
  rep.model_mean = mean_of(mm);
  rep.model_std = std_of(mm, rep.model_mean);
  rep.zf_mean = mean_of(zz);
  rep.zf_std = std_of(zz, rep.zf_mean);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

void write_report_csv(const std::string& path, const RunReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "image,model_nmse,model_ssim,model_psnr,zf_nmse,zf_ssim,zf_psnr\n";
  for (size_t i = 0; i < report.rows.size(); ++i) {
    const EvalRow& r = report.rows[i];
    out << i << ',' << r.model.nmse << ',' << r.model.ssim << ',' << r.model.psnr << ','
        << r.zero_filled.nmse << ',' << r.zero_filled.ssim << ',' << r.zero_filled.psnr << '\n';
  }
  out << "mean," << report.model_mean.nmse << ',' << report.model_mean.ssim << ','
      << report.model_mean.psnr << ',' << report.zf_mean.nmse << ',' << report.zf_mean.ssim << ','
      << report.zf_mean.psnr << '\n';
  out << "std," << report.model_std.nmse << ',' << report.model_std.ssim << ','
      << report.model_std.psnr << ',' << report.zf_std.nmse << ',' << report.zf_std.ssim << ','
      << report.zf_std.psnr << '\n';
  atomic_write(path, out.str());
}

void write_loss_csv(const std::string& path, const std::vector<double>& loss_log,
                    const TrainConfig& cfg) {
  std::ostringstream out;
  out.precision(10);
  out << "step,lr,loss\n";
  for (size_t i = 0; i < loss_log.size(); ++i)
    out << i << ',' << cosine_lr(static_cast<int64_t>(i), cfg.steps, cfg.lr_init, cfg.lr_final)
        << ',' << loss_log[i] << '\n';
  atomic_write(path, out.str());
}

// ---- effective receptive field ----------------------------------------------

std::vector<double> erf_map(const Model& model, const ComplexGrid& zero_filled, int ci, int cj) {
  const int h = zero_filled.h, w = zero_filled.w;
  if (ci < 0 || ci >= h || cj < 0 || cj >= w)
    throw std::invalid_argument("erf_map: center out of bounds");
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> in(2 * plane);
  std::copy(zero_filled.re.begin(), zero_filled.re.end(), in.begin());
  std::copy(zero_filled.im.begin(), zero_filled.im.end(), in.begin() + static_cast<long>(plane));
  Tensor input = Tensor::from({1, 2, h, w}, std::move(in), /*requires_grad=*/true);

  Tensor out = model.forward(input);
  // Scalar probe: the two output channels at the chosen pixel.
  std::vector<double> sel(static_cast<size_t>(out.size()), 0.0);
  const int oh = out.dim(2), ow = out.dim(3);
  const size_t oplane = static_cast<size_t>(oh) * ow;
  sel[static_cast<size_t>(ci) * ow + cj] = 1.0;
  sel[oplane + static_cast<size_t>(ci) * ow + cj] = 1.0;
  Tensor probe = sum_all(mul(out, Tensor::from(out.shape(), std::move(sel))));
  probe.backward();

  const std::vector<double>& g = input.grad();
  std::vector<double> map(plane, 0.0);
  for (size_t p = 0; p < plane; ++p) map[p] = std::abs(g[p]) + std::abs(g[plane + p]);
  return map;
}

// ---- cost accounting ---------------------------------------------------------

namespace {

struct CostAcc {
  std::vector<CostRow> rows;
  void add(const std::string& name, int64_t params, int64_t macs) {
    for (auto& r : rows)
      if (r.name == name) {
        r.params += params;
        r.macs += macs;
        return;
      }
    rows.push_back({name, params, macs});
  }
};

int64_t conv_params(int64_t cin, int64_t cout, int64_t k, int64_t groups = 1) {
  return cin / groups * cout * k * k + cout;
}
int64_t conv_macs(int64_t cin, int64_t cout, int64_t k, int64_t h, int64_t w,
                  int64_t groups = 1) {
  return cin / groups * cout * k * k * h * w;
}

int64_t s6_params(int64_t c, int64_t hs) { return c * c + 3 * c * hs + 2 * c; }
// projections (Delta, B, C) + ZOH discretization + state update + readout + D.
int64_t s6_macs(int64_t c, int64_t hs, int64_t len) {
  return len * (c * c + 2 * hs * c + 4 * c * hs + 2 * c);
}

int64_t ilog2_ceil(int64_t n) {
  int64_t b = 0;
  while ((int64_t{1} << b) < n) ++b;
  return b;
}

void hiscan_cost(CostAcc& acc, const std::string& prefix, int64_t ch, const ModelConfig& cfg,
                 int64_t h, int64_t w, int64_t multiplicity) {
  const int64_t s = cfg.stride;
  const int64_t lh = (h + s - 1) / s, lw = (w + s - 1) / s;
  const int64_t l_hr = h * w, l_lr = lh * lw;
  const int64_t n_hr = 4 - cfg.n_lr, n_lr = cfg.n_lr;

  acc.add(prefix + ".s6_hr", multiplicity * s6_params(ch, cfg.state_size),
          multiplicity * n_hr * s6_macs(ch, cfg.state_size, l_hr));
  acc.add(prefix + ".s6_lr", multiplicity * s6_params(ch, cfg.state_size),
          multiplicity * n_lr * s6_macs(ch, cfg.state_size, l_lr));
  // depthwise downsample + upsample fusion, amortized once over all LR paths
  const int64_t down = (n_lr > 0) ? ch * s * s * lh * lw : 0;
  const int64_t up = (n_lr > 0) ? ch * h * w : 0;
  acc.add(prefix + ".pyramid", multiplicity * ch * s * s, multiplicity * (down + up));
}

}  // namespace

CostReport count_cost(const ModelConfig& cfg, int h, int w) {
  cfg.validate();
  CostAcc acc;
  const int64_t C = cfg.channels, H = h, W = w, r = cfg.shuffle_r;
  const int64_t hw = H * W;
  const int64_t nblocks = static_cast<int64_t>(cfg.groups) * cfg.blocks;

  acc.add("head_conv", conv_params(2, C, 3), conv_macs(2, C, 3, H, W));

  // per-block costs aggregated over all groups*blocks instances
  acc.add("block.layer_norm", nblocks * 4 * C, nblocks * 2 * 5 * hw * C);
  acc.add("block.skip_scales", nblocks * 2 * C, nblocks * 2 * hw * C);
  hiscan_cost(acc, "block.image", C, cfg, H, W, nblocks);
  hiscan_cost(acc, "block.kspace", 2 * C, cfg, H, W, nblocks);
  // forward + inverse transform per block, 4 real MACs per complex butterfly
  acc.add("block.kspace_fft", 0, nblocks * 2 * C * hw * ilog2_ceil(hw) * 4);

  acc.add("block.lem_expand", nblocks * conv_params(C, 2 * C, 1),
          nblocks * conv_macs(C, 2 * C, 1, H, W));
  acc.add("block.lem_conv1", nblocks * conv_params(C, C, 1), nblocks * conv_macs(C, C, 1, H, W));
  acc.add("block.lem_dwconv", nblocks * conv_params(C, C, 3, C),
          nblocks * conv_macs(C, C, 3, H, W, C));
  acc.add("block.lem_cab",
          nblocks * (conv_params(C, C / 4, 1) + conv_params(C / 4, C, 1)),
          nblocks * (hw * C + 2 * C * (C / 4) + hw * C));
  acc.add("block.lem_norm", nblocks * 2 * C, nblocks * 5 * hw * C);
  acc.add("block.lem_out", nblocks * conv_params(C, C, 1), nblocks * conv_macs(C, C, 1, H, W));

  acc.add("group_conv", cfg.groups * conv_params(C, C, 3), cfg.groups * conv_macs(C, C, 3, H, W));
  acc.add("tail_conv", conv_params(C, C, 3), conv_macs(C, C, 3, H, W));
  acc.add("recon_conv1", conv_params(C, C * r * r, 3), conv_macs(C, C * r * r, 3, H, W));
  acc.add("recon_conv2", conv_params(C, 2, 3), conv_macs(C, 2, 3, H * r, W * r));

  CostReport rep;
  rep.rows = std::move(acc.rows);
  for (const auto& row : rep.rows) {
    rep.total_params += row.params;
    rep.total_macs += row.macs;
  }
  return rep;
}

void write_cost_csv(const std::string& path, const CostReport& report) {
  std::ostringstream out;
  out << "layer,params,macs\n";
  for (const auto& r : report.rows) out << r.name << ',' << r.params << ',' << r.macs << '\n';
  out << "total," << report.total_params << ',' << report.total_macs << '\n';
  atomic_write(path, out.str());
}

}  // namespace dhm
