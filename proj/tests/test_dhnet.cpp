#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "dhmamba/dhnet.hpp"
#include "dhmamba/oracles.hpp"

using namespace dhm;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.groups = 1;
  cfg.blocks = 1;
  cfg.channels = 4;
  cfg.state_size = 2;
  cfg.stride = 2;
  cfg.n_lr = 1;
  return cfg;
}

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = false) {
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (auto& v : t.impl()->data) v = rng.uniform(lo, hi);
  return t;
}

// y == D ⊙ x regardless of the selective parameters once the output mixing
// is zeroed; handy as a pass-through stand-in.
S6Params passthrough_s6(int channels, int state_size, Rng& rng, double gain = 1.0) {
  S6Params p = S6Params::init(channels, state_size, rng);
  for (auto& v : p.W_C.impl()->data) v = 0.0;
  for (auto& v : p.D.impl()->data) v = gain;
  return p;
}

}  // namespace

TEST_CASE("config validation rejects bad sizes") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.n_lr = 5;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.channels = 6;  // channel-attention reduction needs a multiple of 4
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config();
  cfg.groups = 0;
  CHECK_THROWS(cfg.validate());
  CHECK_NOTHROW(ModelConfig::paper_preset().validate());
}

TEST_CASE("scan context geometry pads odd sizes up to the stride") {
  const ScanContext ctx = make_scan_context(7, 5, 2);
  CHECK(ctx.h == 7);
  CHECK(ctx.w == 5);
  CHECK(ctx.hp == 8);
  CHECK(ctx.wp == 6);
  CHECK(ctx.lh == 4);
  CHECK(ctx.lw == 3);
  for (const auto& p : ctx.raster_hr) {
    CHECK(p.h == 7);
    CHECK(p.w == 5);
    CHECK(p.is_permutation());
  }
  for (const auto& p : ctx.circ_lr) {
    CHECK(p.h == 4);
    CHECK(p.w == 3);
    CHECK(p.is_permutation());
  }
  const ScanContext even = make_scan_context(8, 8, 2);
  CHECK(even.hp == 8);
  CHECK(even.lh == 4);
}

TEST_CASE("hi_scan splits paths into full- and low-resolution sequences") {
  Rng rng(1);
  const Tensor x = rand_tensor({1, 3, 6, 6}, rng);
  const auto hr = raster_paths(6, 6);
  const auto lr = raster_paths(3, 3);
  const Tensor k = Tensor::full({3, 1, 2, 2}, 0.25);

  for (int n_lr = 0; n_lr <= 4; ++n_lr) {
    const ScannedSequences s = hi_scan(x, hr, lr, n_lr, 2, k);
    CHECK(static_cast<int>(s.hr.size()) == 4 - n_lr);
    CHECK(static_cast<int>(s.lr.size()) == n_lr);
    for (const auto& t : s.hr) CHECK(t.shape() == Shape{1, 3, 36});
    for (const auto& t : s.lr) CHECK(t.shape() == Shape{1, 3, 9});
  }
  CHECK_THROWS(hi_scan(x, hr, lr, 5, 2, k));

  // first full-resolution sequence follows row-major order
  const ScannedSequences s = hi_scan(x, hr, lr, 0, 2, k);
  for (int t = 0; t < 36; ++t) CHECK(s.hr[0].data()[t] == x.data()[t]);

  // with an averaging kernel, low-res sequence elements are 2x2 block means
  const ScannedSequences s4 = hi_scan(x, hr, lr, 4, 2, k);
  const double m00 = 0.25 * (x.data()[0] + x.data()[1] + x.data()[6] + x.data()[7]);
  CHECK(s4.lr[0].data()[0] == doctest::Approx(m00));
}

TEST_CASE("hire with pass-through state modules averages the path results") {
  Rng rng(2);
  const Tensor x = rand_tensor({1, 2, 4, 4}, rng);
  const auto hr = raster_paths(4, 4);
  const auto lr = raster_paths(2, 2);
  const Tensor k = Tensor::full({2, 1, 2, 2}, 0.25);
  const S6Params id_hr = passthrough_s6(2, 3, rng);
  const S6Params id_lr = passthrough_s6(2, 3, rng);

  // all-HR: every path reproduces x after inversion, so the mean is x itself
  ScannedSequences s = hi_scan(x, hr, lr, 0, 2, k);
  Tensor y = hire(s, id_hr, id_lr, hr, lr, 0, 2, UpsampleMode::nearest, 4, 4);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  // all-LR with averaging downsample + nearest upsample: block means everywhere
  s = hi_scan(x, hr, lr, 4, 2, k);
  y = hire(s, id_hr, id_lr, hr, lr, 4, 2, UpsampleMode::nearest, 4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const int bi = (i / 2) * 2, bj = (j / 2) * 2;
      const double m = 0.25 * (x.data()[bi * 4 + bj] + x.data()[bi * 4 + bj + 1] +
                               x.data()[(bi + 1) * 4 + bj] + x.data()[(bi + 1) * 4 + bj + 1]);
      CHECK(y.data()[i * 4 + j] == doctest::Approx(m));
    }

  // sequence count mismatch is rejected
  CHECK_THROWS(hire(s, id_hr, id_lr, hr, lr, 2, 2, UpsampleMode::nearest, 4, 4));
}

TEST_CASE("local enhancement with zeroed output projection vanishes") {
  Rng rng(3);
  LemParams p = LemParams::init(8, rng);
  const Tensor f = rand_tensor({2, 8, 5, 5}, rng);
  const Tensor y = lem(f, p);
  CHECK(y.shape() == f.shape());
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("local enhancement matches a hand-composed pipeline") {
  Rng rng(4);
  LemParams p = LemParams::init(4, rng);
  for (auto& v : p.w_out.impl()->data) v = rng.uniform(-0.5, 0.5);
  const Tensor f = rand_tensor({1, 4, 4, 4}, rng);

  const Tensor e = conv2d(f, p.w_expand, p.b_expand, 1, 0);
  const Tensor f1 = slice_channels(e, 0, 4);
  const Tensor f2 = slice_channels(e, 4, 8);
  Tensor cr = conv2d(conv2d(f1, p.w_c1, p.b_c1, 1, 0), p.w_dw, p.b_dw, 1, 1, 4);
  cr = channel_attention(cr, p.cab);
  const Tensor gate = activation(Act::gelu, layer_norm(f2, p.ln_gamma, p.ln_beta));
  const Tensor want = conv2d(mul(gate, cr), p.w_out, p.b_out, 1, 0);

  const Tensor got = lem(f, p);
  for (int64_t i = 0; i < got.size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("block reduces to channel scaling when both modules are silenced") {
  ModelConfig cfg = tiny_config();
  Rng rng(5);
  DhmBlockParams p = DhmBlockParams::init(cfg, rng);
  // zero the state-module outputs in both domains; the enhancement module is
  // already zero at init
  auto silence = [&](HiScanParams& h) {
    for (auto& v : h.s6_hr.W_C.impl()->data) v = 0.0;
    for (auto& v : h.s6_lr.W_C.impl()->data) v = 0.0;
    for (auto& v : h.s6_hr.D.impl()->data) v = 0.0;
    for (auto& v : h.s6_lr.D.impl()->data) v = 0.0;
  };
  silence(p.image);
  silence(p.kspace);
  for (auto& v : p.alpha.impl()->data) v = 2.0;
  for (auto& v : p.beta.impl()->data) v = 3.0;

  const ScanContext ctx = make_scan_context(6, 6, cfg.stride);
  const Tensor f = rand_tensor({1, 4, 6, 6}, rng);
  const Tensor y = dhm_block(f, p, ctx, cfg);
  for (int64_t i = 0; i < f.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(6.0 * f.data()[i]).epsilon(1e-10));
}

TEST_CASE("zero input stays zero through block, group, and dual-domain core") {
  ModelConfig cfg = tiny_config();
  Rng rng(6);
  const DhmBlockParams bp = DhmBlockParams::init(cfg, rng);
  const DhmGroupParams gp = DhmGroupParams::init(cfg, rng);
  const ScanContext ctx = make_scan_context(4, 4, cfg.stride);
  const Tensor z = Tensor::zeros({1, 4, 4, 4});
  for (const Tensor& y :
       {dhm::dhm(z, bp, ctx, cfg), dhm_block(z, bp, ctx, cfg), dhm_group(z, gp, ctx, cfg)})
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("group applies its residual around blocks plus fusion conv") {
  ModelConfig cfg = tiny_config();
  cfg.blocks = 2;
  Rng rng(7);
  const DhmGroupParams gp = DhmGroupParams::init(cfg, rng);
  const ScanContext ctx = make_scan_context(4, 4, cfg.stride);
  const Tensor f = rand_tensor({1, 4, 4, 4}, rng);

  Tensor x = f;
  for (const auto& blk : gp.blocks) x = dhm_block(x, blk, ctx, cfg);
  x = conv2d(x, gp.conv_w, gp.conv_b, 1, 1);
  const Tensor want = add(f, x);
  const Tensor got = dhm_group(f, gp, ctx, cfg);
  for (int64_t i = 0; i < got.size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("model forward keeps shape across sizes including odd ones") {
  ModelConfig cfg = tiny_config();
  const Model model = Model::init(cfg);
  Rng rng(8);
  for (int hw : {8, 9, 16}) {
    const Tensor x = rand_tensor({1, 2, hw, hw}, rng);
    const Tensor y = model.forward(x);
    CHECK(y.shape() == Shape{1, 2, hw, hw});
    for (int64_t i = 0; i < y.size(); ++i) CHECK(std::isfinite(y.data()[i]));
  }
  const Tensor x = rand_tensor({2, 2, 6, 10}, rng);
  CHECK(model.forward(x).shape() == Shape{2, 2, 6, 10});
  CHECK_THROWS(model.forward(rand_tensor({1, 3, 8, 8}, rng)));
}

TEST_CASE("pixel-shuffle head upsamples by the configured factor") {
  ModelConfig cfg = tiny_config();
  cfg.shuffle_r = 2;
  const Model model = Model::init(cfg);
  Rng rng(9);
  const Tensor x = rand_tensor({1, 2, 6, 6}, rng);
  CHECK(model.forward(x).shape() == Shape{1, 2, 12, 12});
}

TEST_CASE("freshly initialized model is the identity on its input") {
  ModelConfig cfg = tiny_config();
  cfg.groups = 2;
  cfg.blocks = 2;
  const Model model = Model::init(cfg);
  Rng rng(10);
  const Tensor x = rand_tensor({1, 2, 8, 8}, rng);
  const Tensor y = model.forward(x);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("expansion projections double the scanned width and keep shape") {
  ModelConfig cfg = tiny_config();
  cfg.expand = 2;
  Rng rng(11);
  const HiScanParams hp = HiScanParams::init(cfg.channels, cfg.state_size, cfg.stride,
                                             cfg.expand, rng);
  CHECK(hp.in_w.defined());
  CHECK(hp.in_w.shape() == Shape{8, 4, 1, 1});
  CHECK(hp.out_w.shape() == Shape{4, 8, 1, 1});
  CHECK(hp.s6_hr.channels == 8);

  const Model model = Model::init(cfg);
  const Tensor x = rand_tensor({1, 2, 6, 6}, rng);
  CHECK(model.forward(x).shape() == Shape{1, 2, 6, 6});
}

TEST_CASE("parameter visitation yields unique names and the exact total") {
  ModelConfig cfg = tiny_config();
  cfg.groups = 2;
  cfg.blocks = 2;
  Model model = Model::init(cfg);
  std::set<std::string> names;
  int64_t total = 0;
  visit_params(model, [&](const std::string& name, Tensor& t) {
    CHECK(names.insert(name).second);  // no duplicates
    CHECK(t.defined());
    total += t.size();
  });
  CHECK(total == param_count(model));
  CHECK(names.count("head_w") == 1);
  CHECK(names.count("group1.block0.kspace.s6_lr.A_log") == 1);
  CHECK(names.count("group0.block1.lem.cab.w2") == 1);

  // same seed, same weights; different seed, different weights
  Model again = Model::init(cfg);
  bool equal = true, differs = false;
  ModelConfig other = cfg;
  other.seed = 77;
  Model third = Model::init(other);
  visit_params(model, [&](const std::string& name, Tensor& t) {
    visit_params(again, [&](const std::string& n2, Tensor& t2) {
      if (n2 == name && t2.impl()->data != t.impl()->data) equal = false;
    });
    visit_params(third, [&](const std::string& n2, Tensor& t2) {
      if (n2 == name && t2.impl()->data != t.impl()->data) differs = true;
    });
  });
  CHECK(equal);
  CHECK(differs);
}

TEST_CASE("gradients through the dual-domain block agree with finite differences") {
  ModelConfig cfg = tiny_config();
  Rng rng(12);
  DhmBlockParams p = DhmBlockParams::init(cfg, rng);
  // give the silenced-by-default output projection a signal to differentiate
  for (auto& v : p.lem.w_out.impl()->data) v = rng.uniform(-0.3, 0.3);
  const ScanContext ctx = make_scan_context(5, 4, cfg.stride);
  Tensor f = rand_tensor({1, 4, 5, 4}, rng, -1.0, 1.0, true);

  std::vector<Tensor> leaves = {f,          p.ln1_gamma,      p.alpha,
                                p.beta,     p.image.s6_hr.D,  p.image.s6_lr.W_C,
                                p.image.down_kernel, p.kspace.s6_hr.W_delta,
                                p.lem.w_out, p.lem.cab.w1};
  const double err = oracle::fd_max_rel_err(
      [&] { return sum_all(mul(dhm_block(f, p, ctx, cfg), dhm_block(f, p, ctx, cfg))); },
      leaves, 1e-5, 6, 21);
  CHECK(err < 1e-3);
}

TEST_CASE("gradients through the full model agree with finite differences") {
  ModelConfig cfg = tiny_config();
  Model model = Model::init(cfg);
  // give the zero-initialized output stages signal so their inputs matter
  Rng rng(13);
  for (auto& v : model.rec2_w.impl()->data) v = rng.uniform(-0.3, 0.3);
  visit_params(model, [&](const std::string& name, Tensor& t) {
    if (name.find("lem.w_out") != std::string::npos)
      for (auto& v : t.impl()->data) v = rng.uniform(-0.3, 0.3);
  });
  Tensor x = rand_tensor({2, 2, 8, 8}, rng, -1.0, 1.0, true);

  std::vector<Tensor> leaves = {x, model.head_w, model.tail_b, model.rec1_w, model.rec2_w};
  visit_params(model, [&](const std::string& name, Tensor& t) {
    if (name == "group0.block0.image.s6_hr.A_log" || name == "group0.block0.kspace.s6_lr.W_B" ||
        name == "group0.block0.lem.w_dw" || name == "group0.block0.alpha")
      leaves.push_back(t);
  });
  const double err = oracle::fd_max_rel_err(
      [&] { return l1_loss(model.forward(x), scale(x, 0.5)); }, leaves, 1e-5, 5, 33);
  CHECK(err < 1e-3);
}
