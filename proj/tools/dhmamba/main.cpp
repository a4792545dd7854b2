#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dhmamba/harness.hpp"
#include "dhmamba/oracles.hpp"

namespace {

using namespace dhm;

uint64_t default_seed() {
  if (const char* env = std::getenv("DHMAMBA_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

MaskKind parse_kind(const std::string& s) {
  if (s == "cartesian") return MaskKind::cartesian1d;
  if (s == "radial") return MaskKind::radial;
  if (s == "random") return MaskKind::random2d;
  throw CLI::ValidationError("--kind", "expected cartesian|radial|random");
}

MaskSpec dispatch_mask(const std::string& kind, int h, int w, int af, uint64_t seed) {
  switch (parse_kind(kind)) {
    case MaskKind::cartesian1d:
      return cartesian_mask(h, w, af, seed);
    case MaskKind::radial:
      return radial_mask(h, w, af, seed);
    default:
      return random_mask(h, w, af, seed);
  }
}

void write_csv_grid(const std::string& path, const std::vector<double>& v, int h, int w) {
  std::ostringstream out;
  out.precision(12);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) out << (j ? "," : "") << v[static_cast<size_t>(i) * w + j];
    out << '\n';
  }
  std::ofstream f(path + ".tmp", std::ios::binary);
  f << out.str();
  f.close();
  std::filesystem::rename(path + ".tmp", path);
}

// ---- selftest: quick oracle/invariant sweep, one line per check ------------

struct Selftest {
  int failures = 0;
  void check(const std::string& name, bool ok) {
    std::cout << (ok ? "pass" : "FAIL") << "  " << name << '\n';
    if (!ok) ++failures;
  }
};

int run_selftest() {
  Selftest st;
  Rng rng(7, "selftest");

  {  // fast transform vs direct DFT, and round trip
    ComplexGrid g(8, 8);
    for (auto& v : g.re) v = rng.normal();
    for (auto& v : g.im) v = rng.normal();
    const ComplexGrid fast = fft2(g);
    const ComplexGrid slow = oracle::dft2(g);
    double err = 0.0, rt = 0.0;
    for (size_t i = 0; i < fast.re.size(); ++i)
      err = std::max({err, std::abs(fast.re[i] - slow.re[i]), std::abs(fast.im[i] - slow.im[i])});
    const ComplexGrid back = ifft2(fast);
    for (size_t i = 0; i < back.re.size(); ++i)
      rt = std::max({rt, std::abs(back.re[i] - g.re[i]), std::abs(back.im[i] - g.im[i])});
    st.check("fft matches direct dft (8x8, <1e-10)", err < 1e-10);
    st.check("fft round trip (<1e-10)", rt < 1e-10);
  }

  {  // all scan paths are permutations with exact round trips
    bool ok = true;
    for (int h = 1; h <= 6 && ok; ++h)
      for (int w = 1; w <= 6 && ok; ++w) {
        for (const auto& p : raster_paths(h, w)) ok = ok && p.is_permutation();
        for (const auto& p : circular_paths(h, w)) ok = ok && p.is_permutation();
      }
    st.check("scan paths are bijective (1..6 squared)", ok);
  }

  {  // frozen recurrence equals its convolution kernel
    bool ok = true;
    for (int draw = 0; draw < 5; ++draw) {
      const int hs = 4, len = 32;
      std::vector<double> a(hs), b(hs), c(hs), x(len);
      for (int i = 0; i < hs; ++i) {
        a[i] = rng.uniform(0.05, 0.95);
        b[i] = rng.normal();
        c[i] = rng.normal();
      }
      for (auto& v : x) v = rng.normal();
      const double d = rng.normal();
      const auto y1 = frozen_scan(a, b, c, d, x);
      const auto y2 = causal_conv(lti_kernel(a, b, c, len), d, x);
      for (int t = 0; t < len; ++t) ok = ok && std::abs(y1[t] - y2[t]) < 1e-8;
    }
    st.check("state recurrence equals kernel convolution (<1e-8)", ok);
  }

  {  // gradient spot check on a small mixed composite
    Rng wr(3, "selftest.weights");
    Tensor x = Tensor::uniform_fan_in({1, 2, 6, 6}, 4, wr);
    Tensor w = Tensor::uniform_fan_in({2, 2, 3, 3}, 18, wr);
    Tensor b = Tensor::zeros({2}, true);
    auto fn = [&]() {
      return sum_all(abs(activation(Act::gelu, conv2d(x, w, b, 1, 1))));
    };
    const double err = oracle::fd_max_rel_err(fn, {x, w, b});
    st.check("finite differences on conv+gelu (<1e-4)", err < 1e-4);
  }

  {  // mask invariants
    const MaskSpec m = cartesian_mask(32, 100, 4, 11);
    bool center = true;
    for (int j = 46; j < 54; ++j) center = center && m.at(0, j) == 1;
    st.check("cartesian mask center block sampled", center);
    const MaskSpec r = radial_mask(64, 64, 5, 1);
    const double f = r.sampled_fraction();
    st.check("radial mask fraction within 5% of 1/AF", f >= 0.95 / 5 && f <= 1.05 / 5);
    const MaskSpec id = random_mask(16, 16, 1, 0);
    st.check("AF=1 random mask is all ones",
             id.sampled_fraction() == 1.0);
  }

  {  // undersample identity and checkpoint round trip
    const Phantom ph = make_phantom(16, 16, 5);
    const ComplexGrid gt = ph.complex_image();
    MaskSpec ones;
    ones.h = ones.w = 16;
    ones.af = 1;
    ones.mask.assign(256, 1);
    const Undersampled us = undersample(gt, ones);
    double err = 0.0;
    for (size_t i = 0; i < gt.re.size(); ++i)
      err = std::max({err, std::abs(us.image.re[i] - gt.re[i]),
                      std::abs(us.image.im[i] - gt.im[i])});
    st.check("identity mask is lossless (<1e-10)", err < 1e-10);

    ModelConfig cfg;
    cfg.channels = 8;
    cfg.state_size = 4;
    cfg.groups = cfg.blocks = 1;
    cfg.seed = 9;
    Model m = Model::init(cfg);
    const std::string path = "selftest.ckpt";
    save_checkpoint(path, m, 3, "");
    Checkpoint loaded = load_checkpoint(path);
    NoGradGuard ng;
    Tensor probe = Tensor::from({1, 2, 8, 8}, std::vector<double>(128, 0.25));
    Tensor y1 = m.forward(probe), y2 = loaded.model.forward(probe);
    bool same = y1.size() == y2.size();
    for (int64_t i = 0; same && i < y1.size(); ++i) same = y1.data()[i] == y2.data()[i];
    std::filesystem::remove(path);
    st.check("checkpoint round trip is bit identical", same);
  }

  std::cout << (st.failures == 0 ? "selftest: all checks passed\n"
                                 : "selftest: FAILURES above\n");
  return st.failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dhmamba: dual-domain state-space MRI reconstruction toolkit"};
  app.require_subcommand(1);

  uint64_t seed = default_seed();  // DHMAMBA_SEED fallback, overridden by --seed

  // mask
  auto* mask_cmd = app.add_subcommand("mask", "generate an undersampling mask (PGM)");
  std::string mask_kind = "cartesian", mask_out = "mask.pgm";
  int mh = 32, mw = 32, maf = 4;
  mask_cmd->add_option("--kind", mask_kind, "cartesian|radial|random");
  mask_cmd->add_option("--height", mh);
  mask_cmd->add_option("--width", mw);
  mask_cmd->add_option("--af", maf, "acceleration factor");
  mask_cmd->add_option("--seed", seed);
  mask_cmd->add_option("--out", mask_out);

  // phantom
  auto* ph_cmd = app.add_subcommand("phantom", "generate a synthetic magnitude image (PGM)");
  std::string ph_out = "phantom.pgm";
  int ph_h = 32, ph_w = 32, ph_n = 6;
  ph_cmd->add_option("--height", ph_h);
  ph_cmd->add_option("--width", ph_w);
  ph_cmd->add_option("--n-ellipses", ph_n);
  ph_cmd->add_option("--seed", seed);
  ph_cmd->add_option("--out", ph_out);

  // scan-dump
  auto* scan_cmd = app.add_subcommand("scan-dump", "dump a scan path's visit order (CSV)");
  std::string scan_kind = "circular", scan_out = "scan.csv";
  int sc_h = 8, sc_w = 8, sc_path = 0;
  scan_cmd->add_option("--kind", scan_kind, "raster|circular");
  scan_cmd->add_option("--height", sc_h);
  scan_cmd->add_option("--width", sc_w);
  scan_cmd->add_option("--path", sc_path, "path index 0..3");
  scan_cmd->add_option("--out", scan_out);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the desk model on synthetic data");
  TrainConfig tc;
  tc.out_dir = "run";
  std::string tr_mask = "cartesian";
  train_cmd->add_option("--steps", tc.steps);
  train_cmd->add_option("--batch", tc.batch);
  train_cmd->add_option("--lr", tc.lr_init);
  train_cmd->add_option("--lr-final", tc.lr_final);
  train_cmd->add_option("--weight-decay", tc.weight_decay);
  train_cmd->add_option("--corpus", tc.corpus);
  train_cmd->add_option("--size", tc.image_size);
  train_cmd->add_option("--af", tc.af);
  train_cmd->add_option("--mask-kind", tr_mask, "cartesian|radial|random");
  train_cmd->add_option("--groups", tc.model.groups);
  train_cmd->add_option("--blocks", tc.model.blocks);
  train_cmd->add_option("--channels", tc.model.channels);
  train_cmd->add_option("--state", tc.model.state_size);
  train_cmd->add_option("--n-lr", tc.model.n_lr);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--out", tc.out_dir, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint vs the zero-filled baseline");
  std::string ev_ckpt = "run/model.ckpt", ev_mask = "cartesian", ev_out = "report.csv";
  int ev_n = 8, ev_af = 4, ev_size = 32;
  eval_cmd->add_option("--ckpt", ev_ckpt)->required();
  eval_cmd->add_option("--n", ev_n, "number of held-out images");
  eval_cmd->add_option("--af", ev_af);
  eval_cmd->add_option("--mask-kind", ev_mask);
  eval_cmd->add_option("--size", ev_size);
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--out", ev_out);

  // erf
  auto* erf_cmd = app.add_subcommand("erf", "effective-receptive-field map (PGM + CSV)");
  std::string erf_ckpt = "run/model.ckpt", erf_out = "erf";
  int erf_size = 32, erf_ci = -1, erf_cj = -1;
  erf_cmd->add_option("--ckpt", erf_ckpt)->required();
  erf_cmd->add_option("--size", erf_size);
  erf_cmd->add_option("--ci", erf_ci, "center row (default: middle)");
  erf_cmd->add_option("--cj", erf_cj, "center col (default: middle)");
  erf_cmd->add_option("--seed", seed);
  erf_cmd->add_option("--out", erf_out, "output prefix");

  // cost
  auto* cost_cmd = app.add_subcommand("cost", "analytic parameter / MAC accounting (CSV)");
  std::string cost_preset = "desk", cost_out = "cost.csv";
  int cost_h = 0, cost_w = 0, cost_nlr = -1;
  cost_cmd->add_option("--preset", cost_preset, "desk|paper");
  cost_cmd->add_option("--height", cost_h);
  cost_cmd->add_option("--width", cost_w);
  cost_cmd->add_option("--n-lr", cost_nlr);
  cost_cmd->add_option("--out", cost_out);

  // selftest
  app.add_subcommand("selftest", "run the built-in oracle/invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << '\n';
    return 2;
  }

  try {
    if (mask_cmd->parsed()) {
      const MaskSpec m = dispatch_mask(mask_kind, mh, mw, maf, seed);
      write_pgm(mask_out, m);
      std::cout << "wrote " << mask_out << " (sampled fraction " << m.sampled_fraction() << ")\n";
    } else if (ph_cmd->parsed()) {
      const Phantom p = make_phantom(ph_h, ph_w, seed, ph_n);
      write_pgm(ph_out, p.magnitude, ph_h, ph_w);
      std::cout << "wrote " << ph_out << '\n';
    } else if (scan_cmd->parsed()) {
      std::array<ScanPath, 4> paths =
          scan_kind == "raster" ? raster_paths(sc_h, sc_w) : circular_paths(sc_h, sc_w);
      if (sc_path < 0 || sc_path > 3) throw std::runtime_error("--path must be 0..3");
      std::vector<double> order(paths[static_cast<size_t>(sc_path)].order.begin(),
                                paths[static_cast<size_t>(sc_path)].order.end());
      write_csv_grid(scan_out, order, 1, static_cast<int>(order.size()));
      std::cout << "wrote " << scan_out << '\n';
    } else if (train_cmd->parsed()) {
      tc.mask_kind = parse_kind(tr_mask);
      tc.seed = seed;
      const TrainResult res = train(tc);
      const size_t n = res.loss_log.size();
      std::cout << "trained " << n << " steps in " << res.wall_seconds << " s";
      if (n >= 1)
        std::cout << "; first loss " << res.loss_log.front() << ", last loss "
                  << res.loss_log.back();
      std::cout << "\nartifacts in " << tc.out_dir << "/\n";
    } else if (eval_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(ev_ckpt);
      const RunReport rep =
          evaluate(ckpt.model, ev_n, parse_kind(ev_mask), ev_af, ev_size, seed);
      write_report_csv(ev_out, rep);
      std::cout << "model PSNR " << rep.model_mean.psnr << " +/- " << rep.model_std.psnr
                << " dB; zero-filled " << rep.zf_mean.psnr << " +/- " << rep.zf_std.psnr
                << " dB\nwrote " << ev_out << '\n';
    } else if (erf_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(erf_ckpt);
      const Phantom p = make_phantom(erf_size, erf_size, seed);
      const MaskSpec m = cartesian_mask(erf_size, erf_size, 4, seed);
      const Undersampled us = undersample(p.complex_image(), m);
      const int ci = erf_ci < 0 ? erf_size / 2 : erf_ci;
      const int cj = erf_cj < 0 ? erf_size / 2 : erf_cj;
      const std::vector<double> map = erf_map(ckpt.model, us.image, ci, cj);
      write_pgm(erf_out + ".pgm", map, erf_size, erf_size);
      write_csv_grid(erf_out + ".csv", map, erf_size, erf_size);
      int64_t support = 0;
      for (double v : map) support += v > 0.0;
      std::cout << "nonzero support " << support << " / " << map.size() << " pixels\nwrote "
                << erf_out << ".pgm, " << erf_out << ".csv\n";
    } else if (cost_cmd->parsed()) {
      ModelConfig cfg = cost_preset == "paper" ? ModelConfig::paper_preset() : ModelConfig{};
      if (cost_nlr >= 0) cfg.n_lr = cost_nlr;
      const int h = cost_h > 0 ? cost_h : (cost_preset == "paper" ? 256 : 32);
      const int w = cost_w > 0 ? cost_w : h;
      const CostReport rep = count_cost(cfg, h, w);
      write_cost_csv(cost_out, rep);
      std::cout << "params " << rep.total_params << ", MACs " << rep.total_macs << " at " << h
                << "x" << w << "\nwrote " << cost_out << '\n';
    } else {  // selftest
      return run_selftest();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
