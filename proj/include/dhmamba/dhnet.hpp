#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "dhmamba/scan.hpp"
#include "dhmamba/ssm.hpp"
#include "dhmamba/tensor.hpp"

namespace dhm {

// Architecture knobs. Defaults are the desk-scale configuration; the paper
// preset (6,6,64,16) is used for cost accounting.
struct ModelConfig {
  int groups = 2;       // M
  int blocks = 2;       // N per group
  int channels = 16;    // C
  int state_size = 8;   // S6 state size
  int stride = 2;       // hierarchy stride s
  int n_lr = 3;         // low-resolution paths, 0..4
  int shuffle_r = 1;    // pixel-shuffle factor in the reconstruction head
  int expand = 1;       // optional per-branch expansion factor
  UpsampleMode upsample = UpsampleMode::nearest;
  uint64_t seed = 0;

  void validate() const;
  static ModelConfig paper_preset();
};

// One hierarchical-scan branch: distinct HR and LR S6 operators plus the
// depthwise downsampling kernel. Optional expansion projections are defined
// only when config expand > 1.
struct HiScanParams {
  S6Params s6_hr;
  S6Params s6_lr;
  Tensor down_kernel;  // [C,1,s,s]
  Tensor in_w, in_b, out_w, out_b;  // 1x1 expansion convs, optional

  static HiScanParams init(int channels, int state_size, int s, int expand, Rng& rng);
};

struct LemParams {
  Tensor w_expand, b_expand;  // 1x1: C -> 2C
  Tensor w_c1, b_c1;          // 1x1: C -> C
  Tensor w_dw, b_dw;          // depthwise 3x3
  ChannelAttention cab;
  Tensor ln_gamma, ln_beta;   // gate branch layer norm
  Tensor w_out, b_out;        // 1x1: C -> C

  static LemParams init(int channels, Rng& rng);
};

struct DhmBlockParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
  HiScanParams image;   // over C channels
  HiScanParams kspace;  // over 2C channels
  Tensor alpha, beta;   // per-channel skip scales
  LemParams lem;

  static DhmBlockParams init(const ModelConfig& cfg, Rng& rng);
};

struct DhmGroupParams {
  std::vector<DhmBlockParams> blocks;
  Tensor conv_w, conv_b;  // 3x3 C -> C

  static DhmGroupParams init(const ModelConfig& cfg, Rng& rng);
};

struct Model {
  ModelConfig cfg;
  Tensor head_w, head_b;  // 3x3: 2 -> C (shallow extraction)
  std::vector<DhmGroupParams> groups;
  Tensor tail_w, tail_b;  // 3x3: C -> C (deep feature conv)
  Tensor rec1_w, rec1_b;  // 3x3: C -> C*r^2
  Tensor rec2_w, rec2_b;  // 3x3: C -> 2 (after pixel shuffle)

  static Model init(const ModelConfig& cfg);
  Tensor forward(const Tensor& input) const;  // [B,2,H,W] -> [B,2,H*r,W*r]
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_params(Model& model, const ParamVisitor& fn);
int64_t param_count(Model& model);

// Scan paths and padded/low-res geometry shared by all blocks of one forward
// pass at a given spatial size.
struct ScanContext {
  int h = 0, w = 0;    // input size
  int hp = 0, wp = 0;  // replicate-padded size (divisible by stride)
  int lh = 0, lw = 0;  // low-resolution size
  std::array<ScanPath, 4> raster_hr, raster_lr;
  std::array<ScanPath, 4> circ_hr, circ_lr;
};
ScanContext make_scan_context(int h, int w, int stride);

// Hi-scan: unfold one map into n_HR full-resolution sequences and n_LR
// downsampled sequences.
struct ScannedSequences {
  std::vector<Tensor> hr;
  std::vector<Tensor> lr;
};
ScannedSequences hi_scan(const Tensor& x, const std::array<ScanPath, 4>& hr_paths,
                         const std::array<ScanPath, 4>& lr_paths, int n_lr, int stride,
                         const Tensor& down_kernel);

// HiRe: per-resolution S6, inverse scan, upsample-and-sum fusion back to
// (out_h, out_w).
Tensor hire(const ScannedSequences& seqs, const S6Params& s6_hr, const S6Params& s6_lr,
            const std::array<ScanPath, 4>& hr_paths, const std::array<ScanPath, 4>& lr_paths,
            int n_lr, int stride, UpsampleMode mode, int out_h, int out_w);

// Local enhancement module (gated product of a conv/channel-attention branch
// and a normalized GELU gate).
Tensor lem(const Tensor& f, const LemParams& p);

// Dual-domain block core: image branch over raster paths, k-space branch over
// circular paths on the packed centered spectrum.
Tensor dhm(const Tensor& s_in, const DhmBlockParams& p, const ScanContext& ctx,
           const ModelConfig& cfg);

Tensor dhm_block(const Tensor& f, const DhmBlockParams& p, const ScanContext& ctx,
                 const ModelConfig& cfg);
Tensor dhm_group(const Tensor& f, const DhmGroupParams& p, const ScanContext& ctx,
                 const ModelConfig& cfg);

}  // namespace dhm
