#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhmamba/dhnet.hpp"
#include "dhmamba/mrisim.hpp"

namespace dhm {

// ---- checkpoints -----------------------------------------------------------
// Single-file format: a text manifest (config echo, step counter, RNG stream
// state, one line per named tensor with dtype f64 and shape) followed by the
// little-endian f64 blobs in manifest order. Writes are atomic
// (write-temp-rename); reload gives bit-identical forward outputs.

struct Checkpoint {
  Model model;
  int64_t step = 0;
  std::string rng_state;  // mt19937_64 stream serialization, may be empty
};

void save_checkpoint(const std::string& path, Model& model, int64_t step,
                     const std::string& rng_state = "");
Checkpoint load_checkpoint(const std::string& path);

// ---- optimizer / schedule --------------------------------------------------

// lr(0) = lr_init, lr(total) = lr_final, cosine in between.
double cosine_lr(int64_t step, int64_t total, double lr_init, double lr_final);

// Decoupled-weight-decay Adam over the model's visited parameters. State is
// keyed by visit order, so it stays valid as long as the model's structure is
// fixed.
class AdamW {
 public:
  AdamW(Model& model, double beta1 = 0.9, double beta2 = 0.99, double weight_decay = 0.05,
        double eps = 1e-8);

  // One update from the grads currently on the parameters; clears them after.
  void step(Model& model, double lr);
  int64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, wd_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- training / evaluation ---------------------------------------------

struct TrainConfig {
  ModelConfig model;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 0.05;
  // defaults chosen so the 200-step synthetic run halves its loss and beats
  // the zero-filled baseline by over 1 dB within the time budget
  double lr_init = 4e-3;
  double lr_final = 1e-3;
  int steps = 200;
  int batch = 8;
  MaskKind mask_kind = MaskKind::cartesian1d;
  int af = 4;
  int corpus = 32;      // number of synthetic training images
  int image_size = 32;  // square H = W
  uint64_t seed = 0;
  std::string out_dir;  // loss log + checkpoint land here when non-empty

  void validate() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_log;  // one entry per step
  double wall_seconds = 0.0;
};

TrainResult train(const TrainConfig& cfg);

struct EvalRow {
  MetricsReport model;
  MetricsReport zero_filled;
};

struct RunReport {
  std::vector<EvalRow> rows;
  MetricsReport model_mean, model_std;
  MetricsReport zf_mean, zf_std;
  double wall_seconds = 0.0;
};

// Fresh phantoms/masks drawn from `seed` (disjoint from training streams when
// the seed label differs); metrics on magnitude images, model vs zero-filled.
RunReport evaluate(const Model& model, int n_images, MaskKind kind, int af, int image_size,
                   uint64_t seed);

void write_report_csv(const std::string& path, const RunReport& report);
void write_loss_csv(const std::string& path, const std::vector<double>& loss_log,
                    const TrainConfig& cfg);

// ---- effective receptive field ------------------------------------------

// |d out[center] / d input| summed over the model's two input channels for
// each input pixel; input is the zero-filled reconstruction of a phantom.
std::vector<double> erf_map(const Model& model, const ComplexGrid& zero_filled, int ci, int cj);

// ---- cost accounting ------------------------------------------------------

struct CostRow {
  std::string name;
  int64_t params = 0;
  int64_t macs = 0;
};

struct CostReport {
  std::vector<CostRow> rows;
  int64_t total_params = 0;
  int64_t total_macs = 0;
};

// Analytic multiply-accumulate and parameter totals for a forward pass at
// H x W. Parameter totals match param_count(Model::init(cfg)) exactly.
CostReport count_cost(const ModelConfig& cfg, int h, int w);

void write_cost_csv(const std::string& path, const CostReport& report);

}  // namespace dhm
