#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "oclip/config.hpp"
#include "oclip/params.hpp"
#include "oclip/synthdata.hpp"

namespace oclip {

// lr_min + 0.5 (lr_init - lr_min) (1 + cos(pi step / total_steps))
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_init, double lr_min = 0.0);

struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double lr_init = 1e-4;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;  // aligned with ParamStore order
  std::vector<std::vector<double>> v;

  static OptimState for_params(const ParamStore& params, double lr_init, double weight_decay);
};

// One bias-corrected Adam update with decoupled decay theta -= lr*wd*theta on
// decayed parameters only. `grads` follows ParamStore order. Throws a
// divergence error naming the parameter on a non-finite gradient, leaving
// params and state untouched.
void adamw_step(ParamStore& params, std::span<const std::vector<double>> grads, OptimState& state,
                double lr);

struct TrainHyper {
  std::size_t batch = 8;
  std::uint64_t steps = 500;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  double lr = 1e-3;  // desk scale; the full-size schedule starts at 1e-4
  double lr_min = 0.0;
  double weight_decay = 0.01;
  bool contrastive = true;   // false: --no-bcl
  bool use_decoder = true;   // false: --no-vtd
};

struct Checkpoint {
  static constexpr std::uint16_t kVersion = 1;

  ModelConfig config;
  TrainHyper hyper;
  ParamStore params;
  OptimState optim;
  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;

  static Checkpoint fresh(const ModelConfig& config, const TrainHyper& hyper);
};

// Layout: "OCLP", u16 little-endian version, one line of JSON (config,
// optimizer scalars, tensor names/shapes/offsets), then every tensor as raw
// little-endian float64 in header order.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct MetricRow {
  std::uint64_t step = 0;
  double l_cls = 0.0;
  double l_bc = 0.0;
  double total = 0.0;
  double acc = 0.0;
  double lr = 0.0;
  bool operator==(const MetricRow&) const = default;
};

std::string metric_line(const MetricRow& row);

struct TrainOptions {
  std::uint64_t checkpoint_every = 0;  // 0: only at the end
  std::string checkpoint_path;         // empty: never written
  std::string metrics_path;            // empty: not written; on resume rows from start.step on are replaced
  std::function<void(const MetricRow&)> on_step;
};

// The per-sample annotation subset used for training with `hyper.fraction`.
// Fixed for the whole run so unannotated instances are never seen.
std::vector<Sample> annotated_view(std::span<const Sample> corpus, const TrainHyper& hyper);

// Sample indices of the batch drawn at `step`.
std::vector<std::size_t> batch_indices(std::size_t corpus_size, const TrainHyper& hyper,
                                       std::uint64_t step);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRow> metrics;
};

// Runs from `start.step` up to `start.hyper.steps`. On divergence the state
// before the failing step is written to the checkpoint path (if any) and the
// divergence error propagates.
TrainResult train(std::span<const Sample> corpus, Checkpoint start, const TrainOptions& options = {});

}  // namespace oclip
