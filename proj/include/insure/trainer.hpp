// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "insure/losses.hpp"
#include "insure/model.hpp"
#include "insure/synth.hpp"

namespace insure::train {

struct TrainConfig {
  int steps = 5000;
  int batch_size = 32;
  Scalar lr_mask = 3.5e-4;
  Scalar lr_rest = 5e-5;
  losses::LossWeights weights;
  int sma_start = 100;  // first step that contributes to the parameter average
  losses::TrainMode mode = losses::TrainMode::kMultiDG;
  losses::PurificationSide puri_side = losses::PurificationSide::kLabel;
  losses::LossToggles toggles;
  model::MaskKind train_mask = model::MaskKind::kHard;
  bool stochastic_encode = true;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // snapshot the raw params every n steps (0 = off)

  // Model structure; feature_dim 0 tracks the input width.
  Index hidden_dim = 64;
  int hidden_layers = 2;
  Index feature_dim = 0;
  bool probe = false;
};

/// Exponential warm-up: final * (2 / (1 + exp(-10 step / T)) - 1).
/// Zero at step 0, monotone, within 0.1% of `final` at step = T.
Scalar schedule_weight(int step, int horizon, Scalar final_value);

struct AdamConfig {
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long t = 0;
};

/// One bias-corrected Adam update over a parameter list; `lrs` carries the
/// per-parameter learning rate (mask vs rest). Throws on non-finite gradients
/// without touching any parameter.
void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
               const std::vector<Scalar>& lrs, AdamState& state, const AdamConfig& cfg = {});

struct SmaState {
  std::optional<model::ModelParams> snapshot;
  long count = 0;
};

/// Running arithmetic mean of parameter states from sma_start (1-based step
/// indexing) to the end of training.
void sma_update(SmaState& state, const model::ModelParams& params, int step, int sma_start);

/// The averaged snapshot; empty before the first contribution.
const std::optional<model::ModelParams>& sma_params(const SmaState& state);

struct StepRecord {
  int step = 0;
  losses::LossBreakdown loss;
  int mask_on = 0;
};

struct RunMetrics {
  std::vector<StepRecord> steps;
  bool aborted = false;
  int abort_step = -1;
  std::string abort_reason;
};

struct TrainResult {
  model::ModelParams raw;
  std::optional<model::ModelParams> sma;
  RunMetrics metrics;
  std::vector<std::pair<int, model::ModelParams>> checkpoints;  // (step, raw params)

  /// SMA snapshot when available, raw parameters otherwise.
  const model::ModelParams& inference_params() const { return sma ? *sma : raw; }
};

TrainResult train(const TrainConfig& config, const synth::SynthDataset& train_set);

/// Column order: step,dis,it_l,it_d,puri,msr,ib,total,alpha,beta,mask_on
void write_metrics_csv(const RunMetrics& metrics, std::ostream& out);

}  // namespace insure::train
