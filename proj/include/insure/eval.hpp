// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "insure/model.hpp"
#include "insure/synth.hpp"
#include "insure/trainer.hpp"

namespace insure::eval {

/// Fraction of argmax-correct predictions from f(z*); deterministic encoding.
Scalar accuracy(const model::ModelParams& params, const synth::SynthDataset& dataset,
                model::MaskKind infer_mode);

// ---- mask-vs-ground-truth recovery ----

struct MaskRecovery {
  std::optional<Scalar> precision;  // empty when no mask element is on
  Scalar recall = 0.0;
  std::optional<Scalar> f1;
  int on_count = 0;
  int target_count = 0;
};

/// Hard-mask-on dimensions scored against the class-relevant regions
/// (III and IV) of the ground-truth map.
MaskRecovery mask_recovery(const Matrix& mask_logits,
                           const std::vector<synth::Region>& region_of_dim);

/// Region-map-aligned wrapper: requires probe mode and identity mixing so mask
/// coordinates mean the same thing as dataset coordinates.
MaskRecovery mask_recovery(const model::ModelParams& params, const synth::SynthDataset& dataset);

/// Fraction of the given region's dimensions the hard mask keeps on.
Scalar mask_recall_on_region(const model::ModelParams& params, const synth::SynthDataset& dataset,
                             synth::Region region);

// ---- information estimation (probe cross-entropy) ----

struct InfoEstimate {
  Scalar nats = 0.0;
  bool degenerate = false;  // single-class labels
};

/// I(feature; y) ~= H(y) - holdout cross-entropy of a freshly trained affine
/// probe on an 80/20 split; clipped below at zero. Needs >= 200 samples.
InfoEstimate estimate_label_information(const Matrix& features, const std::vector<int>& labels,
                                        std::uint64_t split_seed);

// ---- sufficiency sweep over training checkpoints ----

struct TheoremPoint {
  int step = 0;
  Scalar it_label = 0.0;   // KL[f(z) || f(z*)] on the evaluation set
  Scalar info_z = 0.0;     // I(z; y) estimate
  Scalar info_zstar = 0.0; // I(z*; y) estimate
  Scalar gap() const { return info_z - info_zstar; }
};

std::vector<TheoremPoint> sufficiency_sweep(
    const std::vector<std::pair<int, model::ModelParams>>& checkpoints,
    const synth::SynthDataset& data, std::uint64_t split_seed);

/// Spearman rank correlation with average ranks on ties.
Scalar spearman(const std::vector<Scalar>& a, const std::vector<Scalar>& b);

// ---- per-dimension mutual information (region semantics) ----

/// Plug-in estimate with equal-width binning and Miller-Madow bias
/// correction, clipped at zero.
Scalar dimension_mi(const Matrix& x, Index dim, const std::vector<int>& targets, int n_targets,
                    int bins = 16);

// Finite-sample thresholds certifying a dimension's region on generated data.
inline constexpr Scalar kMiRelevantFloor = 0.04;
inline constexpr Scalar kMiIrrelevantCeil = 0.02;

// ---- ablation suite (Table-2 layout) ----

struct AblationRow {
  std::string name;
  std::vector<Scalar> per_domain;  // mean over seeds, per held-out domain
  Scalar mean = 0.0;
  Scalar std_over_seeds = 0.0;  // std of the per-seed overall means
};

struct AblationResult {
  std::vector<std::string> variant_names;
  std::vector<int> holdout_original_ids;
  std::vector<std::uint64_t> seeds;
  // accuracy[variant][holdout][seed]
  std::vector<std::vector<std::vector<Scalar>>> accuracy;

  std::vector<AblationRow> rows() const;
  Scalar seed_mean(std::size_t variant, std::size_t seed) const;
};

/// Trains every loss-term combination leave-one-domain-out over all domains
/// and seeds. `jobs` bounds concurrent trainings; results are merged in
/// variant order regardless of scheduling.
AblationResult run_ablation(const synth::SynthDataset& dataset, const train::TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, int jobs = 1);

// ---- region-III experiment ----

struct Region3Row {
  std::string name;
  Scalar accuracy = 0.0;
  Scalar accuracy_std = 0.0;
  Scalar recall_iii = 0.0;  // fraction of region-III dims kept in z*
  Scalar recall_iv = 0.0;
};

struct Region3Result {
  std::vector<std::uint64_t> seeds;
  std::vector<int> holdout_original_ids;
  // [side][holdout][seed]; side 0 = label purification, 1 = domain purification
  std::vector<std::vector<std::vector<Scalar>>> accuracy;
  std::vector<std::vector<std::vector<Scalar>>> recall_iii;
  std::vector<std::vector<std::vector<Scalar>>> recall_iv;

  std::vector<Region3Row> rows() const;  // exactly two rows
};

/// Head-to-head run of the two purification directions: the label-side loss
/// lets z* keep domain-specific class signal, the domain-side mirror discards
/// it. Requires region-III dimensions and probe mode.
Region3Result region3_experiment(const synth::SynthDataset& dataset,
                                 const train::TrainConfig& config,
                                 const std::vector<std::uint64_t>& seeds, int jobs = 1);

// ---- report files ----

void write_ablation_csv(const AblationResult& result, std::ostream& out);
void write_seed_stats_csv(const AblationResult& result, std::ostream& out);
void write_region3_csv(const Region3Result& result, std::ostream& out);

}  // namespace insure::eval
