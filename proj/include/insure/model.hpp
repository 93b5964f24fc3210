// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "insure/rng.hpp"
#include "insure/synth.hpp"
#include "insure/tape.hpp"

namespace insure::model {

enum class MaskKind { kHard, kSoft };

struct MaskMode {
  MaskKind train_mode = MaskKind::kHard;
  MaskKind infer_mode = MaskKind::kHard;
};

struct ModelConfig {
  Index input_dim = 0;
  Index feature_dim = 0;  // k; 0 means "same as input_dim"
  Index hidden_dim = 64;
  int hidden_layers = 2;
  int n_classes = 0;
  int n_domains = 0;
  // Probe mode freezes the encoder to the identity and disables IB sampling,
  // so mask coordinates line up with raw feature coordinates.
  bool probe = false;

  Index resolved_feature_dim() const { return feature_dim > 0 ? feature_dim : input_dim; }
  void validate() const;
};

/// Encoder trunk with mean / log-variance heads, the mask logits, and the two
/// affine classifiers. Value-semantic; forward passes never mutate.
struct ModelParams {
  ModelConfig config;
  std::vector<Matrix> enc_w;  // hidden_layers entries (empty in probe mode)
  std::vector<Matrix> enc_b;  // 1 x hidden biases
  Matrix w_mu, b_mu;
  Matrix w_lv, b_lv;
  Matrix mask_logits;  // 1 x k
  Matrix f_w, f_b;     // k x C, 1 x C
  Matrix g_w, g_b;     // k x D, 1 x D
};

/// Mask starts all-on (logits at -1, so sigma < 0.5 everywhere); weights are
/// fan-in-scaled symmetric uniform; biases zero. Deterministic per seed.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

struct NamedParam {
  std::string name;
  Matrix* matrix;
  bool is_mask;
};
std::vector<NamedParam> param_refs(ModelParams& params);

struct NamedParamView {
  std::string name;
  const Matrix* matrix;
  bool is_mask;
};
std::vector<NamedParamView> param_refs(const ModelParams& params);

// ---- Tape-side forward (training / gradient checking) ----

/// Leaves registered on a tape for one step, mirroring ModelParams.
struct ModelGraph {
  const ModelConfig* config = nullptr;
  std::vector<Var> enc_w, enc_b;
  Var w_mu, b_mu, w_lv, b_lv;
  Var mask_logits;
  Var f_w, f_b, g_w, g_b;
  std::vector<NamedLeaf> leaves;  // same order as param_refs
};

ModelGraph register_params(Tape& tape, ModelParams& params);

struct EncodeResult {
  Var z;
  Var mu;
  Var logvar;
  bool has_ib = false;  // false in probe mode: nothing to bottleneck
};

/// stochastic=true draws eps once and pins it as a constant, so the step's
/// graph is a deterministic function of the parameters.
EncodeResult encode(Tape& tape, const ModelGraph& graph, Var x, bool stochastic,
                    RandomStream* rng);

struct DisentangleResult {
  Var z_star;
  Var z_prime;
  Var mask_row;  // 1 x k mask values actually applied
};

DisentangleResult disentangle(Tape& tape, Var z, Var mask_logits, MaskKind kind);

/// feat * W + b.
Var affine(Tape& tape, Var feat, Var w, Var b);

// ---- Plain inference (no tape, deterministic encoding) ----

Matrix encode_mean(const ModelParams& params, const Matrix& x);
Matrix mask_values(const ModelParams& params, MaskKind kind);  // 1 x k
Matrix apply_mask(const ModelParams& params, const Matrix& z, MaskKind kind);  // z*
Matrix label_probs(const ModelParams& params, const Matrix& z_star);
Matrix domain_probs(const ModelParams& params, const Matrix& z_prime);
std::vector<int> predict(const ModelParams& params, const Matrix& x, MaskKind infer_mode);

// ---- Checkpoints ----

struct Checkpoint {
  ModelParams raw;
  std::optional<ModelParams> sma;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace insure::model
