// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "insure/model.hpp"
#include "insure/rng.hpp"
#include "insure/tape.hpp"

namespace insure::losses {

struct LossWeights {
  Scalar alpha = 9.0;  // sufficiency (KL) terms; 10 in single-source mode
  Scalar beta = 1.0;   // paired purification
  Scalar gamma = 1.0;  // mask sparsity
  Scalar eps_ib = 1e-7;
};

enum class TrainMode { kMultiDG, kSingleDG };

/// Which paired purification is active: the label-side loss keeps
/// domain-specific class signal inside z*, the domain-side mirror pushes it
/// out (used by the region-III experiment).
enum class PurificationSide { kLabel, kDomain };

struct LossToggles {
  bool it = true;
  bool puri = true;
  bool msr = true;
};

struct LossBreakdown {
  Scalar dis = 0, it_l = 0, it_d = 0, puri = 0, msr = 0, ib = 0, total = 0;
  Scalar alpha_t = 0, beta_t = 0;
  bool puri_degenerate = false;  // batch of one: purification returned 0
};

// ---- graph builders ----

/// Batch-mean cross entropy of softmax(logits) against integer labels.
Var cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels);

/// Batch-mean D_KL[N(mu, diag sigma^2) || N(0, I)], sigma = exp(logvar/2).
Var gaussian_kl_node(Tape& tape, Var mu, Var logvar);

/// Batch-mean D_KL[softmax(teacher) || softmax(student)]; the teacher
/// distribution is gradient-detached.
Var kl_divergence_node(Tape& tape, Var teacher_logits, Var student_logits);

/// sum_i (1 - sigma(m_i)); minimizing turns mask elements off.
Var msr_node(Tape& tape, Var mask_logits);

struct PurificationResult {
  Var node;
  bool degenerate = false;
};

/// Cyclic paired purification: after shuffling, each sample is paired with
/// its successor; predictions from `keep` must not move when the partner's
/// `inject` component is added. MSE acts on softmax probabilities.
PurificationResult paired_purification(Tape& tape, Var w, Var b, Var keep, Var inject,
                                       const std::vector<std::size_t>& shuffle);

struct TotalLossInputs {
  const model::ModelGraph* graph = nullptr;
  model::EncodeResult encoded;
  model::DisentangleResult split;
  const std::vector<int>* labels = nullptr;
  const std::vector<int>* domains = nullptr;
  LossWeights weights;
  TrainMode mode = TrainMode::kMultiDG;
  PurificationSide puri_side = PurificationSide::kLabel;
  LossToggles toggles;
  Scalar alpha_t = 0;  // scheduled weights at this step
  Scalar beta_t = 0;
  const std::vector<std::size_t>* pair_shuffle = nullptr;  // needed when puri is on
};

struct TotalLoss {
  Var node;
  LossBreakdown values;
};

/// total = L_dis + alpha(t) (L_ITl + L_ITd) + beta(t) L_puri + gamma L_msr.
/// Single-source mode drops the domain CE, L_ITd and the IB term.
TotalLoss total_loss(Tape& tape, const TotalLossInputs& in);

// ---- plain (tape-free) evaluation ----

/// Closed-form KL to the standard normal; sigma must be positive.
Scalar gaussian_kl(const Matrix& mu, const Matrix& sigma);

/// Batch-mean KL between rowwise softmax distributions of two logit blocks.
Scalar kl_divergence_value(const Matrix& teacher_logits, const Matrix& student_logits);

Scalar msr_value(const Matrix& mask_logits);

Matrix one_hot(const std::vector<int>& labels, int n_values);

}  // namespace insure::losses
