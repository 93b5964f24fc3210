// SPDX-License-Identifier: Apache-2.0
#include "insure/losses.hpp"

#include <cmath>

namespace insure::losses {

Matrix one_hot(const std::vector<int>& labels, int n_values) {
  Matrix out = Matrix::Zero(static_cast<Index>(labels.size()), n_values);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_values)
      throw ContractError("label " + std::to_string(labels[i]) + " out of range [0, " +
                          std::to_string(n_values) + ")");
    out(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return out;
}

Var cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels) {
  const Index batch = tape.value(logits).rows();
  if (batch != static_cast<Index>(labels.size()))
    throw ShapeError("cross_entropy: " + std::to_string(batch) + " logit rows vs " +
                     std::to_string(labels.size()) + " labels");
  Var targets = tape.constant(one_hot(labels, static_cast<int>(tape.value(logits).cols())));
  Var picked = mul(targets, log_softmax_rows(logits));
  return scale(sum(picked), -1.0 / static_cast<Scalar>(batch));
}

Var gaussian_kl_node(Tape& tape, Var mu, Var logvar) {
  const Index batch = tape.value(mu).rows();
  const Index k = tape.value(mu).cols();
  // 0.5 * sum(mu^2 + exp(logvar) - logvar - 1), averaged over the batch.
  Var inner = add(add(square(mu), exp(logvar)),
                  add(scale(logvar, -1.0), tape.constant(Matrix::Constant(batch, k, -1.0))));
  return scale(sum(inner), 0.5 / static_cast<Scalar>(batch));
}

Var kl_divergence_node(Tape& tape, Var teacher_logits, Var student_logits) {
  const Matrix& t = tape.value(teacher_logits);
  const Matrix& s = tape.value(student_logits);
  if (t.rows() != s.rows() || t.cols() != s.cols())
    throw ShapeError("kl_divergence: teacher " + std::to_string(t.rows()) + "x" +
                     std::to_string(t.cols()) + " vs student " + std::to_string(s.rows()) + "x" +
                     std::to_string(s.cols()));
  const Index batch = t.rows();
  Var log_p = stop_gradient(log_softmax_rows(teacher_logits));
  Var p = exp(log_p);
  Var log_q = log_softmax_rows(student_logits);
  Var kl = sum(mul(p, sub(log_p, log_q)));
  return scale(kl, 1.0 / static_cast<Scalar>(batch));
}

Var msr_node(Tape& tape, Var mask_logits) {
  const Index k = tape.value(mask_logits).cols();
  return sum(sub(tape.constant(Matrix::Ones(1, k)), sigmoid(mask_logits)));
}

namespace {

Matrix permutation_matrix(const std::vector<std::size_t>& shuffle) {
  // Row a holds a 1 at the cyclic successor of a in the shuffled order.
  const std::size_t batch = shuffle.size();
  Matrix perm = Matrix::Zero(static_cast<Index>(batch), static_cast<Index>(batch));
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t a = shuffle[i];
    const std::size_t b = shuffle[(i + 1) % batch];
    perm(static_cast<Index>(a), static_cast<Index>(b)) = 1.0;
  }
  return perm;
}

}  // namespace

PurificationResult paired_purification(Tape& tape, Var w, Var b, Var keep, Var inject,
                                       const std::vector<std::size_t>& shuffle) {
  const Index batch = tape.value(keep).rows();
  if (batch < 2) return {tape.constant(Matrix::Zero(1, 1)), true};
  if (static_cast<Index>(shuffle.size()) != batch)
    throw ContractError("purification shuffle size does not match batch");

  Var perm = tape.constant(permutation_matrix(shuffle));
  Var ref = softmax_rows(model::affine(tape, keep, w, b));
  // Successor partner and predecessor partner cover both orders of each pair.
  Var mixed_succ = softmax_rows(model::affine(tape, add(keep, matmul(perm, inject)), w, b));
  Var pred = tape.constant(permutation_matrix(shuffle).transpose());
  Var mixed_pred = softmax_rows(model::affine(tape, add(keep, matmul(pred, inject)), w, b));
  Var loss = add(mean(square(sub(ref, mixed_succ))), mean(square(sub(ref, mixed_pred))));
  return {loss, false};
}

TotalLoss total_loss(Tape& tape, const TotalLossInputs& in) {
  if (in.graph == nullptr || in.labels == nullptr)
    throw ContractError("total_loss: missing model graph or labels");
  const model::ModelGraph& g = *in.graph;
  const bool multi = in.mode == TrainMode::kMultiDG;
  if (multi && in.domains == nullptr) throw ContractError("total_loss: missing domain labels");

  LossBreakdown out;
  out.alpha_t = in.alpha_t;
  out.beta_t = in.beta_t;

  Var f_star_logits = model::affine(tape, in.split.z_star, g.f_w, g.f_b);
  Var dis = cross_entropy(tape, f_star_logits, *in.labels);

  Var g_prime_logits;
  if (multi) {
    g_prime_logits = model::affine(tape, in.split.z_prime, g.g_w, g.g_b);
    dis = add(dis, cross_entropy(tape, g_prime_logits, *in.domains));
    if (in.encoded.has_ib && in.weights.eps_ib > 0.0) {
      Var ib = scale(gaussian_kl_node(tape, in.encoded.mu, in.encoded.logvar), in.weights.eps_ib);
      out.ib = tape.scalar_value(ib);
      dis = add(dis, ib);
    }
  }
  out.dis = tape.scalar_value(dis);
  Var total = dis;

  if (in.toggles.it) {
    Var f_full_logits = model::affine(tape, in.encoded.z, g.f_w, g.f_b);
    Var it_l = kl_divergence_node(tape, f_full_logits, f_star_logits);
    out.it_l = tape.scalar_value(it_l);
    Var it_sum = it_l;
    if (multi) {
      Var g_full_logits = model::affine(tape, in.encoded.z, g.g_w, g.g_b);
      Var it_d = kl_divergence_node(tape, g_full_logits, g_prime_logits);
      out.it_d = tape.scalar_value(it_d);
      it_sum = add(it_l, it_d);
    }
    if (in.alpha_t != 0.0) total = add(total, scale(it_sum, in.alpha_t));
  }

  if (in.toggles.puri) {
    if (in.pair_shuffle == nullptr) throw ContractError("total_loss: purification needs a shuffle");
    PurificationResult puri =
        in.puri_side == PurificationSide::kLabel
            ? paired_purification(tape, g.f_w, g.f_b, in.split.z_star, in.split.z_prime,
                                  *in.pair_shuffle)
            : paired_purification(tape, g.g_w, g.g_b, in.split.z_prime, in.split.z_star,
                                  *in.pair_shuffle);
    out.puri = tape.scalar_value(puri.node);
    out.puri_degenerate = puri.degenerate;
    if (in.beta_t != 0.0 && !puri.degenerate) total = add(total, scale(puri.node, in.beta_t));
  }

  if (in.toggles.msr) {
    Var msr = msr_node(tape, g.mask_logits);
    out.msr = tape.scalar_value(msr);
    if (in.weights.gamma != 0.0) total = add(total, scale(msr, in.weights.gamma));
  }

  out.total = tape.scalar_value(total);
  auto check = [](Scalar v, const char* term) {
    if (!std::isfinite(v)) throw NumericError(std::string("loss term '") + term + "' is non-finite");
  };
  check(out.dis, "dis");
  check(out.it_l, "it_l");
  check(out.it_d, "it_d");
  check(out.puri, "puri");
  check(out.msr, "msr");
  check(out.ib, "ib");
  check(out.total, "total");
  return {total, out};
}

Scalar gaussian_kl(const Matrix& mu, const Matrix& sigma) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols())
    throw ShapeError("gaussian_kl: mu and sigma shapes differ");
  if ((sigma.array() <= 0.0).any()) throw NumericError("gaussian_kl: sigma must be positive");
  const auto var = sigma.array().square();
  const Scalar per_batch =
      0.5 * (mu.array().square() + var - var.log() - 1.0).rowwise().sum().sum();
  return per_batch / static_cast<Scalar>(mu.rows());
}

Scalar kl_divergence_value(const Matrix& teacher_logits, const Matrix& student_logits) {
  const Matrix log_p = log_softmax_rows_values(teacher_logits);
  const Matrix log_q = log_softmax_rows_values(student_logits);
  const Matrix p = log_p.array().exp().matrix();
  return (p.array() * (log_p - log_q).array()).sum() / static_cast<Scalar>(teacher_logits.rows());
}

Scalar msr_value(const Matrix& mask_logits) {
  return (1.0 - sigmoid_values(mask_logits).array()).sum();
}

}  // namespace insure::losses
