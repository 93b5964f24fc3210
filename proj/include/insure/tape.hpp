// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "insure/common.hpp"

namespace insure {

// Reverse-mode differentiation over dense matrices. A Tape records every
// operation of a forward pass in topological order; backward() walks the
// records once in reverse. Tapes are single-writer: build, run backward,
// throw away (or replay via recompute_forward for finite differencing).

enum class OpKind {
  kConstant,      // pinned input (data, one-hot targets, sampled noise)
  kLeaf,          // trainable parameter
  kMatMul,
  kAdd,
  kMul,           // elementwise
  kSigmoid,
  kSoftmax,       // rowwise
  kLogSoftmax,    // rowwise, log-sum-exp form
  kLog,
  kExp,
  kSum,           // full reduction to 1x1
  kMean,          // full reduction to 1x1
  kSquare,
  kAddRowVec,     // broadcast-add a 1xK bias to every row
  kConcatCols,
  kScale,         // multiply by a fixed scalar
  kSteMask,       // hard threshold forward, sigmoid-surrogate backward
  kStopGradient,  // identity forward, blocks gradient; pinned during replay
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to one recorded node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);
  Var constant(Scalar value) { return constant(Matrix::Constant(1, 1, value)); }

  const Matrix& value(Var v) const { return node(v.idx).value; }
  const Matrix& grad(Var v) const { return node(v.idx).grad; }
  Scalar scalar_value(Var v) const;

  /// Accumulates d(output)/d(node) into every gradient slot. `output` must be
  /// 1x1; leaves with no path to it end up with zero gradient.
  void backward(Var output);

  /// Re-evaluates every node's value from its parents in recording order.
  /// Constants, leaves and kStopGradient nodes keep their stored values, so
  /// the replayed function is exactly the one backward() differentiates.
  void recompute_forward();

  /// Direct access for finite-difference perturbation of leaves.
  Matrix& mutable_value(Var v) { return node_mut(v.idx).value; }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind_of(Var v) const { return node(v.idx).kind; }

 private:
  struct Node {
    OpKind kind;
    int a = -1;
    int b = -1;
    Scalar aux = 0.0;  // kScale factor
    Matrix value;
    Matrix grad;
  };

  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  Node& node_mut(int i) { return nodes_[static_cast<std::size_t>(i)]; }

  Var record(OpKind kind, int a, int b, Matrix value, Scalar aux = 0.0);
  Matrix eval_node(const Node& n) const;
  void accumulate_parents(int i);

  std::vector<Node> nodes_;

  friend Var matmul(Var, Var);
  friend Var add(Var, Var);
  friend Var mul(Var, Var);
  friend Var sigmoid(Var);
  friend Var softmax_rows(Var);
  friend Var log_softmax_rows(Var);
  friend Var log(Var);
  friend Var exp(Var);
  friend Var sum(Var);
  friend Var mean(Var);
  friend Var square(Var);
  friend Var add_rowvec(Var, Var);
  friend Var concat_cols(Var, Var);
  friend Var scale(Var, Scalar);
  friend Var ste_mask(Var);
  friend Var stop_gradient(Var);
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var log(Var a);
Var exp(Var a);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var add_rowvec(Var m, Var v);
Var concat_cols(Var a, Var b);
Var scale(Var a, Scalar c);
Var ste_mask(Var logits);
Var stop_gradient(Var a);

/// a - b, composed from add and scale.
Var sub(Var a, Var b);

// Elementwise sigmoid/softmax on plain matrices; the tape ops and the
// inference path share these.
Matrix sigmoid_values(const Matrix& x);
Matrix softmax_rows_values(const Matrix& x);
Matrix log_softmax_rows_values(const Matrix& x);
Matrix hard_mask_values(const Matrix& logits);

}  // namespace insure
