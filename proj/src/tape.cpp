// SPDX-License-Identifier: Apache-2.0
#include "insure/tape.hpp"

#include <cmath>

namespace insure {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands belong to different tapes");
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log-softmax";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSquare: return "square";
    case OpKind::kAddRowVec: return "broadcast-add-bias";
    case OpKind::kConcatCols: return "concat";
    case OpKind::kScale: return "scale";
    case OpKind::kSteMask: return "ste-mask";
    case OpKind::kStopGradient: return "stop-gradient";
  }
  return "?";
}

Matrix sigmoid_values(const Matrix& x) {
  // Branch on sign so exp never overflows.
  return x.unaryExpr([](Scalar v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix softmax_rows_values(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

Matrix log_softmax_rows_values(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    const Scalar lse = std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = (x.row(i).array() - m - lse).matrix();
  }
  return out;
}

Matrix hard_mask_values(const Matrix& logits) {
  // Eq. convention: element on (1) while sigma(logit) < 0.5, off at the tie.
  return logits.unaryExpr([](Scalar v) { return v < 0.0 ? 1.0 : 0.0; });
}

Scalar Tape::scalar_value(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1)
    throw ContractError(std::string("expected a scalar node, got ") + shape_str(m));
  return m(0, 0);
}

Var Tape::leaf(Matrix value) { return record(OpKind::kLeaf, -1, -1, std::move(value)); }

Var Tape::constant(Matrix value) { return record(OpKind::kConstant, -1, -1, std::move(value)); }

Var Tape::record(OpKind kind, int a, int b, Matrix value, Scalar aux) {
  if (!value.allFinite())
    throw NumericError(std::string(op_name(kind)) + " produced non-finite values");
  Node n;
  n.kind = kind;
  n.a = a;
  n.b = b;
  n.aux = aux;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix Tape::eval_node(const Node& n) const {
  const Matrix& va = n.a >= 0 ? node(n.a).value : n.value;
  switch (n.kind) {
    case OpKind::kMatMul: return va * node(n.b).value;
    case OpKind::kAdd: return va + node(n.b).value;
    case OpKind::kMul: return va.cwiseProduct(node(n.b).value);
    case OpKind::kSigmoid: return sigmoid_values(va);
    case OpKind::kSoftmax: return softmax_rows_values(va);
    case OpKind::kLogSoftmax: return log_softmax_rows_values(va);
    case OpKind::kLog:
      if ((va.array() <= 0.0).any()) throw NumericError("log of non-positive value");
      return va.array().log().matrix();
    case OpKind::kExp: return va.array().exp().matrix();
    case OpKind::kSum: return Matrix::Constant(1, 1, va.sum());
    case OpKind::kMean: return Matrix::Constant(1, 1, va.mean());
    case OpKind::kSquare: return va.cwiseProduct(va);
    case OpKind::kAddRowVec: {
      Matrix out = va;
      out.rowwise() += node(n.b).value.row(0);
      return out;
    }
    case OpKind::kConcatCols: {
      const Matrix& vb = node(n.b).value;
      Matrix out(va.rows(), va.cols() + vb.cols());
      out << va, vb;
      return out;
    }
    case OpKind::kScale: return n.aux * va;
    case OpKind::kSteMask: return hard_mask_values(va);
    case OpKind::kConstant:
    case OpKind::kLeaf:
    case OpKind::kStopGradient:
      return n.value;  // pinned
  }
  throw ContractError("unknown op kind");
}

void Tape::recompute_forward() {
  for (Node& n : nodes_) {
    switch (n.kind) {
      case OpKind::kConstant:
      case OpKind::kLeaf:
      case OpKind::kStopGradient:
        break;  // values pinned
      default: {
        Matrix v = eval_node(n);
        if (!v.allFinite())
          throw NumericError(std::string(op_name(n.kind)) + " produced non-finite values");
        n.value = std::move(v);
      }
    }
  }
}

void Tape::accumulate_parents(int i) {
  Node& n = node_mut(i);
  const Matrix& g = n.grad;
  switch (n.kind) {
    case OpKind::kConstant:
    case OpKind::kLeaf:
    case OpKind::kStopGradient:
      return;
    case OpKind::kMatMul: {
      const Matrix& va = node(n.a).value;
      const Matrix& vb = node(n.b).value;
      node_mut(n.a).grad.noalias() += g * vb.transpose();
      node_mut(n.b).grad.noalias() += va.transpose() * g;
      return;
    }
    case OpKind::kAdd:
      node_mut(n.a).grad += g;
      node_mut(n.b).grad += g;
      return;
    case OpKind::kMul:
      node_mut(n.a).grad += g.cwiseProduct(node(n.b).value);
      node_mut(n.b).grad += g.cwiseProduct(node(n.a).value);
      return;
    case OpKind::kSigmoid: {
      const Matrix& s = n.value;
      node_mut(n.a).grad.array() += g.array() * s.array() * (1.0 - s.array());
      return;
    }
    case OpKind::kSoftmax: {
      // dx = p .* (g - rowsum(g .* p))
      const Matrix& p = n.value;
      const Eigen::ArrayXd rowdot = (g.array() * p.array()).rowwise().sum();
      node_mut(n.a).grad.array() += p.array() * (g.array().colwise() - rowdot);
      return;
    }
    case OpKind::kLogSoftmax: {
      // dx = g - softmax .* rowsum(g)
      const Matrix p = n.value.array().exp().matrix();
      const Vector rowsum = g.rowwise().sum();
      node_mut(n.a).grad += g - (p.array().colwise() * rowsum.array()).matrix();
      return;
    }
    case OpKind::kLog:
      node_mut(n.a).grad.array() += g.array() / node(n.a).value.array();
      return;
    case OpKind::kExp:
      node_mut(n.a).grad.array() += g.array() * n.value.array();
      return;
    case OpKind::kSum:
      node_mut(n.a).grad.array() += g(0, 0);
      return;
    case OpKind::kMean:
      node_mut(n.a).grad.array() += g(0, 0) / static_cast<Scalar>(node(n.a).value.size());
      return;
    case OpKind::kSquare:
      node_mut(n.a).grad.array() += 2.0 * g.array() * node(n.a).value.array();
      return;
    case OpKind::kAddRowVec:
      node_mut(n.a).grad += g;
      node_mut(n.b).grad.row(0) += g.colwise().sum();
      return;
    case OpKind::kConcatCols: {
      const Index ca = node(n.a).value.cols();
      const Index cb = node(n.b).value.cols();
      node_mut(n.a).grad += g.leftCols(ca);
      node_mut(n.b).grad += g.rightCols(cb);
      return;
    }
    case OpKind::kScale:
      node_mut(n.a).grad += n.aux * g;
      return;
    case OpKind::kSteMask: {
      // Straight-through rule: d(mask)/d(logit) := d(1 - sigma)/d(logit).
      const Matrix s = sigmoid_values(node(n.a).value);
      node_mut(n.a).grad.array() += g.array() * (-(s.array() * (1.0 - s.array())));
      return;
    }
  }
}

void Tape::backward(Var output) {
  if (output.tape != this) throw ContractError("output does not belong to this tape");
  const Matrix& out = value(output);
  if (out.rows() != 1 || out.cols() != 1)
    throw ContractError(std::string("backward needs a scalar output, got ") + shape_str(out));
  for (Node& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  node_mut(output.idx).grad(0, 0) = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) accumulate_parents(i);
}

namespace {

void check_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " do not conform");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.cols() != vb.rows())
    throw ShapeError(std::string("matmul: shapes ") + shape_str(va) + " and " + shape_str(vb) +
                     " do not conform");
  return t.record(OpKind::kMatMul, a.idx, b.idx, va * vb);
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  check_same_shape("add", t.value(a), t.value(b));
  return t.record(OpKind::kAdd, a.idx, b.idx, t.value(a) + t.value(b));
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  check_same_shape("elementwise-mul", t.value(a), t.value(b));
  return t.record(OpKind::kMul, a.idx, b.idx, t.value(a).cwiseProduct(t.value(b)));
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kSigmoid, a.idx, -1, sigmoid_values(t.value(a)));
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kSoftmax, a.idx, -1, softmax_rows_values(t.value(a)));
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kLogSoftmax, a.idx, -1, log_softmax_rows_values(t.value(a)));
}

Var log(Var a) {
  Tape& t = *a.tape;
  if ((t.value(a).array() <= 0.0).any()) throw NumericError("log of non-positive value");
  return t.record(OpKind::kLog, a.idx, -1, t.value(a).array().log().matrix());
}

Var exp(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kExp, a.idx, -1, t.value(a).array().exp().matrix());
}

Var sum(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kSum, a.idx, -1, Matrix::Constant(1, 1, t.value(a).sum()));
}

Var mean(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kMean, a.idx, -1, Matrix::Constant(1, 1, t.value(a).mean()));
}

Var square(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kSquare, a.idx, -1, t.value(a).cwiseProduct(t.value(a)));
}

Var add_rowvec(Var m, Var v) {
  require_same_tape(m, v);
  Tape& t = *m.tape;
  const Matrix& vm = t.value(m);
  const Matrix& vv = t.value(v);
  if (vv.rows() != 1 || vv.cols() != vm.cols())
    throw ShapeError(std::string("broadcast-add-bias: shapes ") + shape_str(vm) + " and " +
                     shape_str(vv) + " do not conform");
  Matrix out = vm;
  out.rowwise() += vv.row(0);
  return t.record(OpKind::kAddRowVec, m.idx, v.idx, std::move(out));
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.rows() != vb.rows())
    throw ShapeError(std::string("concat: shapes ") + shape_str(va) + " and " + shape_str(vb) +
                     " do not conform");
  Matrix out(va.rows(), va.cols() + vb.cols());
  out << va, vb;
  return t.record(OpKind::kConcatCols, a.idx, b.idx, std::move(out));
}

Var scale(Var a, Scalar c) {
  Tape& t = *a.tape;
  return t.record(OpKind::kScale, a.idx, -1, c * t.value(a), c);
}

Var ste_mask(Var logits) {
  Tape& t = *logits.tape;
  return t.record(OpKind::kSteMask, logits.idx, -1, hard_mask_values(t.value(logits)));
}

Var stop_gradient(Var a) {
  Tape& t = *a.tape;
  return t.record(OpKind::kStopGradient, a.idx, -1, t.value(a));
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

}  // namespace insure
