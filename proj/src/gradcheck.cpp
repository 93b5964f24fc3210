// SPDX-License-Identifier: Apache-2.0
#include "insure/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace insure {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  if (!failure.empty()) {
    os << "FAIL: " << failure;
    return os.str();
  }
  os << (passed ? "pass" : "FAIL") << ": max relative error " << max_rel_error << " over "
     << coordinates_checked << " coordinates";
  if (!worst_leaf.empty())
    os << "; worst at " << worst_leaf << "[" << worst_row << "," << worst_col << "]"
       << " analytic=" << worst_analytic << " numeric=" << worst_numeric;
  return os.str();
}

GradCheckReport check_gradient(Tape& tape, Var loss, const std::vector<NamedLeaf>& leaves,
                               Scalar tol, Scalar step) {
  if (step <= 0.0) throw ContractError("finite-difference step must be positive");
  GradCheckReport report;

  tape.backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(leaves.size());
  for (const NamedLeaf& leaf : leaves) analytic.push_back(tape.grad(leaf.var));

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const NamedLeaf& leaf = leaves[li];
    Matrix& theta = tape.mutable_value(leaf.var);
    for (Index r = 0; r < theta.rows(); ++r) {
      for (Index c = 0; c < theta.cols(); ++c) {
        const Scalar saved = theta(r, c);
        Scalar f_plus = 0.0, f_minus = 0.0;
        try {
          theta(r, c) = saved + step;
          tape.recompute_forward();
          f_plus = tape.scalar_value(loss);
          theta(r, c) = saved - step;
          tape.recompute_forward();
          f_minus = tape.scalar_value(loss);
        } catch (const NumericError& e) {
          theta(r, c) = saved;
          tape.recompute_forward();
          report.failure = "non-finite perturbation at " + leaf.name + "[" + std::to_string(r) +
                           "," + std::to_string(c) + "]: " + e.what();
          report.passed = false;
          return report;
        }
        theta(r, c) = saved;

        const Scalar fd = (f_plus - f_minus) / (2.0 * step);
        const Scalar an = analytic[li](r, c);
        const Scalar denom = std::max({Scalar(1), std::abs(an), std::abs(fd)});
        const Scalar rel = std::abs(an - fd) / denom;
        ++report.coordinates_checked;
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_leaf = leaf.name;
          report.worst_row = r;
          report.worst_col = c;
          report.worst_analytic = an;
          report.worst_numeric = fd;
        }
      }
    }
  }

  tape.recompute_forward();  // leave the tape at the base point
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace insure
