// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "insure/tape.hpp"

namespace insure {

struct GradCheckReport {
  bool passed = false;
  Scalar max_rel_error = 0.0;
  std::string worst_leaf;      // name of the leaf holding the worst coordinate
  Index worst_row = -1;
  Index worst_col = -1;
  Scalar worst_analytic = 0.0;
  Scalar worst_numeric = 0.0;
  long coordinates_checked = 0;
  std::string failure;         // non-empty when a perturbation went non-finite

  std::string summary() const;
};

struct NamedLeaf {
  std::string name;
  Var var;
};

/// Compares the tape gradient of `loss` against central finite differences
/// over every coordinate of the given leaves. The tape is replayed with
/// constants and stop-gradient nodes pinned, so the differentiated function is
/// exactly the one backward() sees. Relative error uses a unit floor:
/// |a - fd| / max(1, |a|, |fd|).
GradCheckReport check_gradient(Tape& tape, Var loss, const std::vector<NamedLeaf>& leaves,
                               Scalar tol = 1e-4, Scalar step = 1e-5);

}  // namespace insure
