#pragma once

#include <string>
#include <vector>

#include "dm/model.hpp"

namespace dm::gradsuite {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

struct SuiteResult {
    std::vector<CheckResult> checks;
    double worst = 0.0;
    bool passed(double rel_tol) const { return worst < rel_tol; }
};

// The configuration the finite-difference suite runs at: d=8, SR=64,
// dropout disabled (gradient checks require a deterministic forward).
model::ModelConfig tiny_config();

// 64-bit central-difference checks over every block: stem, D-Inception with
// both attentions, downsampling, adapter, projection head, loss, and the
// full two-cut model.
SuiteResult run_suite();

} // namespace dm::gradsuite
