#pragma once

#include <string>
#include <vector>

namespace pytf {

struct GradCheckResult {
    std::string name;
    double max_err = 0.0;
    double tol = 1e-4;
    bool pass = false;
};

// Double-precision central-difference verification of every differentiable
// op (>= 10 random seeds/shapes each) plus the block and backbone composites.
std::vector<GradCheckResult> run_grad_suite(uint64_t seed = 1234);

bool grad_suite_passed(const std::vector<GradCheckResult>& results);

}  // namespace pytf
