// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace raum::experiments {

/// One finite-difference check: returns the max relative error for a seed.
struct GradCheckCase {
    std::string name;
    std::function<double(std::uint64_t seed)> max_error;
};

/// Every differentiable op plus the composed backbone + attention + head
/// model on a 16x16 image with two blocks.
std::vector<GradCheckCase> standard_gradcheck_cases();

/// y = x^2 recorded with the derivative 3x. Used to show the suite catches a
/// wrong backward rule.
GradCheckCase faulty_square_case();

struct GradCheckReport {
    std::string name;
    double max_error = 0.0; // worst over seeds
    bool passed = false;
};

/// Runs each case for seeds 1..seeds and compares the worst error with `tolerance`.
std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, std::size_t seeds,
                                           double tolerance);

} // namespace raum::experiments
