#pragma once

#include <string>

#include "auditkit/errors.hpp"

namespace audit {

enum class CIMethod { wilson, wald };

std::string ci_method_name(CIMethod m);

// Inverse of ci_method_name; anything but "wilson" or "wald" is rejected.
CIMethod parse_ci_method(const std::string& name);

// Binomial proportion with a two-sided confidence interval. `point` is the
// observed fraction successes/n; the interval center depends on the method
// (Wilson's center is pulled toward 1/2, Wald's is `point` itself).
struct ProportionCI {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    CIMethod method = CIMethod::wilson;
    double confidence = 0.95;
    int n = 0;
    int successes = 0;

    void check_invariants() const;
};

// Two-sided standard normal quantile for the given confidence level,
// e.g. 0.95 -> 1.959964.
double two_sided_z(double confidence);

// Inverse of the standard normal CDF. Rational approximation with a Halley
// refinement step; absolute error below 1.2e-8 across (0, 1).
double normal_quantile(double p);

ProportionCI wilson_interval(int successes, int n, double confidence = 0.95);
ProportionCI wald_interval(int successes, int n, double confidence = 0.95);

double accuracy(int correct, int total);

}  // namespace audit
