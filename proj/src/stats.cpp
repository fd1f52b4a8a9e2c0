#include "auditkit/stats.hpp"

#include <algorithm>
#include <cmath>

namespace audit {

std::string ci_method_name(CIMethod m) {
    return m == CIMethod::wilson ? "wilson" : "wald";
}

CIMethod parse_ci_method(const std::string& name) {
    if (name == "wilson") return CIMethod::wilson;
    if (name == "wald") return CIMethod::wald;
    throw validation_error("unknown CI method '" + name + "', expected wilson or wald");
}

void ProportionCI::check_invariants() const {
    if (n < 1) throw validation_error("proportion CI: n must be >= 1, got " + std::to_string(n));
    if (successes < 0 || successes > n)
        throw validation_error("proportion CI: successes " + std::to_string(successes) +
                               " outside [0," + std::to_string(n) + "]");
    if (!(0.0 <= lower && lower <= upper && upper <= 1.0))
        throw validation_error("proportion CI: bounds [" + std::to_string(lower) + "," +
                               std::to_string(upper) + "] are not an ordered subset of [0,1]");
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw validation_error("normal_quantile: p must lie in (0,1), got " + std::to_string(p));
    // Acklam's rational approximation in three regions.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // One Halley step against erfc brings the error near machine precision.
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

double two_sided_z(double confidence) {
    if (!(confidence > 0.0 && confidence < 1.0))
        throw validation_error("confidence must lie in (0,1), got " + std::to_string(confidence));
    if (confidence == 0.95) return 1.959964;
    return normal_quantile(0.5 + confidence / 2.0);
}

namespace {

void check_counts(int successes, int n) {
    if (n < 1) throw validation_error("interval: n must be >= 1, got " + std::to_string(n));
    if (successes < 0 || successes > n)
        throw validation_error("interval: successes " + std::to_string(successes) +
                               " outside [0," + std::to_string(n) + "]");
}

}  // namespace

ProportionCI wilson_interval(int successes, int n, double confidence) {
    check_counts(successes, n);
    const double z = two_sided_z(confidence);
    const double phat = static_cast<double>(successes) / n;
    const double z2n = z * z / n;
    const double center = (phat + z2n / 2.0) / (1.0 + z2n);
    const double half =
        (z / (1.0 + z2n)) * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * static_cast<double>(n) * n));
    ProportionCI ci;
    ci.point = phat;
    // The boundary cases touch 0 and 1 exactly; make that true in floats too.
    ci.lower = successes == 0 ? 0.0 : std::max(0.0, center - half);
    ci.upper = successes == n ? 1.0 : std::min(1.0, center + half);
    ci.method = CIMethod::wilson;
    ci.confidence = confidence;
    ci.n = n;
    ci.successes = successes;
    ci.check_invariants();
    return ci;
}

ProportionCI wald_interval(int successes, int n, double confidence) {
    check_counts(successes, n);
    const double z = two_sided_z(confidence);
    const double phat = static_cast<double>(successes) / n;
    const double half = z * std::sqrt(phat * (1.0 - phat) / n);
    ProportionCI ci;
    ci.point = phat;
    ci.lower = std::max(0.0, phat - half);
    ci.upper = std::min(1.0, phat + half);
    ci.method = CIMethod::wald;
    ci.confidence = confidence;
    ci.n = n;
    ci.successes = successes;
    ci.check_invariants();
    return ci;
}

double accuracy(int correct, int total) {
    if (total < 1) throw validation_error("accuracy: total must be >= 1, got " + std::to_string(total));
    if (correct < 0 || correct > total)
        throw validation_error("accuracy: correct " + std::to_string(correct) + " outside [0," +
                               std::to_string(total) + "]");
    return static_cast<double>(correct) / total;
}

}  // namespace audit
