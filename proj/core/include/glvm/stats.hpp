#pragma once

#include <vector>

namespace glvm {

/// Standard normal CDF.
double normal_cdf(double x);

/// Standard normal quantile (inverse CDF) for p in (0, 1).
double normal_quantile(double p);

/// Two-sided p-value for a standard normal statistic, 2 (1 - Phi(|z|)).
double normal_two_sided_p(double z);

struct KsResult {
    double statistic = 0.0;  // sup |F_n - Phi|
    double p_value = 1.0;    // asymptotic, with finite-sample correction
};

/// One-sample Kolmogorov-Smirnov test of the sample against N(0, 1).
KsResult ks_test_standard_normal(std::vector<double> sample);

double median(std::vector<double> values);

}  // namespace glvm
