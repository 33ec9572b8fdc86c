#pragma once

#include <vector>

namespace nmaipw {

/// 97.5% standard-normal quantile used for Wald intervals.
inline constexpr double kZ975 = 1.959963984540054;

double normal_cdf(double x);

double logistic_cdf(double x);

/// P(T <= t) for Student's t with df degrees of freedom.
double student_t_cdf(double t, double df);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Type-7 (linear interpolation) quantile of an unsorted sample.
double quantile(std::vector<double> values, double p);

double mean(const std::vector<double>& values);

/// Sample standard deviation (n-1 denominator).
double sample_sd(const std::vector<double>& values);

/// Standard deviation with 1/n denominator (bootstrap convention here).
double population_sd(const std::vector<double>& values);

}  // namespace nmaipw
