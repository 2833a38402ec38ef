#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mecor::stats {

double normal_quantile(double p);
double normal_cdf(double x);
double student_t_quantile(double p, double df);
double chi_squared_quantile(double p, double df);

double mean(std::span<const double> v);
// Sample variance (n - 1 denominator).
double variance(std::span<const double> v);
double quantile(std::vector<double> v, double p);  // type-7, as R's default

// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and `cdf`.
double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf);
double ks_distance_two_sample(std::vector<double> a, std::vector<double> b);

double log_sum_exp(std::span<const double> v);

inline double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
// log(1 + exp(x)) without overflow.
double log1p_exp(double x);

// Symmetric inverse via LDLT; throws SingularDesignError if not invertible.
Eigen::MatrixXd sym_inverse(const Eigen::MatrixXd& a);

}  // namespace mecor::stats

namespace mecor {

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
// concurrency). Callers write results into slot i, so output order never
// depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  unsigned threads = 0);

}  // namespace mecor
