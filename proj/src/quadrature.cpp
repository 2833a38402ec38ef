#include "mecor/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "mecor/error.hpp"

namespace mecor {

QuadratureRule gauss_hermite(int k) {
    if (k < 2) throw ConfigError("quadrature needs at least 2 points");
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) {
        jac(i, i - 1) = std::sqrt(i / 2.0);
        jac(i - 1, i) = jac(i, i - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(k));
    rule.weights.resize(static_cast<std::size_t>(k));
    const double sqrt_pi = std::sqrt(std::numbers::pi);
    for (int i = 0; i < k; ++i) {
        rule.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()[i];
        const double v = es.eigenvectors()(0, i);
        rule.weights[static_cast<std::size_t>(i)] = sqrt_pi * v * v;
    }
    // Symmetrize against rounding in the eigensolver.
    for (int i = 0; i < k / 2; ++i) {
        const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(k - 1 - i);
        const double x = 0.5 * (rule.nodes[b] - rule.nodes[a]);
        const double w = 0.5 * (rule.weights[a] + rule.weights[b]);
        rule.nodes[a] = -x;
        rule.nodes[b] = x;
        rule.weights[a] = rule.weights[b] = w;
    }
    if (k % 2 == 1) rule.nodes[static_cast<std::size_t>(k / 2)] = 0.0;
    return rule;
}

}  // namespace mecor
