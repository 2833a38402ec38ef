#pragma once

#include <vector>

namespace mecor {

// Gauss-Hermite rule for integrals against exp(-t^2).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    int size() const { return static_cast<int>(nodes.size()); }
};

// K-point rule by the Golub-Welsch eigenvalue method; K >= 2.
QuadratureRule gauss_hermite(int k);

}  // namespace mecor
