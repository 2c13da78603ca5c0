#pragma once

#include "lmswitch/common.hpp"

namespace lmswitch {

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// rel_cutoff * sigma_max are treated as zero.
struct PseudoInverse {
    Matrix value;
    double condition_number = 0.0;  // sigma_max / smallest retained sigma
    Eigen::Index rank = 0;
};

PseudoInverse pseudo_inverse(const Matrix& a, double rel_cutoff = 1e-10);

/// Largest singular value.
double spectral_norm(const Matrix& a);

/// Numerical rank with the same relative cutoff convention as pseudo_inverse.
Eigen::Index numerical_rank(const Matrix& a, double rel_cutoff = 1e-10);

/// ||a - b||_F / max(||a||_F, ||b||_F); zero when both are zero.
double relative_residual(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& a);

/// Softmax of a logit vector, shifted by the maximum for stability.
Vector softmax(const Vector& logits);

/// Draws an r x c matrix with i.i.d. N(0, variance) entries.
template <class Rng>
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng);

}  // namespace lmswitch

#include <random>

namespace lmswitch {

template <class Rng>
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(variance));
    Matrix out(rows, cols);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
    return out;
}

}  // namespace lmswitch
