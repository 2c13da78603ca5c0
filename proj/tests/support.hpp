#pragma once

#include <random>

#include "lmswitch/hmm.hpp"
#include "lmswitch/linalg.hpp"

namespace testsupport {

using lmswitch::Matrix;
using lmswitch::Vector;

inline Matrix random_stochastic(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

inline lmswitch::Hmm random_hmm(Eigen::Index n, Eigen::Index m, std::mt19937_64& rng) {
    lmswitch::Hmm h;
    h.pi = random_stochastic(1, n, rng).row(0).transpose();
    h.T = random_stochastic(n, n, rng);
    h.B = random_stochastic(n, m, rng);
    return h;
}

inline Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
    Matrix g = lmswitch::gaussian_matrix(n, n, 1.0, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    return qr.householderQ() * Matrix::Identity(n, n);
}

}  // namespace testsupport
