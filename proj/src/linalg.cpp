#include "lmswitch/linalg.hpp"

#include <cmath>

namespace lmswitch {

PseudoInverse pseudo_inverse(const Matrix& a, double rel_cutoff) {
    PseudoInverse out;
    if (a.size() == 0) {
        out.value = Matrix::Zero(a.cols(), a.rows());
        return out;
    }
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double smax = s(0);
    Vector inv = Vector::Zero(s.size());
    double smallest = smax;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > rel_cutoff * smax && s(i) > 0.0) {
            inv(i) = 1.0 / s(i);
            smallest = s(i);
            ++out.rank;
        }
    }
    out.value = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    out.condition_number = out.rank > 0 ? smax / smallest : std::numeric_limits<double>::infinity();
    return out;
}

double spectral_norm(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(a);
    return svd.singularValues()(0);
}

Eigen::Index numerical_rank(const Matrix& a, double rel_cutoff) {
    if (a.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(a);
    const Vector& s = svd.singularValues();
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > rel_cutoff * s(0) && s(i) > 0.0) ++r;
    return r;
}

double relative_residual(const Matrix& a, const Matrix& b) {
    const double scale = std::max(a.norm(), b.norm());
    if (scale == 0.0) return 0.0;
    return (a - b).norm() / scale;
}

bool all_finite(const Matrix& a) {
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            if (!std::isfinite(a(i, j))) return false;
    return true;
}

Vector softmax(const Vector& logits) {
    const double mx = logits.maxCoeff();
    Vector p = (logits.array() - mx).exp().matrix();
    return p / p.sum();
}

}  // namespace lmswitch
