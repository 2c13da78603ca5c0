#pragma once

#include <cmath>
#include <limits>

#include "lmswitch/common.hpp"

namespace lmswitch {

/// Adam state for a single matrix parameter. step() performs descent; callers
/// maximizing an objective pass the negated gradient.
class Adam {
public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    Adam() = default;
    Adam(double learning_rate, Eigen::Index rows, Eigen::Index cols)
        : lr(learning_rate), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

    void step(Matrix& param, const Matrix& grad) {
        ++t_;
        m_ = beta1 * m_ + (1.0 - beta1) * grad;
        v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (Eigen::Index j = 0; j < param.cols(); ++j) {
            for (Eigen::Index i = 0; i < param.rows(); ++i) {
                const double mhat = m_(i, j) / bc1;
                const double vhat = v_(i, j) / bc2;
                param(i, j) -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    long steps_taken() const { return t_; }

private:
    Matrix m_;
    Matrix v_;
    long t_ = 0;
};

/// Reduce-on-plateau learning-rate schedule: when the best loss has not
/// improved by at least `threshold` for more than `patience` consecutive
/// evaluations, the learning rate is multiplied by `factor`.
class PlateauSchedule {
public:
    int patience = 100;
    double factor = 0.5;
    double threshold = 1e-12;

    PlateauSchedule() = default;
    PlateauSchedule(int patience_, double factor_, double threshold_)
        : patience(patience_), factor(factor_), threshold(threshold_) {}

    /// Returns the (possibly reduced) learning rate.
    double observe(double loss, double lr) {
        if (loss < best_ - threshold) {
            best_ = loss;
            bad_ = 0;
            return lr;
        }
        if (++bad_ > patience) {
            bad_ = 0;
            ++reductions_;
            return lr * factor;
        }
        return lr;
    }

    double best() const { return best_; }
    int reductions() const { return reductions_; }

private:
    double best_ = std::numeric_limits<double>::infinity();
    int bad_ = 0;
    int reductions_ = 0;
};

}  // namespace lmswitch
