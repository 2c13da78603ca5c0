#include "lmswitch/search.hpp"

#include <cmath>
#include <random>

#include <omp.h>

#include "lmswitch/linalg.hpp"
#include "lmswitch/optim.hpp"

namespace lmswitch {

void SearchConfig::validate() const {
    if (d_c < 1) throw InputError("d_c must be at least 1");
    if (d_s < 0) throw InputError("d_s must be non-negative");
    if (n <= dim()) throw InputError("n must exceed d_s + d_c");
    if (!(init_var > 0.0) || !(lr > 0.0)) throw InputError("init_var and lr must be positive");
    if (plateau_patience < 0 || !(plateau_factor > 0.0 && plateau_factor < 1.0))
        throw InputError("invalid plateau schedule");
    if (max_steps < 0) throw InputError("max_steps must be non-negative");
    if (seeds.empty()) throw InputError("at least one seed is required");
}

SearchConfig SearchConfig::full_scale() {
    SearchConfig c;
    c.n = 200;
    c.d_s = 20;
    c.d_c = 1;
    c.max_steps = 500000;
    return c;
}

bool SearchConfig::long_running() const {
    return static_cast<double>(max_steps) * n * dim() * dim() >= 500000.0 * 200 * 21 * 21 / 4;
}

namespace {

// Gram matrix and the per-condition-dim triple matrices M_k = Phi diag(phi_k) Phi^T
// with the (k, k) entry removed.
Matrix triple_residual(const Matrix& Phi, Eigen::Index k) {
    Matrix M = Phi * Phi.row(k).asDiagonal() * Phi.transpose();
    M(k, k) = 0.0;
    return M;
}

// Total loss at arbitrary precision; the finite-difference oracle evaluates it
// in long double so the central difference is not dominated by roundoff.
template <class S>
S total_loss(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& Phi, int d_s) {
    using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    const auto d = Phi.rows();
    const M G = Phi * Phi.transpose();
    const S mean = G.diagonal().mean();
    S total = 0;
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) total += i == j ? (G(i, i) - mean) * (G(i, i) - mean) : G(i, j) * G(i, j);
    const M T = Phi.transpose() * Phi;
    for (Eigen::Index s = 0; s < T.rows(); ++s) {
        for (Eigen::Index t = 0; t < T.cols(); ++t) total += std::max<S>(-T(s, t), S(0));
        const S r = T.row(s).sum() - S(1);
        total += r * r;
    }
    for (Eigen::Index k = d_s; k < d; ++k) {
        M m = Phi * Phi.row(k).asDiagonal() * Phi.transpose();
        m(k, k) = 0;
        total += m.squaredNorm();
    }
    return total;
}

}  // namespace

LossTerms loss_terms(const Matrix& Phi, int d_s) {
    const auto d = Phi.rows();
    LossTerms out;
    const Matrix G = Phi * Phi.transpose();
    const double mean = G.diagonal().mean();
    for (Eigen::Index i = 0; i < d; ++i) out.norm += (G(i, i) - mean) * (G(i, i) - mean);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            if (i != j) out.independence += G(i, j) * G(i, j);

    const Matrix T = Phi.transpose() * Phi;
    for (Eigen::Index s = 0; s < T.rows(); ++s) {
        for (Eigen::Index t = 0; t < T.cols(); ++t) out.dist += std::max(-T(s, t), 0.0);
        const double r = T.row(s).sum() - 1.0;
        out.dist += r * r;
    }
    for (Eigen::Index k = d_s; k < d; ++k) out.conditional += triple_residual(Phi, k).squaredNorm();
    return out;
}

Matrix loss_gradient(const Matrix& Phi, int d_s) {
    const auto d = Phi.rows();
    const auto n = Phi.cols();
    const Matrix G = Phi * Phi.transpose();
    const double mean = G.diagonal().mean();

    // Norm and independence terms act through G.
    Matrix dG = 2.0 * G;
    dG.diagonal().setZero();
    for (Eigen::Index i = 0; i < d; ++i) dG(i, i) = 2.0 * (G(i, i) - mean);
    Matrix grad = 2.0 * dG * Phi;

    // Distribution term acts through T = Phi^T Phi.
    const Matrix T = Phi.transpose() * Phi;
    Matrix dT(n, n);
    for (Eigen::Index s = 0; s < n; ++s) {
        const double r = 2.0 * (T.row(s).sum() - 1.0);
        for (Eigen::Index t = 0; t < n; ++t) dT(s, t) = r - (T(s, t) < 0.0 ? 1.0 : 0.0);
    }
    grad += Phi * (dT + dT.transpose());

    for (Eigen::Index k = d_s; k < d; ++k) {
        const Matrix R = triple_residual(Phi, k);
        const Matrix RPhi = R * Phi;
        grad += 4.0 * (RPhi.array().rowwise() * Phi.row(k).array()).matrix();
        grad.row(k) += 2.0 * (Phi.array() * RPhi.array()).colwise().sum().matrix();
    }
    return grad;
}

namespace {

// True when moving Phi(i, j) by +-h flips the sign of a transition entry in
// row j, i.e. the central difference would straddle a hinge kink.
bool straddles_kink(const Matrix& Phi, Eigen::Index i, Eigen::Index j, double h) {
    const Vector col = Phi.transpose() * Phi.col(j);
    for (Eigen::Index t = 0; t < Phi.cols(); ++t) {
        const double slope = t == j ? 2.0 * Phi(i, j) : Phi(i, t);
        const double curve = t == j ? h * h : 0.0;
        const double up = col(t) + h * slope + curve;
        const double down = col(t) - h * slope + curve;
        if ((up < 0.0) != (col(t) < 0.0) || (down < 0.0) != (col(t) < 0.0)) return true;
    }
    return false;
}

}  // namespace

double gradient_check(const Matrix& Phi, int d_s, int samples, double h, std::uint64_t seed) {
    const Matrix g = loss_gradient(Phi, d_s);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> row(0, Phi.rows() - 1), col(0, Phi.cols() - 1);
    double worst = 0.0;
    using Wide = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    Wide probe = Phi.cast<long double>();
    const long double step = h;
    int taken = 0;
    for (int attempt = 0; taken < samples && attempt < 50 * samples; ++attempt) {
        const Eigen::Index i = row(rng), j = col(rng);
        if (straddles_kink(Phi, i, j, h)) continue;
        ++taken;
        const long double keep = probe(i, j);
        probe(i, j) = keep + step;
        const long double up = total_loss(probe, d_s);
        probe(i, j) = keep - step;
        const long double down = total_loss(probe, d_s);
        probe(i, j) = keep;
        const auto fd = static_cast<double>((up - down) / (2 * step));
        const double scale = std::max({std::abs(fd), std::abs(g(i, j)), 1e-6});
        worst = std::max(worst, std::abs(fd - g(i, j)) / scale);
    }
    return worst;
}

SearchResult search_seed(const SearchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SearchResult res;
    res.seed = seed;
    res.d_s = cfg.d_s;
    res.d_c = cfg.d_c;

    std::mt19937_64 rng(seed);
    Matrix Phi = gaussian_matrix(cfg.dim(), cfg.n, cfg.init_var, rng);
    Adam adam(cfg.lr, Phi.rows(), Phi.cols());
    PlateauSchedule plateau(cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_threshold);

    res.Phi = Phi;
    res.terms = loss_terms(Phi, cfg.d_s);
    res.initial_loss = res.final_loss = res.terms.total();

    for (long step = 0;; ++step) {
        const LossTerms terms = step == 0 ? res.terms : loss_terms(Phi, cfg.d_s);
        const double loss = terms.total();
        if (!std::isfinite(loss)) {
            res.error = DivergenceError("search loss is not finite", step).what();
            break;
        }
        if (loss < res.final_loss || step == 0) {
            res.final_loss = loss;
            res.terms = terms;
            res.Phi = Phi;
        }
        res.steps_used = step;
        if (loss < cfg.target_loss || step >= cfg.max_steps) break;

        if (cfg.gradient_check_every > 0 && step % cfg.gradient_check_every == 0)
            res.max_gradient_error =
                std::max(res.max_gradient_error, gradient_check(Phi, cfg.d_s, 20, 1e-6, seed + static_cast<std::uint64_t>(step)));

        adam.lr = plateau.observe(loss, adam.lr);
        adam.step(Phi, loss_gradient(Phi, cfg.d_s));
    }
    res.lr_reductions = plateau.reductions();
    res.converged = !res.error && res.final_loss < cfg.target_loss;
    return res;
}

std::vector<SearchResult> search(const SearchConfig& cfg) {
    cfg.validate();
    std::vector<SearchResult> out(cfg.seeds.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cfg.seeds.size()); ++i)
        out[static_cast<std::size_t>(i)] = search_seed(cfg, cfg.seeds[static_cast<std::size_t>(i)]);
    return out;
}

namespace {

Matrix target_emission(Eigen::Index n, int m, double noise, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(1.0, 1.0);
    Matrix B(n, m);
    for (Eigen::Index s = 0; s < n; ++s) {
        Vector dir(m);
        for (int o = 0; o < m; ++o) dir(o) = gamma(rng);
        dir /= dir.sum();
        B.row(s) = ((1.0 - noise) / m + noise * dir.array()).matrix().transpose();
    }
    return B;
}

Vector positive_weights(Eigen::Index n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    Vector w(n);
    for (Eigen::Index s = 0; s < n; ++s) w(s) = u(rng);
    return w / w.sum();
}

}  // namespace

ConditionedHmm export_chmm(const SearchResult& result, const ExportOptions& opts) {
    if (!result.converged) throw InputError("refusing to export a search result that did not converge");
    if (opts.observations < 1) throw InputError("export needs at least one observation");
    std::mt19937_64 rng(opts.seed);
    const Matrix& Phi = result.Phi;
    const Eigen::Index n = Phi.cols();

    ConditionedHmm c;
    c.d_s = result.d_s;
    c.d_c = result.d_c;
    c.Phi = Phi;
    c.A_prime = Matrix::Identity(c.d_s, c.d_s);
    const Eigen::LDLT<Matrix> gram(Phi * Phi.transpose());
    c.Psi = gram.solve(Phi * target_emission(n, opts.observations, opts.noise, rng));
    c.phi_pi = gram.solve(Phi * positive_weights(n, rng));
    for (int k = c.d_s; k < c.dim(); ++k)
        if (c.phi_pi(k) == 0.0) throw DegenerateConditionError("exported phi_pi has a zero condition entry");
    return c;
}

ConditionedHmm exact_cluster_instance(int d_s, int d_c, int cluster_size, int observations, std::uint64_t seed) {
    if (d_s < 1 || d_c < 1 || cluster_size < 1 || observations < 1)
        throw InputError("exact instance needs positive dimensions");
    std::mt19937_64 rng(seed);
    const int d = d_s + d_c;
    const Eigen::Index n = static_cast<Eigen::Index>(d) * cluster_size;
    const double a = 1.0 / std::sqrt(static_cast<double>(cluster_size));

    Matrix Phi0 = Matrix::Zero(d, n);
    for (int i = 0; i < d; ++i) Phi0.block(i, static_cast<Eigen::Index>(i) * cluster_size, 1, cluster_size).setConstant(a);

    Matrix Q = gaussian_matrix(d_s, d_s, 1.0, rng);
    Q = Eigen::HouseholderQR<Matrix>(Q).householderQ() * Matrix::Identity(d_s, d_s);
    Matrix S(d_s, d_s);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int i = 0; i < d_s; ++i) {
        for (int j = 0; j < d_s; ++j) S(i, j) = u(rng);
        S.row(i) /= S.row(i).sum();
    }

    ConditionedHmm c;
    c.d_s = d_s;
    c.d_c = d_c;
    c.Phi = Phi0;
    c.Phi.topRows(d_s) = Q * Phi0.topRows(d_s);
    c.A_prime = Q * S * Q.transpose();
    // Phi Phi^T = I, so the minimal-norm solves reduce to products.
    c.Psi = c.Phi * target_emission(n, observations, 0.5, rng);
    c.phi_pi = c.Phi * positive_weights(n, rng);
    return c;
}

}  // namespace lmswitch
