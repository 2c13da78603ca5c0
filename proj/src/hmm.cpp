#include "lmswitch/hmm.hpp"

#include <cmath>
#include <sstream>

#include "lmswitch/linalg.hpp"

namespace lmswitch {

namespace {

void check_stochastic_rows(const Matrix& m, double tol, const char* name) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (m.row(i).minCoeff() < 0.0 || std::abs(m.row(i).sum() - 1.0) > tol) {
            std::ostringstream os;
            os << name << " row " << i << " is not a probability distribution (sum " << m.row(i).sum() << ")";
            throw InputError(os.str());
        }
    }
}

void check_tokens(const Hmm& hmm, TokenSpan obs) {
    for (Token o : obs)
        if (o < 0 || o >= hmm.observations())
            throw InputError("token id " + std::to_string(o) + " out of range [0, " +
                             std::to_string(hmm.observations()) + ")");
}

}  // namespace

void validate(const Hmm& hmm, double tol) {
    const auto n = hmm.T.rows();
    if (hmm.T.cols() != n || hmm.pi.size() != n || hmm.B.rows() != n || hmm.B.cols() < 1)
        throw InputError("HMM shapes are inconsistent");
    if (hmm.pi.minCoeff() < 0.0 || std::abs(hmm.pi.sum() - 1.0) > tol)
        throw InputError("initial distribution is not a probability vector");
    check_stochastic_rows(hmm.T, tol, "transition");
    check_stochastic_rows(hmm.B, tol, "emission");
}

Vector forward(const Hmm& hmm, TokenSpan prefix) {
    check_tokens(hmm, prefix);
    Vector alpha = hmm.pi;
    for (Token o : prefix) {
        // alpha^T diag(p(o)) T, kept as a column vector.
        const Vector weighted = alpha.cwiseProduct(hmm.B.col(o));
        alpha = hmm.T.transpose() * weighted;
    }
    return alpha;
}

double seq_prob(const Hmm& hmm, TokenSpan obs) {
    if (obs.empty()) throw InputError("seq_prob needs at least one observation");
    check_tokens(hmm, obs);
    const Vector alpha = forward(hmm, obs.first(obs.size() - 1));
    return alpha.dot(hmm.B.col(obs.back()));
}

Vector next_token_dist(const Hmm& hmm, TokenSpan prefix) {
    const Vector alpha = forward(hmm, prefix);
    const double mass = alpha.sum();
    if (!(mass > 0.0)) throw DegeneratePrefixError("prefix has zero probability under the HMM");
    Vector p = hmm.B.transpose() * alpha;
    return p / p.sum();
}

// --- conditioned HMM -------------------------------------------------------

Matrix ConditionedHmm::kernel() const {
    Matrix k = Matrix::Identity(dim(), dim());
    k.topLeftCorner(d_s, d_s) = A_prime;
    return k;
}

Matrix ConditionedHmm::derived_transition() const { return Phi.transpose() * kernel() * Phi; }

Matrix ConditionedHmm::derived_emission() const { return Phi.transpose() * Psi; }

Vector ConditionedHmm::derived_initial() const { return Phi.transpose() * phi_pi; }

namespace {

Matrix clean_rows(Matrix m, double tol, const char* name) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mn = m.row(i).minCoeff();
        const double sum = m.row(i).sum();
        if (mn < -tol || std::abs(sum - 1.0) > tol) {
            std::ostringstream os;
            os << "invalid factorization: derived " << name << " row " << i << " has min " << mn << " and sum "
               << sum << " (tolerance " << tol << ")";
            throw FactorizationError(os.str());
        }
        m.row(i) = m.row(i).cwiseMax(0.0);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

}  // namespace

Hmm realize(const ConditionedHmm& chmm, double tol) {
    const int d = chmm.dim();
    if (chmm.d_s < 0 || chmm.d_c < 1 || chmm.Phi.rows() != d || chmm.Psi.rows() != d ||
        chmm.A_prime.rows() != chmm.d_s || chmm.A_prime.cols() != chmm.d_s || chmm.phi_pi.size() != d)
        throw InputError("conditioned HMM shapes are inconsistent");

    Hmm hmm;
    hmm.T = clean_rows(chmm.derived_transition(), tol, "transition");
    hmm.B = clean_rows(chmm.derived_emission(), tol, "emission");
    Matrix pi_row = chmm.derived_initial().transpose();
    hmm.pi = clean_rows(pi_row, tol, "initial distribution").transpose();
    return hmm;
}

AssumptionReport check_assumption1(const Matrix& Phi, int d_s, double tol) {
    const auto d = Phi.rows();
    if (d_s < 0 || d - d_s < 1) throw InputError("condition block must have at least one dimension");

    AssumptionReport rep;
    const Matrix gram = Phi * Phi.transpose();
    rep.C_hat = gram.diagonal().mean();
    rep.C2 = rep.C_hat;
    for (Eigen::Index i = 0; i < d; ++i) {
        rep.r_norm = std::max(rep.r_norm, std::abs(gram(i, i) - rep.C_hat));
        for (Eigen::Index j = 0; j < d; ++j)
            if (i != j) rep.r_indep = std::max(rep.r_indep, std::abs(gram(i, j)));
    }
    for (Eigen::Index k = d_s; k < d; ++k) {
        // triple(i, j) = sum_s phi_{s,i} phi_{s,j} phi_{s,k}
        const Matrix weighted = Phi * Phi.row(k).asDiagonal();
        const Matrix triple = weighted * Phi.transpose();
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j)
                if (!(i == k && j == k)) rep.r_cond = std::max(rep.r_cond, std::abs(triple(i, j)));
    }
    rep.passed = rep.r_norm <= tol && rep.r_indep <= tol && rep.r_cond <= tol;
    return rep;
}

// --- LM view ----------------------------------------------------------------

LmView::LmView(Hmm hmm, Matrix R1, Matrix R2) : hmm_(std::move(hmm)), R1_(std::move(R1)), R2_(std::move(R2)) {
    E_ = R2_ * hmm_.B;
}

Vector LmView::context(TokenSpan prefix) const {
    const Vector alpha = forward(hmm_, prefix);
    const double mass = alpha.sum();
    if (!(mass > 0.0)) throw DegeneratePrefixError("prefix has zero probability under the HMM");
    return R1_ * (alpha / mass);
}

Vector LmView::conditional(TokenSpan prefix) const {
    Vector p = E_.transpose() * context(prefix);
    return p / p.sum();
}

namespace {

// The emission vectors p(o) must span the state space.
void require_full_rank(const Hmm& hmm) {
    if (numerical_rank(hmm.B) < hmm.states())
        throw FactorizationError("emission vectors p(o) do not span the state space");
}

}  // namespace

LmView build_lm_view_with(const Hmm& hmm, const Matrix& R2, bool require_rank) {
    validate(hmm);
    if (require_rank) require_full_rank(hmm);
    if (R2.cols() != hmm.states() || R2.rows() < hmm.states())
        throw InputError("R2 must be dim x n with dim >= n");
    const Matrix gram = R2.transpose() * R2;
    Eigen::FullPivLU<Matrix> lu(gram);
    if (!lu.isInvertible()) throw FactorizationError("R2 does not have full column rank");
    Matrix R1 = R2 * lu.inverse();
    return LmView(hmm, std::move(R1), R2);
}

LmView build_lm_view(const Hmm& hmm, std::optional<Eigen::Index> dim, bool require_rank) {
    const auto n = hmm.states();
    const auto d = dim.value_or(n);
    if (d < n) throw InputError("LM view dimension must be at least the state count");
    Matrix R2 = Matrix::Zero(d, n);
    R2.topRows(n).setIdentity();
    return build_lm_view_with(hmm, R2, require_rank);
}

// --- switch construction -------------------------------------------------------

Matrix build_helper_wprime(const ConditionedHmm& chmm, const Vector& phi_pi, const Vector& phi_pi_prime) {
    const int d = chmm.dim();
    if (phi_pi.size() != d || phi_pi_prime.size() != d) throw InputError("phi_pi vectors must have length d");
    for (int i = 0; i < chmm.d_s; ++i)
        if (phi_pi(i) != phi_pi_prime(i))
            throw InputError("semantic blocks of phi_pi and phi_pi_prime differ at dimension " + std::to_string(i));
    Matrix w = Matrix::Identity(d, d);
    for (int k = chmm.d_s; k < d; ++k) {
        if (phi_pi(k) == 0.0)
            throw DegenerateConditionError("condition entry " + std::to_string(k) + " of phi_pi is zero");
        w(k, k) = phi_pi_prime(k) / phi_pi(k);
    }
    return w;
}

SwitchConstruction construct_switch(const ConditionedHmm& chmm, const LmView& view, const Matrix& Wprime) {
    const int d = chmm.dim();
    if (Wprime.rows() != d || Wprime.cols() != d) throw InputError("W' must be d x d");
    if (view.hmm().states() != chmm.states()) throw InputError("view and conditioned HMM disagree on state count");

    const PseudoInverse r1 = pseudo_inverse(view.R1());
    const PseudoInverse r2 = pseudo_inverse(view.R2());
    const Matrix X = chmm.Phi.transpose() * Wprime * chmm.Phi;

    SwitchConstruction out;
    out.W = r1.value.transpose() * X * r2.value;
    out.condition_number = std::max(r1.condition_number, r2.condition_number);
    out.ill_conditioned = out.condition_number > 1e8;
    return out;
}

SwitchedConditional switched_view_conditional(const LmView& view, const Matrix& W, TokenSpan prefix) {
    const Vector c = view.context(prefix);
    Vector raw = (W * view.E()).transpose() * c;
    SwitchedConditional out;
    out.min_unnormalized = raw.minCoeff();
    if (out.min_unnormalized < 0.0) {
        if (out.min_unnormalized > -1e-8)
            raw = raw.cwiseMax(0.0);
        else
            out.fidelity_warning = true;
    }
    out.probs = raw / raw.sum();
    return out;
}

LemmaResiduals verify_lemmas(const ConditionedHmm& chmm, const Matrix& Wprime) {
    const Matrix& Phi = chmm.Phi;
    const Matrix T = chmm.derived_transition();
    const Matrix B = chmm.derived_emission();
    const Matrix X = Phi.transpose() * Wprime * Phi;
    const Matrix WPhi = Wprime * Phi;

    LemmaResiduals r;
    r.swap_transition = relative_residual(T * X, X * T);
    for (Eigen::Index o = 0; o < B.cols(); ++o) {
        const auto D = B.col(o).asDiagonal();
        const Matrix PhiD = Phi * D;
        r.swap_emission = std::max(r.swap_emission, relative_residual(PhiD * Phi.transpose() * WPhi, WPhi * D));
        const Matrix TD = T * D;
        r.swap_combined = std::max(r.swap_combined, relative_residual(TD * X, X * TD));
    }
    return r;
}

void for_each_sequence(Eigen::Index vocab, int len, const std::function<void(TokenSpan)>& fn) {
    if (len < 0) throw InputError("sequence length must be non-negative");
    TokenSeq seq(static_cast<std::size_t>(len), 0);
    if (len == 0) {
        fn(seq);
        return;
    }
    if (vocab <= 0) return;
    while (true) {
        fn(seq);
        int pos = len - 1;
        while (pos >= 0 && ++seq[pos] == vocab) seq[pos--] = 0;
        if (pos < 0) break;
    }
}

FidelityReport verify_theorem1(const ConditionedHmm& chmm, const LmView& view, const Matrix& W, const Vector& pi,
                               const Vector& pi_prime, int max_len, std::size_t budget) {
    const Hmm& base = view.hmm();
    const auto m = base.observations();
    if (pi.size() != base.states() || pi_prime.size() != base.states())
        throw InputError("initial distributions must have one entry per state");
    if ((pi - base.pi).cwiseAbs().maxCoeff() > 1e-9)
        throw InputError("view was not built from the pi-initialized HMM");
    if (chmm.states() != base.states()) throw InputError("view and conditioned HMM disagree on state count");

    std::size_t total = 0;
    double layer = 1.0;
    for (int len = 0; len <= max_len; ++len) {
        total += static_cast<std::size_t>(layer);
        if (total > budget) throw BudgetError("prefix enumeration exceeds budget of " + std::to_string(budget));
        layer *= static_cast<double>(m);
    }

    Hmm target = base;
    target.pi = pi_prime / pi_prime.sum();
    validate(target, 1e-9);

    FidelityReport rep;
    for (int len = 0; len <= max_len; ++len) {
        for_each_sequence(m, len, [&](TokenSpan prefix) {
            if (!(forward(base, prefix).sum() > 0.0) || !(forward(target, prefix).sum() > 0.0)) return;
            const SwitchedConditional sw = switched_view_conditional(view, W, prefix);
            const Vector expected = next_token_dist(target, prefix);
            rep.max_l1 = std::max(rep.max_l1, (sw.probs - expected).cwiseAbs().sum());
            rep.fidelity_warning = rep.fidelity_warning || sw.fidelity_warning;
            ++rep.prefixes;
        });
    }
    return rep;
}

}  // namespace lmswitch

namespace lmswitch {

SwitchCertificate certify_switch(const ConditionedHmm& chmm, double condition_scale, int max_len, double realize_tol) {
    if (!(condition_scale > 0.0) || !std::isfinite(condition_scale))
        throw InputError("condition scale must be positive and finite");
    const Hmm h = realize(chmm, realize_tol);
    const LmView view = build_lm_view(h, std::nullopt, false);
    Vector prime = chmm.phi_pi;
    prime.tail(chmm.d_c) *= condition_scale;
    SwitchCertificate out;
    out.Wprime = build_helper_wprime(chmm, chmm.phi_pi, prime);
    const SwitchConstruction sw = construct_switch(chmm, view, out.Wprime);
    out.W = sw.W;
    out.condition_number = sw.condition_number;
    out.ill_conditioned = sw.ill_conditioned;
    out.lemmas = verify_lemmas(chmm, out.Wprime);
    // Phi^T phi_pi' can carry tiny negative entries when Phi is only
    // approximately valid; verify_theorem1 normalizes the rest.
    const Vector pi_prime = (chmm.Phi.transpose() * prime).cwiseMax(0.0);
    out.theorem1 = verify_theorem1(chmm, view, out.W, h.pi, pi_prime, max_len);
    return out;
}

}  // namespace lmswitch
