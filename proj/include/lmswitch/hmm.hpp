#pragma once

#include <functional>
#include <optional>

#include "lmswitch/common.hpp"

namespace lmswitch {

/// Explicit discrete HMM over a fixed sequence length.
///
/// pi: initial state distribution (n), T: row-stochastic transitions (n x n),
/// B: row-stochastic emissions (n x m). Column o of B is p(o), the per-state
/// likelihood of observation o.
struct Hmm {
    Vector pi;
    Matrix T;
    Matrix B;

    Eigen::Index states() const { return T.rows(); }
    Eigen::Index observations() const { return B.cols(); }
};

/// Throws InputError when shapes disagree or the stochasticity invariants
/// fail at `tol`.
void validate(const Hmm& hmm, double tol = 1e-9);

/// Unnormalized forward row vector after consuming `prefix`:
///   pi^T diag(p(o_1)) T ... diag(p(o_k)) T
/// Its entries sum to P(prefix). For an empty prefix this is pi.
Vector forward(const Hmm& hmm, TokenSpan prefix);

/// P(o_1..o_L) = pi^T (prod diag(p(o_t)) T) p(o_L).
double seq_prob(const Hmm& hmm, TokenSpan obs);

/// P(. | prefix). Throws DegeneratePrefixError if the prefix has probability 0.
Vector next_token_dist(const Hmm& hmm, TokenSpan prefix);

/// Factorized HMM whose state representations split into a semantic block
/// (first d_s dims) and a condition block (last d_c dims).
struct ConditionedHmm {
    int d_s = 0;
    int d_c = 0;
    Matrix Phi;      // d x n, column s is phi_s
    Matrix Psi;      // d x m, column o is psi_o
    Matrix A_prime;  // d_s x d_s semantic transition kernel
    Vector phi_pi;   // d

    int dim() const { return d_s + d_c; }
    Eigen::Index states() const { return Phi.cols(); }
    Eigen::Index observations() const { return Psi.cols(); }

    /// blockdiag(A', I_{d_c}); derived T = Phi^T kernel() Phi.
    Matrix kernel() const;
    Matrix derived_transition() const;
    Matrix derived_emission() const;
    Vector derived_initial() const;
};

/// Builds the explicit HMM. Entries above -tol are clamped to 0 and rows are
/// renormalized; anything beyond tol raises FactorizationError.
Hmm realize(const ConditionedHmm& chmm, double tol = 1e-6);

/// Residuals of the three representation conditions on Phi (d x n).
struct AssumptionReport {
    double r_norm = 0.0;   // max_i |sum_s phi_{s,i}^2 - C_hat|
    double r_indep = 0.0;  // max_{i != j} |sum_s phi_{s,i} phi_{s,j}|
    double r_cond = 0.0;   // max over admissible triples of |sum_s phi_i phi_j phi_k|
    double C_hat = 0.0;    // mean per-dimension squared sum
    double C2 = 0.0;       // mean diagonal of Phi Phi^T / (row-orthonormality scale)
    bool passed = false;
};

AssumptionReport check_assumption1(const Matrix& Phi, int d_s, double tol);

/// Linear-LM view of an HMM: e_o = R2 p(o) and c(prefix) = R1 alpha / P(prefix),
/// with R1^T R2 = I_n.
class LmView {
public:
    LmView(Hmm hmm, Matrix R1, Matrix R2);

    const Hmm& hmm() const { return hmm_; }
    const Matrix& R1() const { return R1_; }
    const Matrix& R2() const { return R2_; }
    /// dim x m embedding matrix.
    const Matrix& E() const { return E_; }
    Eigen::Index dim() const { return R2_.rows(); }

    Vector context(TokenSpan prefix) const;
    /// c^T E, normalized to sum to one.
    Vector conditional(TokenSpan prefix) const;

private:
    Hmm hmm_;
    Matrix R1_;
    Matrix R2_;
    Matrix E_;
};

/// Default projections: R2 = identity padded with zero rows up to `dim`
/// (dim defaults to n), R1 = R2 (R2^T R2)^{-1}.
///
/// With `require_rank` the emission vectors p(o) must span R^n, otherwise a
/// FactorizationError is raised. Conditioned HMMs have rank(B) <= d < n, so
/// the switch construction builds its views with the check disabled; the
/// view identities themselves do not depend on it.
LmView build_lm_view(const Hmm& hmm, std::optional<Eigen::Index> dim = std::nullopt, bool require_rank = true);

/// Uses the supplied full-column-rank R2 and R1 = R2 (R2^T R2)^{-1}.
LmView build_lm_view_with(const Hmm& hmm, const Matrix& R2, bool require_rank = true);

/// W' = blockdiag(I_{d_s}, Lambda) with Lambda_kk = phi_pi_prime[k] / phi_pi[k].
Matrix build_helper_wprime(const ConditionedHmm& chmm, const Vector& phi_pi, const Vector& phi_pi_prime);

struct SwitchConstruction {
    Matrix W;                      // dim x dim, acts as E -> W E
    double condition_number = 0.0; // worst of the two pseudo-inverses
    bool ill_conditioned = false;  // condition_number > 1e8
};

/// W = (R1^+)^T Phi^T W' Phi R2^+, so that c^T W e_o = alpha^T Phi^T W' Phi p(o) / P(prefix).
SwitchConstruction construct_switch(const ConditionedHmm& chmm, const LmView& view, const Matrix& Wprime);

/// Normalized c(prefix)^T W E. Tiny negative mass (> -1e-8) is clamped; larger
/// negative mass sets `fidelity_warning` and is left in place.
struct SwitchedConditional {
    Vector probs;
    double min_unnormalized = 0.0;
    bool fidelity_warning = false;
};

SwitchedConditional switched_view_conditional(const LmView& view, const Matrix& W, TokenSpan prefix);

struct LemmaResiduals {
    double swap_transition = 0.0;  // T X - X T, X = Phi^T W' Phi
    double swap_emission = 0.0;    // max_o Phi D_o Phi^T W' Phi - W' Phi D_o
    double swap_combined = 0.0;    // max_o T D_o X - X T D_o
};

LemmaResiduals verify_lemmas(const ConditionedHmm& chmm, const Matrix& Wprime);

struct FidelityReport {
    double max_l1 = 0.0;
    std::size_t prefixes = 0;
    bool fidelity_warning = false;
};

/// Enumerates every prefix of length 0..max_len and compares the normalized
/// switched conditional of `view` (built on the pi-initialized HMM) with the
/// conditional of the same HMM initialized at pi_prime.
FidelityReport verify_theorem1(const ConditionedHmm& chmm, const LmView& view, const Matrix& W,
                               const Vector& pi, const Vector& pi_prime, int max_len,
                               std::size_t budget = 1'000'000);

struct SwitchCertificate {
    Matrix W;
    Matrix Wprime;
    double condition_number = 0.0;
    bool ill_conditioned = false;
    LemmaResiduals lemmas;
    FidelityReport theorem1;
};

/// Full switch certification pipeline: realize the HMM, build its LM view, scale the
/// condition entries of phi_pi by `condition_scale` to get the target
/// initial state, construct W and compare against the re-initialized HMM.
SwitchCertificate certify_switch(const ConditionedHmm& chmm, double condition_scale, int max_len,
                                 double realize_tol = 1e-6);

/// Calls fn on every token sequence of length `len` over `vocab` symbols in
/// lexicographic order.
void for_each_sequence(Eigen::Index vocab, int len, const std::function<void(TokenSpan)>& fn);

}  // namespace lmswitch
