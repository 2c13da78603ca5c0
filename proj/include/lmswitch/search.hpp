#pragma once

#include <optional>
#include <string>

#include "lmswitch/common.hpp"
#include "lmswitch/hmm.hpp"

namespace lmswitch {

struct SearchConfig {
    int n = 40;
    int d_s = 7;
    int d_c = 1;
    double init_var = 1e-3;
    double lr = 1e-3;
    int plateau_patience = 100;
    double plateau_factor = 0.5;
    double plateau_threshold = 1e-12;
    long max_steps = 100000;
    double target_loss = 1e-5;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3};
    // Finite-difference check of the analytic gradient every this many steps
    // (0 disables).
    long gradient_check_every = 10000;

    int dim() const { return d_s + d_c; }
    void validate() const;
    /// n = 200, d_s = 20, d_c = 1, 500k steps.
    static SearchConfig full_scale();
    /// Heuristic: configurations at or beyond the full-size preset take hours.
    bool long_running() const;
};

struct LossTerms {
    double norm = 0.0;
    double dist = 0.0;
    double independence = 0.0;
    double conditional = 0.0;

    double total() const { return norm + dist + independence + conditional; }
};

/// The four constraint penalties on Phi (d x n), with T = Phi^T Phi.
LossTerms loss_terms(const Matrix& Phi, int d_s);

/// Analytic gradient of loss_terms(Phi, d_s).total(). The hinge on negative
/// transition entries uses the zero subgradient at exactly zero.
Matrix loss_gradient(const Matrix& Phi, int d_s);

/// Max relative error between the analytic gradient and central differences
/// on `samples` randomly chosen entries. Entries whose +-h perturbation
/// crosses a hinge kink of the distribution term are skipped. The relative
/// error denominator is floored at 1e-6 so vanishing entries compare absolutely.
double gradient_check(const Matrix& Phi, int d_s, int samples, double h, std::uint64_t seed);

struct SearchResult {
    Matrix Phi;
    int d_s = 0;
    int d_c = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    LossTerms terms;
    long steps_used = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    int lr_reductions = 0;
    double max_gradient_error = 0.0;
    std::optional<std::string> error;  // set when the run diverged
};

/// One seed: Gaussian init, Adam with a reduce-on-plateau schedule, stop at
/// target_loss or max_steps. Returns the best iterate seen.
SearchResult search_seed(const SearchConfig& cfg, std::uint64_t seed);

/// All seeds, run in parallel; results are ordered as cfg.seeds.
std::vector<SearchResult> search(const SearchConfig& cfg);

struct ExportOptions {
    int observations = 6;
    // B_target rows are (1 - noise) * uniform + noise * Dirichlet(1).
    double noise = 0.5;
    std::uint64_t seed = 0;
};

/// A' = I, Psi = (Phi Phi^T)^{-1} Phi B_target, phi_pi = (Phi Phi^T)^{-1} Phi u
/// for a random positive u. Refuses non-converged results with InputError.
ConditionedHmm export_chmm(const SearchResult& result, const ExportOptions& opts = {});

/// Exact zero of the search loss: d = d_s + d_c disjoint clusters of
/// `cluster_size` states, phi rows are scaled cluster indicators, and the
/// semantic block is mixed by a random rotation Q. A' = Q S Q^T for a random
/// row-stochastic S, so the derived transition is stochastic.
ConditionedHmm exact_cluster_instance(int d_s, int d_c, int cluster_size, int observations, std::uint64_t seed);

}  // namespace lmswitch
