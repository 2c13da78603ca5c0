#include "doctest.h"

#include <cmath>
#include <random>

#include "lmswitch/linalg.hpp"
#include "lmswitch/search.hpp"

using namespace lmswitch;

TEST_CASE("loss terms at hand-built points") {
    const LossTerms zero = loss_terms(Matrix::Zero(8, 40), 7);
    CHECK(zero.norm == 0.0);
    CHECK(zero.independence == 0.0);
    CHECK(zero.conditional == 0.0);
    CHECK(zero.dist == 40.0);

    // cluster indicators: orthogonal rows of equal energy, T block-uniform
    const ConditionedHmm c = exact_cluster_instance(3, 1, 5, 4, 0);
    Matrix Phi = Matrix::Zero(4, 20);
    for (int i = 0; i < 4; ++i) Phi.block(i, 5 * i, 1, 5).setConstant(1.0 / std::sqrt(5.0));
    const LossTerms t = loss_terms(Phi, 3);
    CHECK(t.norm < 1e-30);
    CHECK(t.independence == 0.0);
    CHECK(t.conditional == 0.0);
    CHECK(t.dist < 1e-28);
    CHECK(loss_gradient(Phi, 3).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(loss_terms(c.Phi, 3).norm < 1e-28);

    std::mt19937_64 rng(3);
    const Matrix g = gaussian_matrix(8, 40, 1e-3, rng);
    const LossTerms r = loss_terms(g, 7);
    CHECK(r.total() > 1.0);
    CHECK(r.norm >= 0.0);
    CHECK(r.dist >= 0.0);
    CHECK(r.independence >= 0.0);
    CHECK(r.conditional >= 0.0);
}

TEST_CASE("loss gradient matches finite differences") {
    std::mt19937_64 rng(8);
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const Matrix Phi = gaussian_matrix(8, 40, trial % 2 ? 1e-3 : 0.02, rng);
        CHECK(gradient_check(Phi, 7, 20, 1e-6, trial) < 1e-5);
    }
}

TEST_CASE("distribution term gradient vanishes on a valid stochastic T") {
    // T = Phi^T Phi with positive entries summing to one per row
    const int n = 12, d = 3;
    Matrix Phi = Matrix::Constant(d, n, 1.0 / std::sqrt(static_cast<double>(d * n)));
    const Matrix T = Phi.transpose() * Phi;
    REQUIRE(T.minCoeff() > 0.0);
    REQUIRE(std::abs(T.row(0).sum() - 1.0) < 1e-12);
    CHECK(loss_terms(Phi, 2).dist < 1e-28);
}

TEST_CASE("search bookkeeping") {
    SearchConfig cfg;
    cfg.max_steps = 0;
    const SearchResult r = search_seed(cfg, 0);
    CHECK(r.final_loss == r.initial_loss);
    CHECK_FALSE(r.converged);
    CHECK(r.steps_used == 0);
    CHECK_THROWS_AS(export_chmm(r), InputError);

    CHECK(SearchConfig::full_scale().long_running());
    CHECK_FALSE(SearchConfig{}.long_running());
    SearchConfig bad;
    bad.n = 8;
    CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("desk search converges on seed 2 and exports a realizable HMM") {
    SearchConfig cfg;
    cfg.seeds = {2};
    const auto results = search(cfg);
    REQUIRE(results.size() == 1);
    const SearchResult& r = results.front();
    CHECK(r.initial_loss > 1.0);
    REQUIRE(r.converged);
    CHECK(r.final_loss < 1e-5);
    CHECK(std::abs(r.final_loss - r.terms.total()) < 1e-12);
    CHECK(r.max_gradient_error < 1e-5);
    CHECK(search_seed(cfg, 2).final_loss == r.final_loss);

    const ConditionedHmm c = export_chmm(r);
    const Hmm h = realize(c, std::sqrt(r.final_loss));
    CHECK((h.T.rowwise().sum().array() - 1.0).abs().maxCoeff() < std::sqrt(r.final_loss));
    const AssumptionReport a = check_assumption1(c.Phi, c.d_s, 1e-3);
    CHECK(a.r_norm < 1e-3);
    CHECK(a.r_indep < 1e-3);
    CHECK(a.r_cond < 1e-3);
}
