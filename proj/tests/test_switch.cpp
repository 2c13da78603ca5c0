#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include <omp.h>

#include "lmswitch/linalg.hpp"
#include "lmswitch/switch.hpp"

using namespace lmswitch;

namespace {

const std::vector<std::string>& tiny_corpus() {
    static const std::vector<std::string> c{"x y x", "y y", "x x y", "y", "x y y x", "x"};
    return c;
}

SoftmaxLm tiny_lm() {
    const Vocab v = Vocab::build(tiny_corpus(), 10);
    BaseLmConfig cfg;
    cfg.dim = 4;
    cfg.epochs = 300;
    cfg.seed = 3;
    return train_base_lm(tiny_corpus(), v, cfg);
}

std::vector<TokenSeq> tokenize_all(const Vocab& v, const std::vector<std::string>& lines) {
    std::vector<TokenSeq> out;
    for (const auto& l : lines) out.push_back(v.tokenize(l));
    return out;
}

}  // namespace

TEST_CASE("switched conditional identities") {
    const SoftmaxLm lm = tiny_lm();
    std::mt19937_64 rng(1);
    const Matrix W = gaussian_matrix(4, 4, 1.0, rng);
    const Matrix Z = Matrix::Zero(4, 4);
    for (Token a = 0; a < static_cast<Token>(lm.vocab_size()); ++a) {
        const TokenSeq prefix{a};
        const Vector base = lm.conditional(prefix);
        CHECK((switched_conditional(lm, W, 0.0, prefix).array() == base.array()).all());
        CHECK((switched_conditional(lm, Z, 0.7, prefix).array() == base.array()).all());
        CHECK(std::abs(switched_conditional(lm, W, 0.3, prefix).sum() - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(switched_conditional(lm, Matrix::Zero(3, 3), 0.1, TokenSeq{}), InputError);
}

TEST_CASE("scalar switched softmax") {
    // d = 1: c = 1, e_0 = 1, e_1 = 0.5, W = 2, eps = 0.1 gives logits 1.2 and 0.6.
    const Vocab v = Vocab::from_tokens({"o0", "o1", "<unk>", "<bos>", "<eos>"});
    Matrix E(1, 5);
    E << 1.0, 0.5, 0.0, 0.0, 0.0;
    const Matrix C = Matrix::Ones(1, 5);
    const SoftmaxLm lm(v, E, C);
    const Vector p = switched_conditional(lm, Matrix::Constant(1, 1, 2.0), 0.1, TokenSeq{});
    CHECK(std::log(p(0) / p(1)) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(p(0) / (p(0) + p(1)) == doctest::Approx(1.0 / (1.0 + std::exp(-0.6))).epsilon(1e-12));
    CHECK(p(0) / (p(0) + p(1)) == doctest::Approx(0.6457).epsilon(1e-4));
}

TEST_CASE("log-likelihood gradient") {
    const SoftmaxLm lm = tiny_lm();
    std::mt19937_64 rng(5);
    const Matrix W = gaussian_matrix(4, 4, 1.0, rng);
    const TokenSeq seq{0, 1, 1, 0, lm.vocab().eos()};
    CHECK(loglik_grad_W(lm, W, 0.0, seq).cwiseAbs().maxCoeff() == 0.0);

    // A model that is certain of every token has zero gradient.
    const Vocab v = Vocab::from_tokens({"a", "<unk>", "<bos>", "<eos>"});
    Matrix E = Matrix::Zero(2, 4);
    E(0, 0) = 1000.0;
    const Matrix Cs = Matrix::Constant(2, 4, 1.0);
    const SoftmaxLm certain(v, E, Cs);
    CHECK(loglik_grad_W(certain, Matrix::Identity(2, 2), 0.5, TokenSeq{0, 0}).cwiseAbs().maxCoeff() == 0.0);

    const double eps = 0.5, h = 1e-5;
    const Matrix g = loglik_grad_W(lm, W, eps, seq);
    double worst = 0.0;
    std::uniform_int_distribution<int> pick(0, 3);
    for (int s = 0; s < 20; ++s) {
        const int i = pick(rng), j = pick(rng);
        Matrix up = W, down = W;
        up(i, j) += h;
        down(i, j) -= h;
        const double fd = (loglik(lm, up, eps, seq) - loglik(lm, down, eps, seq)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g(i, j)) / std::max(std::abs(fd), std::abs(g(i, j))));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("train_switch initialization and first step") {
    const SoftmaxLm lm = tiny_lm();
    const auto pos = tokenize_all(lm.vocab(), {"x x", "x"});
    SwitchTrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 9;
    const SwitchMatrix init = train_switch(lm, pos, {}, cfg);
    std::mt19937_64 rng(9);
    CHECK(init.W == gaussian_matrix(4, 4, 1e-3, rng));
    CHECK(init.eps0 == 1e-3);

    // Adam's first step moves every entry by lr * sign(gradient).
    cfg.steps = 1;
    const SwitchMatrix one = train_switch(lm, pos, {}, cfg);
    Matrix g = Matrix::Zero(4, 4);
    for (auto seq : pos) {
        seq.push_back(lm.vocab().eos());
        g += loglik_grad_W(lm, init.W + init.W_dummy, cfg.eps0, seq);
    }
    const Matrix delta = one.W - init.W;
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 4; ++j) CHECK(delta(i, j) == doctest::Approx(cfg.lr * (g(i, j) > 0 ? 1 : -1)).epsilon(1e-3));

    CHECK_THROWS_AS(train_switch(lm, {}, {}, cfg), InputError);
}

TEST_CASE("train_switch moves mass toward the positive corpus") {
    const SoftmaxLm lm = tiny_lm();
    const Token t = lm.vocab().id("y");
    const std::vector<TokenSeq> pos(20, TokenSeq{t});
    SwitchTrainConfig cfg;
    cfg.steps = 200;
    cfg.seed = 2;
    SwitchTrainConfig none = cfg;
    none.steps = 0;
    const SwitchMatrix before = train_switch(lm, pos, {}, none);
    const SwitchMatrix after = train_switch(lm, pos, {}, cfg);
    const double p0 = switched_conditional(lm, before.W + before.W_dummy, cfg.eps0, TokenSeq{})(t);
    const double p1 = switched_conditional(lm, after.W + after.W_dummy, cfg.eps0, TokenSeq{})(t);
    CHECK(p1 > p0);

    const auto x = tokenize_all(lm.vocab(), {"x x y", "x", "x x"});
    const auto y = tokenize_all(lm.vocab(), {"y y x", "y", "y y"});
    const SwitchMatrix sym = train_switch(lm, x, x, cfg);
    const SwitchMatrix asym = train_switch(lm, x, y, cfg);
    CHECK(sym.W.norm() < asym.W.norm());

    const SwitchMatrix again = train_switch(lm, x, y, cfg);
    CHECK(again.W == asym.W);
    CHECK(again.W_dummy == asym.W_dummy);
}

TEST_CASE("nucleus selection") {
    Vector p(4);
    p << 0.2, 0.4, 0.2, 0.2;
    CHECK(nucleus(p, 1e-9) == std::vector<Token>{1});
    CHECK(nucleus(p, 0.5) == std::vector<Token>{1, 0});
    CHECK(nucleus(p, 1.0).size() == 4);
    CHECK(nucleus(p, 0.6) == std::vector<Token>{1, 0});
}

TEST_CASE("decode") {
    const SoftmaxLm lm = tiny_lm();
    std::mt19937_64 rng(3);
    SwitchMatrix sw;
    sw.W = gaussian_matrix(4, 4, 1.0, rng);

    DecodeConfig greedy;
    greedy.top_p = 1e-12;
    greedy.num_samples = 3;
    greedy.max_tokens = 6;
    const auto g = decode(lm, sw, greedy);
    const double eps = greedy.k * sw.eps0;
    for (const auto& seq : g) {
        CHECK(seq == g.front());
        TokenSeq prefix;
        for (Token t : seq) {
            const Vector p = switched_conditional(lm, sw, eps, prefix);
            Eigen::Index best;
            p.maxCoeff(&best);
            CHECK(t == best);
            prefix.push_back(t);
        }
    }

    DecodeConfig cfg;
    cfg.num_samples = 50;
    cfg.seed = 7;
    const auto a = decode(lm, sw, cfg);
    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto b = decode(lm, sw, cfg);
    omp_set_num_threads(threads);
    CHECK(a == b);
    for (const auto& s : a) {
        CHECK(!s.empty());
        CHECK(static_cast<int>(s.size()) <= cfg.max_tokens);
        for (std::size_t i = 0; i + 1 < s.size(); ++i) CHECK(s[i] != lm.vocab().eos());
    }

    DecodeConfig bad;
    bad.top_p = 0.0;
    CHECK_THROWS_AS(decode(lm, sw, bad), InputError);
}

TEST_CASE("decode at k = 0 samples the base model") {
    const SoftmaxLm lm = tiny_lm();
    SwitchMatrix sw;
    sw.W = Matrix::Identity(4, 4) * 50.0;
    DecodeConfig cfg;
    cfg.k = 0.0;
    cfg.top_p = 1.0;
    cfg.num_samples = 10000;
    cfg.max_tokens = 2;
    cfg.seed = 123;
    const auto samples = decode(lm, sw, cfg);
    const auto V = lm.vocab_size();
    const Vector first = lm.conditional({});
    Vector second = Vector::Zero(V);
    for (Eigen::Index a = 0; a < V; ++a)
        if (a != lm.vocab().eos()) second += first(a) * lm.conditional(TokenSeq{static_cast<Token>(a)});
    Vector f1 = Vector::Zero(V), f2 = Vector::Zero(V);
    for (const auto& s : samples) {
        f1(s[0]) += 1;
        if (s.size() > 1) f2(s[1]) += 1;
    }
    const double n = static_cast<double>(samples.size());
    for (Eigen::Index o = 0; o < V; ++o) {
        const double s1 = std::sqrt(first(o) * (1 - first(o)) / n);
        const double s2 = std::sqrt(second(o) * (1 - second(o)) / n);
        CHECK(std::abs(f1(o) / n - first(o)) <= 3 * s1);
        CHECK(std::abs(f2(o) / n - second(o)) <= 3 * s2);
    }
}

TEST_CASE("compose") {
    const SoftmaxLm lm = tiny_lm();
    std::mt19937_64 rng(4);
    const Matrix W1 = gaussian_matrix(4, 4, 1.0, rng);
    const Matrix W2 = gaussian_matrix(4, 4, 1.0, rng);
    CHECK(compose({{W1, 0.3}}).W == 0.3 * W1);
    const SwitchMatrix zero = compose({{W1, 0.3}, {-W1, 0.3}});
    CHECK(zero.W.cwiseAbs().maxCoeff() == 0.0);
    CHECK((switched_conditional(lm, zero, 1.0, TokenSeq{0}).array() == lm.conditional(TokenSeq{0}).array()).all());

    const SwitchMatrix both = compose({{W1, 0.2}, {W2, 0.5}});
    const Matrix summed = 0.2 * W1 + 0.5 * W2;
    for (Token a = 0; a < static_cast<Token>(lm.vocab_size()); ++a)
        CHECK((switched_conditional(lm, both, 1.0, TokenSeq{a}).array() ==
               switched_conditional(lm, summed, 1.0, TokenSeq{a}).array())
                  .all());
    DecodeConfig cfg;
    cfg.k = 1.0;
    cfg.num_samples = 5;
    SwitchMatrix pre;
    pre.W = summed;
    pre.eps0 = 1.0;
    CHECK(decode(lm, both, cfg) == decode(lm, pre, cfg));
    CHECK_THROWS_AS(compose({{W1, 1.0}, {Matrix::Zero(3, 3), 1.0}}), InputError);
}

TEST_CASE("linearity bounds on the tiny model") {
    const SoftmaxLm lm = tiny_lm();
    const auto x = tokenize_all(lm.vocab(), {"x x y", "x", "x x"});
    const auto y = tokenize_all(lm.vocab(), {"y y x", "y", "y y"});
    SwitchTrainConfig cfg;
    cfg.steps = 300;
    const SwitchMatrix s1 = train_switch(lm, x, y, cfg);
    cfg.seed = 1;
    const SwitchMatrix s2 = train_switch(lm, y, x, cfg);

    const double eps = kDefaultEps0;
    CHECK(theorem2_check(lm, s1.W, eps, 0.0, 3).lhs == 0.0);
    CHECK(theorem2_check(lm, s1.W, eps, 1.0, 3).lhs == 0.0);
    for (double k : {-1.0, -0.5, 0.25, 0.5, 0.75, 1.5, 2.0}) {
        const BoundCheck r = theorem2_check(lm, s1.W, eps, k, 3);
        CHECK(r.pass);
        CHECK(r.lhs > 0.0);
    }

    CHECK(theorem3_check(lm, s1.W, Matrix::Zero(4, 4), eps, 3).lhs == 0.0);
    CHECK(theorem3_check(lm, Matrix::Zero(4, 4), s2.W, eps, 3).lhs == 0.0);
    CHECK(theorem3_check(lm, Matrix::Zero(4, 4), Matrix::Zero(4, 4), eps, 3).lhs == 0.0);
    const BoundCheck full = theorem3_check(lm, s1.W, s2.W, eps, 3);
    const BoundCheck half = theorem3_check(lm, s1.W, s2.W, eps / 2, 3);
    CHECK(full.pass);
    CHECK(half.pass);
    CHECK(half.lhs <= full.lhs);

    for (double e : {0.0, eps, 10 * eps}) {
        const auto dist = enumerate_seq_dist(SwitchedLm(lm, s1.W, e), 3);
        CHECK(std::abs(std::accumulate(dist.begin(), dist.end(), 0.0) - 1.0) < 1e-9);
    }
}

TEST_CASE("ablation sweep") {
    const SoftmaxLm lm = tiny_lm();
    std::mt19937_64 rng(8);
    SwitchMatrix sw;
    sw.W = gaussian_matrix(4, 4, 1.0, rng);
    const Token y = lm.vocab().id("y");
    const SweepMetric frac_y = [&](const std::vector<std::vector<TokenSeq>>& gens) {
        double hit = 0, total = 0;
        for (const auto& per : gens)
            for (const auto& s : per)
                for (Token t : s) {
                    hit += t == y;
                    total += 1;
                }
        return total > 0 ? hit / total : 0.0;
    };
    DecodeConfig cfg;
    cfg.num_samples = 20;
    const std::vector<TokenSeq> prompts{{}, {lm.vocab().id("x")}};
    const auto rows = ablation_sweep(lm, sw, {0.0, 2.0, 2.0}, prompts, cfg, frac_y);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].metric == rows[2].metric);
    CHECK(rows[1].perplexity == rows[2].perplexity);

    SwitchMatrix none;
    none.W = Matrix::Zero(4, 4);
    std::vector<std::vector<TokenSeq>> base;
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        DecodeConfig c = cfg;
        c.seed = cfg.seed + j * cfg.num_samples;
        base.push_back(decode(lm, none, c, prompts[j]));
    }
    CHECK(rows[0].metric == frac_y(base));
    CHECK(sweep_csv(rows).rfind("k,metric,perplexity\n", 0) == 0);
}
