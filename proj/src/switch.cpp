#include "lmswitch/switch.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <omp.h>

#include "lmswitch/kernels.hpp"
#include "lmswitch/linalg.hpp"
#include "lmswitch/optim.hpp"

namespace lmswitch {

double SwitchMatrix::lambda_max() const { return spectral_norm(W); }

void SwitchMatrix::validate() const {
    if (W.rows() != W.cols()) throw InputError("switch matrix must be square");
    if (W_dummy.size() != 0 && (W_dummy.rows() != W.rows() || W_dummy.cols() != W.cols()))
        throw InputError("dummy switch must match the switch shape");
    if (!(eps0 > 0.0)) throw InputError("eps0 must be positive");
    if (!all_finite(W)) throw InputError("switch matrix has non-finite entries");
}

void SwitchTrainConfig::validate() const {
    if (!(lr > 0.0)) throw InputError("switch learning rate must be positive");
    if (steps < 0) throw InputError("switch training steps must be non-negative");
    if (!(init_var >= 0.0)) throw InputError("init_var must be non-negative");
    if (batch < 0) throw InputError("batch must be non-negative");
    if (!(eps0 > 0.0)) throw InputError("eps0 must be positive");
}

void DecodeConfig::validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InputError("top_p must lie in (0, 1]");
    if (max_tokens < 1) throw InputError("max_tokens must be at least 1");
    if (num_samples < 0) throw InputError("num_samples must be non-negative");
    if (!std::isfinite(k)) throw InputError("switch multiplier k must be finite");
}

namespace {

void check_switch_dim(const SoftmaxLm& lm, const Matrix& W) {
    if (W.rows() != lm.dim() || W.cols() != lm.dim())
        throw InputError("switch is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                         " but the LM has dimension " + std::to_string(lm.dim()));
}

// The shared code path for every switched probability computation.
Vector switched_probs(const Matrix& E, const Vector& c, const Matrix& W, double eps) {
    if (eps == 0.0) return softmax(E.transpose() * c);
    const Vector shifted = c + eps * (W.transpose() * c);
    return softmax(E.transpose() * shifted);
}

}  // namespace

Vector switched_conditional(const SoftmaxLm& lm, const Matrix& W, double eps, TokenSpan prefix) {
    check_switch_dim(lm, W);
    return switched_probs(lm.E(), lm.context(prefix), W, eps);
}

Vector switched_conditional(const SoftmaxLm& lm, const SwitchMatrix& sw, double eps, TokenSpan prefix) {
    return switched_conditional(lm, sw.W, eps, prefix);
}

SwitchedLm::SwitchedLm(const SoftmaxLm& lm, Matrix W, double eps) : lm_(&lm), W_(std::move(W)), eps_(eps) {
    check_switch_dim(lm, W_);
}

Vector SwitchedLm::conditional(TokenSpan prefix) const { return switched_probs(lm_->E(), lm_->context(prefix), W_, eps_); }

std::optional<MarkovTable> SwitchedLm::markov_table() const {
    const auto V = vocab_size();
    MarkovTable tab;
    tab.start = conditional({});
    tab.trans.resize(V, V);
    for (Eigen::Index a = 0; a < V; ++a)
        tab.trans.row(a) = switched_probs(lm_->E(), lm_->context_table().col(a), W_, eps_).transpose();
    return tab;
}

double loglik(const SoftmaxLm& lm, const Matrix& W, double eps, TokenSpan seq) {
    check_switch_dim(lm, W);
    double ll = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const Vector p = switched_probs(lm.E(), lm.context(seq.first(i)), W, eps);
        ll += std::log(p(seq[i]));
    }
    return ll;
}

Matrix loglik_grad_W(const SoftmaxLm& lm, const Matrix& W, double eps, TokenSpan seq) {
    check_switch_dim(lm, W);
    if (seq.empty()) throw InputError("loglik_grad_W needs a non-empty sequence");
    Matrix g = Matrix::Zero(W.rows(), W.cols());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const Vector c = lm.context(seq.first(i));
        const Vector p = switched_probs(lm.E(), c, W, eps);
        const Vector diff = lm.E().col(seq[i]) - lm.E() * p;
        g += c * diff.transpose();
    }
    return eps * g;
}

// --- training ---------------------------------------------------------------

namespace {

// Order-1 sufficient statistics: N(a, b) counts of context a followed by b
// over BOS x EOS for the selected sequences.
Matrix context_counts(const SoftmaxLm& lm, const std::vector<TokenSeq>& seqs, const std::vector<std::size_t>& pick) {
    const auto V = lm.vocab_size();
    Matrix N = Matrix::Zero(V, V);
    const Token bos = lm.vocab().bos(), eos = lm.vocab().eos();
    for (std::size_t idx : pick) {
        Token prev = bos;
        for (Token t : seqs[idx]) {
            if (t < 0 || t >= V) throw InputError("token id " + std::to_string(t) + " out of range");
            N(prev, t) += 1.0;
            prev = t;
        }
        N(prev, eos) += 1.0;
    }
    return N;
}

// Log-likelihood under switch eps * Wt and its gradient with respect to Wt:
// eps * C Res E^T with Res(a, :) = N(a, :) - n_a P'(. | a).
std::pair<double, Matrix> counts_objective(const SoftmaxLm& lm, const Matrix& N, const Matrix& Wt, double eps) {
    const auto V = lm.vocab_size();
    const Matrix& C = lm.context_table();
    Matrix Res = Matrix::Zero(V, V);
    double ll = 0.0;
    for (Eigen::Index a = 0; a < V; ++a) {
        const double n = N.row(a).sum();
        if (n == 0.0) continue;
        const Vector p = switched_probs(lm.E(), C.col(a), Wt, eps);
        Res.row(a) = N.row(a) - n * p.transpose();
        for (Eigen::Index b = 0; b < V; ++b)
            if (N(a, b) != 0.0) ll += N(a, b) * std::log(p(b));
    }
    return {ll, eps * (C * Res * lm.E().transpose())};
}

class BatchCursor {
public:
    BatchCursor(std::size_t n, int batch, std::mt19937_64& rng) : order_(n), batch_(batch) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (batch_ > 0) std::shuffle(order_.begin(), order_.end(), rng);
    }
    std::vector<std::size_t> next() {
        if (batch_ <= 0 || static_cast<std::size_t>(batch_) >= order_.size()) return order_;
        std::vector<std::size_t> out;
        for (int i = 0; i < batch_; ++i) {
            out.push_back(order_[pos_]);
            pos_ = (pos_ + 1) % order_.size();
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    int batch_;
    std::size_t pos_ = 0;
};

}  // namespace

SwitchMatrix train_switch(const SoftmaxLm& lm, const std::vector<TokenSeq>& pos, const std::vector<TokenSeq>& neg,
                          const SwitchTrainConfig& cfg) {
    cfg.validate();
    if (pos.empty()) throw InputError("switch training needs a non-empty positive corpus");
    const auto d = lm.dim();
    std::mt19937_64 rng(cfg.seed);

    SwitchMatrix sw;
    sw.eps0 = cfg.eps0;
    sw.W = gaussian_matrix(d, d, cfg.init_var, rng);
    sw.W_dummy = gaussian_matrix(d, d, cfg.init_var, rng);

    BatchCursor pos_cursor(pos.size(), cfg.batch, rng);
    BatchCursor neg_cursor(neg.size(), cfg.batch, rng);
    Adam adam_w(cfg.lr, d, d), adam_dummy(cfg.lr, d, d);

    for (int step = 0; step < cfg.steps; ++step) {
        const Matrix Npos = context_counts(lm, pos, pos_cursor.next());
        auto [ll, g_pos] = counts_objective(lm, Npos, sw.W + sw.W_dummy, cfg.eps0);
        Matrix grad_w = g_pos;
        Matrix grad_dummy = g_pos;
        if (!neg.empty()) {
            const Matrix Nneg = context_counts(lm, neg, neg_cursor.next());
            auto [ll_neg, g_neg] = counts_objective(lm, Nneg, -sw.W + sw.W_dummy, cfg.eps0);
            ll += ll_neg;
            grad_w -= g_neg;
            grad_dummy += g_neg;
        }
        if (!std::isfinite(ll)) throw DivergenceError("switch objective is not finite", step);
        // Adam descends, so hand it the negated ascent direction.
        adam_w.step(sw.W, -grad_w);
        adam_dummy.step(sw.W_dummy, -grad_dummy);
        if (!all_finite(sw.W) || !all_finite(sw.W_dummy)) throw DivergenceError("switch parameters are not finite", step);
    }
    return sw;
}

// --- decoding ---------------------------------------------------------------

std::vector<Token> nucleus(const Vector& probs, double top_p) {
    std::vector<Token> order(static_cast<std::size_t>(probs.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Token a, Token b) { return probs(a) > probs(b); });
    double mass = 0.0;
    std::size_t keep = 0;
    while (keep < order.size()) {
        mass += probs(order[keep++]);
        if (mass >= top_p) break;
    }
    order.resize(keep);
    return order;
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

TokenSeq sample_one(const SoftmaxLm& lm, const Matrix& W, double eps, const DecodeConfig& cfg, TokenSpan prompt,
                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    TokenSeq context(prompt.begin(), prompt.end());
    TokenSeq out;
    const Token eos = lm.vocab().eos();
    for (int t = 0; t < cfg.max_tokens; ++t) {
        const Vector p = switched_probs(lm.E(), lm.context(context), W, eps);
        const std::vector<Token> keep = nucleus(p, cfg.top_p);
        double total = 0.0;
        for (Token o : keep) total += p(o);
        const double u = uniform01(rng) * total;
        Token pick = keep.back();
        double acc = 0.0;
        for (Token o : keep) {
            acc += p(o);
            if (u < acc) {
                pick = o;
                break;
            }
        }
        out.push_back(pick);
        if (pick == eos) break;
        context.push_back(pick);
    }
    return out;
}

}  // namespace

std::vector<TokenSeq> decode(const SoftmaxLm& lm, const SwitchMatrix& sw, const DecodeConfig& cfg, TokenSpan prompt) {
    cfg.validate();
    check_switch_dim(lm, sw.W);
    const double scale = cfg.scale_override.value_or(sw.decode_scale);
    const double eps = cfg.k * sw.eps0 * scale;
    std::vector<TokenSeq> out(static_cast<std::size_t>(cfg.num_samples));
#pragma omp parallel for schedule(dynamic, 4)
    for (int i = 0; i < cfg.num_samples; ++i)
        out[static_cast<std::size_t>(i)] = sample_one(lm, sw.W, eps, cfg, prompt, cfg.seed + static_cast<std::uint64_t>(i));
    return out;
}

SwitchMatrix compose(const std::vector<std::pair<Matrix, double>>& switches) {
    if (switches.empty()) throw InputError("compose needs at least one switch");
    SwitchMatrix out;
    out.eps0 = 1.0;
    out.W = switches.front().second * switches.front().first;
    for (std::size_t i = 1; i < switches.size(); ++i) {
        const auto& [W, eps] = switches[i];
        if (W.rows() != out.W.rows() || W.cols() != out.W.cols()) throw InputError("composed switches differ in shape");
        out.W += eps * W;
    }
    out.W_dummy = Matrix::Zero(out.W.rows(), out.W.cols());
    return out;
}

// --- linearity bounds ---------------------------------------------------------

BoundCheck theorem2_check(const SoftmaxLm& lm, const Matrix& W, double eps, double k, int L) {
    check_switch_dim(lm, W);
    const auto base = enumerate_seq_dist(lm, L);
    const auto unit = enumerate_seq_dist(SwitchedLm(lm, W, eps), L);
    const auto scaled = enumerate_seq_dist(SwitchedLm(lm, W, k * eps), L);
    BoundCheck out;
    // P_k - P_0 - k (P_1 - P_0): exactly zero at k = 0 and k = 1.
    out.lhs = kernels::chunked_sum_parallel(base.size(), [&](std::size_t i) {
        return std::abs((scaled[i] - base[i]) - k * (unit[i] - base[i]));
    });
    const double lambda = spectral_norm(W);
    out.bound = 2.0 * std::abs(k * (1.0 - k)) * eps * eps * L * L * lambda * std::expm1(lambda);
    out.pass = out.lhs <= out.bound + 1e-12;
    return out;
}

BoundCheck theorem3_check(const SoftmaxLm& lm, const Matrix& W1, const Matrix& W2, double eps, int L) {
    check_switch_dim(lm, W1);
    check_switch_dim(lm, W2);
    const auto base = enumerate_seq_dist(lm, L);
    const auto p1 = enumerate_seq_dist(SwitchedLm(lm, W1, eps), L);
    const auto p2 = enumerate_seq_dist(SwitchedLm(lm, W2, eps), L);
    const auto p12 = enumerate_seq_dist(SwitchedLm(lm, W1 + W2, eps), L);
    BoundCheck out;
    // (P_12 - P_1) - (P_2 - P_0): exactly zero when either switch is zero.
    out.lhs = kernels::chunked_sum_parallel(base.size(), [&](std::size_t i) {
        return std::abs((p12[i] - p1[i]) - (p2[i] - base[i]));
    });
    const double D = std::max(spectral_norm(W1), spectral_norm(W2));
    out.bound = 10.0 * eps * static_cast<double>(lm.dim()) * L * L * D * D;
    out.pass = out.lhs <= out.bound + 1e-12;
    return out;
}

// --- sweep ----------------------------------------------------------------------

double generation_perplexity(const SoftmaxLm& lm, const std::vector<TokenSeq>& prompts,
                             const std::vector<std::vector<TokenSeq>>& generations) {
    if (prompts.size() != generations.size()) throw InputError("one generation list per prompt is required");
    double nll = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        for (const auto& gen : generations[j]) {
            TokenSeq context = prompts[j];
            for (Token t : gen) {
                const double p = lm.conditional(context)(t);
                if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
                nll -= std::log(p);
                ++count;
                context.push_back(t);
            }
        }
    }
    if (count == 0) return 1.0;
    return std::exp(nll / static_cast<double>(count));
}

std::vector<SweepRow> ablation_sweep(const SoftmaxLm& lm, const SwitchMatrix& sw, const std::vector<double>& ks,
                                     const std::vector<TokenSeq>& prompts, const DecodeConfig& cfg,
                                     const SweepMetric& metric) {
    std::vector<SweepRow> rows;
    for (double k : ks) {
        if (!std::isfinite(k)) throw InputError("sweep multipliers must be finite");
        DecodeConfig c = cfg;
        c.k = k;
        std::vector<std::vector<TokenSeq>> gens;
        gens.reserve(prompts.size());
        for (std::size_t j = 0; j < prompts.size(); ++j) {
            c.seed = cfg.seed + j * static_cast<std::uint64_t>(cfg.num_samples);
            gens.push_back(decode(lm, sw, c, prompts[j]));
        }
        rows.push_back({k, metric(gens), generation_perplexity(lm, prompts, gens)});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "k,metric,perplexity\n" << std::setprecision(17);
    for (const auto& r : rows) os << r.k << ',' << r.metric << ',' << r.perplexity << '\n';
    return os.str();
}

}  // namespace lmswitch
