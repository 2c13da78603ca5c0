#include "lmswitch/lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "lmswitch/kernels.hpp"
#include "lmswitch/linalg.hpp"

namespace lmswitch {

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// --- Vocab -----------------------------------------------------------------

Vocab Vocab::build(const std::vector<std::string>& corpus, std::size_t max_size) {
    if (corpus.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
    if (max_size < 1) throw InputError("max_size must be at least 1");
    std::map<std::string, long> counts;
    for (const auto& line : corpus)
        for (auto& w : split_words(line))
            if (w != kUnkToken && w != kBosToken && w != kEosToken) ++counts[w];

    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    // counts is already lexicographic, so a stable sort keeps ties in order.
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > max_size - 1) ranked.resize(max_size - 1);

    std::vector<std::string> tokens;
    tokens.reserve(ranked.size() + 3);
    for (auto& [w, c] : ranked) tokens.push_back(w);
    tokens.emplace_back(kUnkToken);
    tokens.emplace_back(kBosToken);
    tokens.emplace_back(kEosToken);
    return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.index_.emplace(v.tokens_[i], static_cast<Token>(i)).second)
            throw InputError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
    auto need = [&](std::string_view name) {
        auto it = v.index_.find(std::string(name));
        if (it == v.index_.end()) throw InputError("vocabulary lacks " + std::string(name));
        return it->second;
    };
    v.unk_ = need(kUnkToken);
    v.bos_ = need(kBosToken);
    v.eos_ = need(kEosToken);
    return v;
}

std::optional<Token> Vocab::find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Token Vocab::id(std::string_view word) const { return find(word).value_or(unk_); }

TokenSeq Vocab::tokenize(std::string_view text) const {
    TokenSeq out;
    for (const auto& w : split_words(text)) out.push_back(id(w));
    return out;
}

std::string Vocab::detokenize(TokenSpan seq) const {
    std::string out;
    for (Token t : seq) {
        if (!out.empty()) out.push_back(' ');
        out += token(t);
    }
    return out;
}

std::string Vocab::text(TokenSpan seq) const {
    std::string out;
    for (Token t : seq) {
        if (t == bos_ || t == eos_) continue;
        if (!out.empty()) out.push_back(' ');
        out += token(t);
    }
    return out;
}

std::uint64_t Vocab::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](unsigned char b) {
        h ^= b;
        h *= 1099511628211ULL;
    };
    for (const auto& t : tokens_) {
        for (char c : t) mix(static_cast<unsigned char>(c));
        mix('\n');
    }
    return h;
}

// --- models ----------------------------------------------------------------

SoftmaxLm::SoftmaxLm(Vocab vocab, Matrix E, Matrix context)
    : vocab_(std::move(vocab)), E_(std::move(E)), context_(std::move(context)) {
    const auto V = static_cast<Eigen::Index>(vocab_.size());
    if (E_.cols() != V || context_.cols() != V || context_.rows() != E_.rows())
        throw InputError("softmax LM matrices do not match the vocabulary size");
}

Token SoftmaxLm::context_token(TokenSpan prefix) const { return prefix.empty() ? vocab_.bos() : prefix.back(); }

Vector SoftmaxLm::context(TokenSpan prefix) const {
    const Token t = context_token(prefix);
    if (t < 0 || t >= context_.cols()) throw InputError("token id " + std::to_string(t) + " out of range");
    return context_.col(t);
}

Vector SoftmaxLm::conditional(TokenSpan prefix) const { return softmax(E_.transpose() * context(prefix)); }

std::optional<MarkovTable> SoftmaxLm::markov_table() const {
    MarkovTable tab;
    tab.start = conditional({});
    tab.trans.resize(vocab_size(), vocab_size());
    for (Eigen::Index a = 0; a < vocab_size(); ++a)
        tab.trans.row(a) = softmax(E_.transpose() * Vector(context_.col(a))).transpose();
    return tab;
}

double SoftmaxLm::max_embedding_norm() const { return E_.colwise().norm().maxCoeff(); }
double SoftmaxLm::max_context_norm() const { return context_.colwise().norm().maxCoeff(); }

MarkovLm::MarkovLm(MarkovTable table) : table_(std::move(table)) {
    if (table_.trans.rows() != table_.trans.cols() || table_.start.size() != table_.trans.cols())
        throw InputError("Markov table shapes are inconsistent");
}

Vector MarkovLm::conditional(TokenSpan prefix) const {
    if (prefix.empty()) return table_.start;
    const Token t = prefix.back();
    if (t < 0 || t >= table_.trans.rows()) throw InputError("token id " + std::to_string(t) + " out of range");
    return table_.trans.row(t).transpose();
}

// --- training --------------------------------------------------------------

Matrix bigram_counts(const std::vector<std::string>& corpus, const Vocab& vocab) {
    const auto V = static_cast<Eigen::Index>(vocab.size());
    Matrix N = Matrix::Zero(V, V);
    for (const auto& line : corpus) {
        Token prev = vocab.bos();
        for (Token t : vocab.tokenize(line)) {
            N(prev, t) += 1.0;
            prev = t;
        }
        N(prev, vocab.eos()) += 1.0;
    }
    return N;
}

double mean_log_likelihood(const SoftmaxLm& lm, const Matrix& counts) {
    double ll = 0.0;
    const double total = counts.sum();
    for (Eigen::Index a = 0; a < counts.rows(); ++a) {
        if (counts.row(a).sum() == 0.0) continue;
        const Vector logits = lm.E().transpose() * lm.context_table().col(a);
        const double mx = logits.maxCoeff();
        const double lse = mx + std::log((logits.array() - mx).exp().sum());
        for (Eigen::Index b = 0; b < counts.cols(); ++b)
            if (counts(a, b) != 0.0) ll += counts(a, b) * (logits(b) - lse);
    }
    return ll / total;
}

namespace {

void project_columns(Matrix& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double n = m.col(j).norm();
        if (n > 1.0) m.col(j) /= n;
    }
}

}  // namespace

SoftmaxLm train_base_lm(const std::vector<std::string>& corpus, const Vocab& vocab, const BaseLmConfig& cfg) {
    if (cfg.dim < 2) throw InputError("embedding dimension must be at least 2");
    if (cfg.epochs < 0) throw InputError("epochs must be non-negative");
    if (corpus.empty()) throw InputError("training corpus is empty");
    const auto V = static_cast<Eigen::Index>(vocab.size());
    std::mt19937_64 rng(cfg.seed);
    const double var = cfg.init_std * cfg.init_std;
    Matrix E = gaussian_matrix(cfg.dim, V, var, rng);
    Matrix C = gaussian_matrix(cfg.dim, V, var, rng);
    project_columns(E);
    project_columns(C);

    const Matrix N = bigram_counts(corpus, vocab);
    const Vector row_totals = N.rowwise().sum();
    const double total = N.sum();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // G(a, :) = N(a, :) - n_a softmax(E^T c_a): the per-context residual.
        Matrix G = Matrix::Zero(V, V);
        double ll = 0.0;
        for (Eigen::Index a = 0; a < V; ++a) {
            if (row_totals(a) == 0.0) continue;
            const Vector logits = E.transpose() * C.col(a);
            const Vector p = softmax(logits);
            G.row(a) = N.row(a) - row_totals(a) * p.transpose();
            for (Eigen::Index b = 0; b < V; ++b)
                if (N(a, b) != 0.0) ll += N(a, b) * std::log(p(b));
        }
        if (!std::isfinite(ll)) throw DivergenceError("base LM log-likelihood is not finite", epoch);
        const Matrix dE = (C * G) / total;
        const Matrix dC = (E * G.transpose()) / total;
        E += cfg.lr * dE;
        C += cfg.lr * dC;
        project_columns(E);
        project_columns(C);
        if (!all_finite(E) || !all_finite(C)) throw DivergenceError("base LM parameters are not finite", epoch);
    }
    SoftmaxLm lm(vocab, std::move(E), std::move(C));
    lm.set_trained(cfg.epochs > 0);
    return lm;
}

// --- enumeration and perplexity ----------------------------------------------

namespace {

std::size_t checked_count(std::size_t V, int L, std::size_t budget) {
    if (L < 1) throw InputError("sequence length must be at least 1");
    std::size_t total = 1;
    for (int t = 0; t < L; ++t) {
        if (total > budget / std::max<std::size_t>(V, 1))
            throw BudgetError("enumerating " + std::to_string(V) + "^" + std::to_string(L) +
                              " sequences exceeds the budget of " + std::to_string(budget));
        total *= V;
    }
    if (total > budget) throw BudgetError("enumeration exceeds the budget of " + std::to_string(budget));
    return total;
}

void enumerate_generic(const TokenModel& lm, int L, TokenSeq& prefix, double mass, std::vector<double>& out) {
    const Vector p = lm.conditional(prefix);
    if (static_cast<int>(prefix.size()) + 1 == L) {
        for (Eigen::Index o = 0; o < p.size(); ++o) out.push_back(mass * p(o));
        return;
    }
    for (Eigen::Index o = 0; o < p.size(); ++o) {
        prefix.push_back(static_cast<Token>(o));
        enumerate_generic(lm, L, prefix, mass * p(o), out);
        prefix.pop_back();
    }
}

}  // namespace

std::vector<double> enumerate_seq_dist(const TokenModel& lm, int L, std::size_t budget) {
    const auto V = static_cast<std::size_t>(lm.vocab_size());
    const std::size_t total = checked_count(V, L, budget);
    if (auto tab = lm.markov_table()) return kernels::markov_enumerate_parallel(tab->start, tab->trans, L);
    std::vector<double> out;
    out.reserve(total);
    TokenSeq prefix;
    enumerate_generic(lm, L, prefix, 1.0, out);
    return out;
}

double perplexity(const TokenModel& lm, const Vocab& vocab, const std::vector<TokenSeq>& sequences) {
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& seq : sequences) {
        for (std::size_t i = 0; i <= seq.size(); ++i) {
            const Token target = i < seq.size() ? seq[i] : vocab.eos();
            const Vector p = lm.conditional(TokenSpan(seq.data(), i));
            if (!(p(target) > 0.0)) return std::numeric_limits<double>::infinity();
            nll -= std::log(p(target));
            ++count;
        }
    }
    if (count == 0) throw InputError("perplexity of an empty corpus is undefined");
    return std::exp(nll / static_cast<double>(count));
}

double perplexity(const SoftmaxLm& lm, const std::vector<std::string>& corpus) {
    std::vector<TokenSeq> seqs;
    seqs.reserve(corpus.size());
    for (const auto& line : corpus) seqs.push_back(lm.vocab().tokenize(line));
    return perplexity(lm, lm.vocab(), seqs);
}

}  // namespace lmswitch
