#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "lmswitch/common.hpp"
#include "lmswitch/hmm.hpp"

namespace lmswitch {

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";

/// Lowercases and splits on whitespace.
std::vector<std::string> split_words(std::string_view text);

/// Dense token <-> id mapping. Regular tokens come first in descending corpus
/// frequency (ties lexicographic), so a regular token's id is its frequency
/// rank. Then come <unk>, <bos>, <eos>.
class Vocab {
public:
    Vocab() = default;

    /// Keeps at most (max_size - 1) regular words; <unk> takes the last slot,
    /// then <bos> and <eos> are appended.
    static Vocab build(const std::vector<std::string>& corpus, std::size_t max_size);

    /// Rebuilds a vocabulary from its token list (id = position). The three
    /// special tokens must be present.
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    std::optional<Token> find(std::string_view word) const;
    /// Id of `word`, or unk() when absent.
    Token id(std::string_view word) const;
    const std::string& token(Token id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    Token unk() const { return unk_; }
    Token bos() const { return bos_; }
    Token eos() const { return eos_; }
    bool is_special(Token t) const { return t == unk_ || t == bos_ || t == eos_; }

    TokenSeq tokenize(std::string_view text) const;
    std::string detokenize(TokenSpan seq) const;
    /// Like detokenize but drops <bos> and <eos>.
    std::string text(TokenSpan seq) const;

    /// FNV-1a over the token list; recorded alongside switches.
    std::uint64_t fingerprint() const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, Token> index_;
    Token unk_ = -1;
    Token bos_ = -1;
    Token eos_ = -1;
};

/// First-order token model: start distribution plus row-stochastic table
/// trans(a, b) = P(b | previous token a).
struct MarkovTable {
    Vector start;
    Matrix trans;
};

/// Anything that yields next-token distributions over a fixed vocabulary.
class TokenModel {
public:
    virtual ~TokenModel() = default;
    virtual Eigen::Index vocab_size() const = 0;
    virtual Vector conditional(TokenSpan prefix) const = 0;
    /// Models whose conditional depends only on the previous token expose
    /// their table so enumeration can use the fast kernels.
    virtual std::optional<MarkovTable> markov_table() const { return std::nullopt; }
};

/// Order-1 softmax LM: P(o | prefix) = softmax_o(c(last)^T e_o), with c(BOS)
/// used for the empty prefix. Columns of E and of the context table are kept
/// inside the unit ball.
class SoftmaxLm : public TokenModel {
public:
    SoftmaxLm() = default;
    SoftmaxLm(Vocab vocab, Matrix E, Matrix context);

    const Vocab& vocab() const { return vocab_; }
    const Matrix& E() const { return E_; }
    const Matrix& context_table() const { return context_; }
    Eigen::Index dim() const { return E_.rows(); }
    bool trained() const { return trained_; }
    void set_trained(bool t) { trained_ = t; }

    /// Contextual vector for the given prefix.
    Vector context(TokenSpan prefix) const;
    Token context_token(TokenSpan prefix) const;

    Eigen::Index vocab_size() const override { return E_.cols(); }
    Vector conditional(TokenSpan prefix) const override;
    std::optional<MarkovTable> markov_table() const override;

    double max_embedding_norm() const;
    double max_context_norm() const;

private:
    Vocab vocab_;
    Matrix E_;
    Matrix context_;
    bool trained_ = false;
};

/// Linear LM backed by an HMM's LM view; conditionals are normalized c^T E.
class LinearLm : public TokenModel {
public:
    explicit LinearLm(LmView view) : view_(std::move(view)) {}
    const LmView& view() const { return view_; }
    Eigen::Index vocab_size() const override { return view_.hmm().observations(); }
    Vector conditional(TokenSpan prefix) const override { return view_.conditional(prefix); }

private:
    LmView view_;
};

/// Wraps a Markov table as a model (used for hand-built fixtures and for
/// switched softmax models).
class MarkovLm : public TokenModel {
public:
    explicit MarkovLm(MarkovTable table);
    Eigen::Index vocab_size() const override { return table_.trans.cols(); }
    Vector conditional(TokenSpan prefix) const override;
    std::optional<MarkovTable> markov_table() const override { return table_; }

private:
    MarkovTable table_;
};

struct BaseLmConfig {
    int dim = 16;
    int epochs = 500;
    // The unit-ball projection keeps logits within [-1, 1], so steps can be large.
    double lr = 50.0;
    double init_std = 0.01;
    std::uint64_t seed = 0;
};

/// Full-batch gradient ascent on the mean per-token log-likelihood of the
/// corpus (BOS w_1 .. w_n EOS per line), projecting embeddings and contexts
/// back into the unit ball after every step.
SoftmaxLm train_base_lm(const std::vector<std::string>& corpus, const Vocab& vocab, const BaseLmConfig& cfg);

/// Bigram counts N(a, b) over BOS w_1 .. w_n EOS for every line.
Matrix bigram_counts(const std::vector<std::string>& corpus, const Vocab& vocab);

/// Mean per-token log-likelihood of a softmax LM under a bigram count table.
double mean_log_likelihood(const SoftmaxLm& lm, const Matrix& counts);

inline constexpr std::size_t kEnumerationBudget = 1'000'000;

/// Exact probabilities of all |V|^L sequences in lexicographic order.
std::vector<double> enumerate_seq_dist(const TokenModel& lm, int L, std::size_t budget = kEnumerationBudget);

/// exp(mean NLL per predicted token) over BOS w_1 .. w_n EOS for each line.
/// The model must be a SoftmaxLm since BOS/EOS framing needs a vocabulary.
double perplexity(const SoftmaxLm& lm, const std::vector<std::string>& corpus);
double perplexity(const TokenModel& lm, const Vocab& vocab, const std::vector<TokenSeq>& sequences);

}  // namespace lmswitch
