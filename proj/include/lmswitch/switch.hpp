#pragma once

#include <functional>
#include <optional>
#include <string>

#include "lmswitch/common.hpp"
#include "lmswitch/lm.hpp"

namespace lmswitch {

inline constexpr double kDefaultEps0 = 1e-3;

struct SwitchMatrix {
    Matrix W;
    Matrix W_dummy;
    double eps0 = kDefaultEps0;
    // Advisory decode multiplier (e.g. 0.1 after transfer); decode applies it
    // unless the decode config overrides it.
    double decode_scale = 1.0;

    Eigen::Index dim() const { return W.rows(); }
    /// Spectral norm of W, the operative lambda_max of the linearity bounds.
    double lambda_max() const;
    void validate() const;
};

struct SwitchTrainConfig {
    double lr = 1e-2;
    int steps = 1000;
    double init_var = 1e-3;
    std::uint64_t seed = 0;
    // Sequences per step; 0 uses the whole corpus.
    int batch = 0;
    double eps0 = kDefaultEps0;

    void validate() const;
};

struct DecodeConfig {
    double k = 5.0;
    double top_p = 0.9;
    int max_tokens = 20;
    int num_samples = 1;
    std::uint64_t seed = 0;
    std::optional<double> scale_override;

    void validate() const;
};

/// softmax over o of c'^T e_o with c' = c + eps W^T c, i.e. the logits
/// c^T (I + eps W) e_o. eps == 0 returns lm.conditional(prefix) exactly.
Vector switched_conditional(const SoftmaxLm& lm, const Matrix& W, double eps, TokenSpan prefix);

/// Uses sw.W only (no dummy switch).
Vector switched_conditional(const SoftmaxLm& lm, const SwitchMatrix& sw, double eps, TokenSpan prefix);

/// M(eps W) as a token model. Its Markov table rows are computed by the same
/// code path as switched_conditional.
class SwitchedLm : public TokenModel {
public:
    SwitchedLm(const SoftmaxLm& lm, Matrix W, double eps);
    Eigen::Index vocab_size() const override { return lm_->vocab_size(); }
    Vector conditional(TokenSpan prefix) const override;
    std::optional<MarkovTable> markov_table() const override;

private:
    const SoftmaxLm* lm_;
    Matrix W_;
    double eps_;
};

/// Gradient of sum_i log P(seq_i | seq_<i, eps W) with respect to W:
/// eps sum_i c_i (e_{o_i} - E_{o ~ P}[e_o])^T.
Matrix loglik_grad_W(const SoftmaxLm& lm, const Matrix& W, double eps, TokenSpan seq);

/// sum_i log P(seq_i | seq_<i, eps W).
double loglik(const SoftmaxLm& lm, const Matrix& W, double eps, TokenSpan seq);

/// Adam on W and W_dummy maximizing
///   sum_pos log P(x | eps0 (W + W_dummy)) + sum_neg log P(x | eps0 (-W + W_dummy)).
/// Sequences are scored with EOS appended. An empty negative corpus drops the
/// second term.
SwitchMatrix train_switch(const SoftmaxLm& lm, const std::vector<TokenSeq>& pos, const std::vector<TokenSeq>& neg,
                          const SwitchTrainConfig& cfg);

/// Smallest set of tokens, in (probability desc, id asc) order, whose mass
/// reaches top_p.
std::vector<Token> nucleus(const Vector& probs, double top_p);

/// Samples cfg.num_samples continuations of `prompt` from M(k eps0 scale W),
/// whose conditionals are switched_conditional(lm, sw, k * eps0 * scale, .).
/// Sample i uses seed cfg.seed + i. A sampled EOS is kept as the final token
/// and ends the sample.
std::vector<TokenSeq> decode(const SoftmaxLm& lm, const SwitchMatrix& sw, const DecodeConfig& cfg,
                             TokenSpan prompt = {});

/// Sum of eps_i W_i as a switch with eps0 = 1 and zero dummy.
SwitchMatrix compose(const std::vector<std::pair<Matrix, double>>& switches);

struct BoundCheck {
    double lhs = 0.0;
    double bound = 0.0;
    bool pass = false;
};

/// L1 over all length-L sequences of P(.|k eps, W) - ((1 - k) P(.) + k P(.|eps, W))
/// against 2 |k (1 - k)| eps^2 L^2 lambda (e^lambda - 1).
BoundCheck theorem2_check(const SoftmaxLm& lm, const Matrix& W, double eps, double k, int L);

/// L1 over all length-L sequences of P(.|eps, W1 + W2) - (P(.|eps, W1) + P(.|eps, W2) - P(.))
/// against 10 eps d L^2 D^2 with D the larger spectral norm.
BoundCheck theorem3_check(const SoftmaxLm& lm, const Matrix& W1, const Matrix& W2, double eps, int L);

struct SweepRow {
    double k = 0.0;
    double metric = 0.0;
    double perplexity = 0.0;
};

/// Maps the generations for each prompt (outer index = prompt) to a metric.
using SweepMetric = std::function<double(const std::vector<std::vector<TokenSeq>>&)>;

/// For each k, decodes cfg.num_samples continuations of every prompt (prompt j
/// uses seeds starting at cfg.seed + j * num_samples), then reports the metric
/// and the base-LM perplexity of the generated tokens.
std::vector<SweepRow> ablation_sweep(const SoftmaxLm& lm, const SwitchMatrix& sw, const std::vector<double>& ks,
                                     const std::vector<TokenSeq>& prompts, const DecodeConfig& cfg,
                                     const SweepMetric& metric);

/// Base-LM perplexity of continuations given their prompts.
double generation_perplexity(const SoftmaxLm& lm, const std::vector<TokenSeq>& prompts,
                             const std::vector<std::vector<TokenSeq>>& generations);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace lmswitch
