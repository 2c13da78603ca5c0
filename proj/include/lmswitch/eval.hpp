#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>

#include "lmswitch/common.hpp"
#include "lmswitch/lm.hpp"

namespace lmswitch {

inline constexpr const char* kScorerUrlEnv = "SWITCH_SCORER_URL";

/// Text scorer returning values in [0, 1]. Lexicon mode averages per-token
/// weights (absent tokens weigh 0); http mode POSTs {"text": ...} and expects
/// {"score": x}.
struct Scorer {
    enum class Mode { Lexicon, Http };

    Mode mode = Mode::Lexicon;
    std::map<std::string, double> lexicon;
    std::string endpoint;
    std::chrono::milliseconds timeout{5000};
    int max_retries = 2;
    int max_concurrency = 4;
    // Use the lexicon when the endpoint is unreachable.
    bool lexicon_fallback = false;

    static Scorer from_lexicon(std::map<std::string, double> lexicon);
    static Scorer from_endpoint(std::string url);
};

/// Explicit URL if given, else the SWITCH_SCORER_URL environment variable.
std::optional<std::string> resolve_scorer_url(const std::optional<std::string>& configured);

double score_text(const Scorer& scorer, const std::string& text);

/// Scores texts with up to scorer.max_concurrency requests in flight; the
/// result is indexed like the input.
std::vector<double> score_texts(const Scorer& scorer, const std::vector<std::string>& texts);

struct GroupChoice {
    bool chose_a = true;
    bool tie = false;
    double score_a = 0.0;
    double score_b = 0.0;
};

/// Scores each group joined into one text and picks the higher one; ties go to
/// group a with the tie flag set.
GroupChoice classify_group(const Scorer& scorer, const std::vector<std::string>& group_a,
                           const std::vector<std::string>& group_b);

/// Distinct k-grams over total k-grams across all texts (0 if none).
double dist_k(const std::vector<std::string>& texts, int k);

struct ToxicityMetrics {
    double avg_max = 0.0;
    double prob = 0.0;
};

/// scores[p] holds the generation scores for prompt p.
ToxicityMetrics toxicity_metrics(const std::vector<std::vector<double>>& scores, double threshold = 0.5);

struct ToxicityReport {
    double avg_max_toxicity = 0.0;
    double toxicity_prob = 0.0;
    double dist1 = 0.0;
    double dist2 = 0.0;
    double dist3 = 0.0;
    double output_ppl = 1.0;
};

/// Scores every generation (outer index = prompt) and fills the report;
/// output_ppl is passed through from the caller.
ToxicityReport evaluate_generations(const Scorer& scorer, const std::vector<std::vector<std::string>>& texts,
                                    double output_ppl, double threshold = 0.5);

/// Scores decoded samples (outer index = prompt) on their text without
/// <bos>/<eos> and aggregates them with toxicity_metrics.
ToxicityMetrics generation_toxicity(const Scorer& scorer, const Vocab& vocab,
                                    const std::vector<std::vector<TokenSeq>>& generations, double threshold = 0.5);

}  // namespace lmswitch
