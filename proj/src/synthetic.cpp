#include "lmswitch/synthetic.hpp"

#include <random>

namespace lmswitch {

std::map<std::string, double> DetoxCorpus::lexicon() const {
    std::map<std::string, double> out;
    for (const auto& w : toxic_lexicon) out[w] = 1.0;
    return out;
}

namespace {

class SentenceSource {
public:
    SentenceSource(const DetoxConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {
        std::uniform_int_distribution<int> pick(0, cfg.neutral_words - 1);
        next_.resize(static_cast<std::size_t>(cfg.neutral_words));
        for (auto& row : next_)
            for (int j = 0; j < cfg.successors; ++j) row.push_back(pick(rng));
    }

    std::string sentence(bool toxic, const DetoxCorpus& c) {
        std::uniform_int_distribution<int> len(cfg_.min_length, cfg_.max_length);
        std::uniform_int_distribution<int> start(0, cfg_.neutral_words - 1);
        std::uniform_int_distribution<int> succ(0, cfg_.successors - 1);
        std::uniform_int_distribution<int> tox(0, cfg_.toxic_words - 1);
        std::bernoulli_distribution swap(cfg_.toxic_rate);
        int state = start(rng_);
        std::string out;
        for (int i = len(rng_); i > 0; --i) {
            if (!out.empty()) out.push_back(' ');
            if (toxic && swap(rng_)) {
                out += c.toxic_lexicon[static_cast<std::size_t>(tox(rng_))];
            } else {
                out += c.neutral[static_cast<std::size_t>(state)];
            }
            state = next_[static_cast<std::size_t>(state)][static_cast<std::size_t>(succ(rng_))];
        }
        return out;
    }

private:
    const DetoxConfig& cfg_;
    std::mt19937_64& rng_;
    std::vector<std::vector<int>> next_;
};

}  // namespace

DetoxCorpus make_detox_corpus(const DetoxConfig& cfg) {
    if (cfg.toxic_words < 1 || cfg.neutral_words < 1 || cfg.successors < 1 || cfg.min_length < 1 ||
        cfg.max_length < cfg.min_length || cfg.corpus_sentences < 1 || cfg.labeled_sentences < 2 || cfg.prompts < 1)
        throw InputError("invalid synthetic corpus configuration");
    DetoxCorpus c;
    for (int i = 0; i < cfg.toxic_words; ++i) c.toxic_lexicon.push_back("tox" + std::to_string(i));
    for (int i = 0; i < cfg.neutral_words; ++i) c.neutral.push_back("w" + std::to_string(i));

    std::mt19937_64 rng(cfg.seed);
    SentenceSource src(cfg, rng);
    std::bernoulli_distribution toxic_line(cfg.corpus_toxic_fraction);
    for (int i = 0; i < cfg.corpus_sentences; ++i) {
        const bool toxic = toxic_line(rng);
        c.corpus.push_back(src.sentence(toxic, c));
        c.corpus_labels.push_back(toxic ? -1 : 1);
    }
    for (int i = 0; i < cfg.labeled_sentences / 2; ++i) {
        c.clean.push_back(src.sentence(false, c));
        c.toxic.push_back(src.sentence(true, c));
    }
    // single-word prompts drawn from the neutral words
    std::uniform_int_distribution<int> pick(0, cfg.neutral_words - 1);
    for (int i = 0; i < cfg.prompts; ++i) c.prompts.push_back(c.neutral[static_cast<std::size_t>(pick(rng))]);
    return c;
}

}  // namespace lmswitch
