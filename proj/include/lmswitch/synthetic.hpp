#pragma once

#include <map>
#include <string>
#include <vector>

#include "lmswitch/common.hpp"

namespace lmswitch {

struct DetoxConfig {
    int toxic_words = 20;
    int neutral_words = 177;
    int successors = 6;          // neutral Markov chain out-degree
    int corpus_sentences = 3000;
    double corpus_toxic_fraction = 0.3;
    int labeled_sentences = 1000;  // split evenly between clean and toxic
    double toxic_rate = 0.3;     // per-token chance of a toxic word in a toxic sentence
    int min_length = 6;
    int max_length = 12;
    int prompts = 50;
    std::uint64_t seed = 0;
};

/// Synthetic corpus with a planted toxic lexicon. Clean sentences walk a
/// sparse random Markov chain over neutral words; toxic sentences walk the
/// same chain but replace words with toxic ones at toxic_rate.
struct DetoxCorpus {
    std::vector<std::string> toxic_lexicon;
    std::vector<std::string> neutral;
    std::vector<std::string> corpus;  // mixed, for the base LM
    std::vector<int> corpus_labels;   // -1 for toxic lines
    std::vector<std::string> clean;   // labeled +1
    std::vector<std::string> toxic;   // labeled -1
    std::vector<std::string> prompts;

    std::map<std::string, double> lexicon() const;
};

DetoxCorpus make_detox_corpus(const DetoxConfig& cfg = {});

}  // namespace lmswitch
