#pragma once

#include <string>
#include <vector>

#include "lmswitch/common.hpp"
#include "lmswitch/eval.hpp"
#include "lmswitch/lm.hpp"

namespace lmswitch {

struct SvdDecomposition {
    Matrix U;
    Vector S;  // nonincreasing
    Matrix Vt;

    double reconstruction_error(const Matrix& W) const;
};

SvdDecomposition svd_directions(const Matrix& W);

struct InfluencedTokens {
    std::vector<Token> top;
    std::vector<Token> bottom;
};

/// Ranks tokens by direction . E(:, t); top holds the k largest, bottom the k
/// smallest (most negative first). Equal scores are ordered by token id.
InfluencedTokens top_influenced_tokens(const Vector& direction, const Matrix& E, int k = 20);

struct DirectionReport {
    int row = 0;
    double singular_value = 0.0;
    std::vector<std::string> top;
    std::vector<std::string> bottom;
    bool discarded = false;  // too many special tokens in the top list
    // Only meaningful for retained rows.
    bool keyword_is_top = true;
    bool tie = false;
    double top_score = 0.0;
    double bottom_score = 0.0;

    const std::vector<std::string>& keywords() const { return keyword_is_top ? top : bottom; }
};

struct InterpretConfig {
    int rows = 9;
    int k = 20;
    double max_special_fraction = 0.5;
};

/// Inspects the leading rows of Vt of the switch against the LM's embeddings
/// and lets the scorer decide which side of each direction carries the
/// keywords.
std::vector<DirectionReport> interpret_switch(const Matrix& W, const SoftmaxLm& lm, const Scorer& scorer,
                                              const InterpretConfig& cfg = {});

}  // namespace lmswitch
