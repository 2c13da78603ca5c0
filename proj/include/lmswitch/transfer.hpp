#pragma once

#include <string>

#include "lmswitch/common.hpp"
#include "lmswitch/lm.hpp"
#include "lmswitch/switch.hpp"

namespace lmswitch {

inline constexpr double kTransferDecodeScale = 0.1;

/// Linear map H (d_src x d_tgt) taking target-LM embeddings into the source
/// embedding space.
struct EmbeddingMap {
    Matrix H;
    int anchor_count = 0;
    double fit_residual = 0.0;     // ||H E2 - E1||_F
    double oracle_residual = 0.0;  // same for the closed-form least-squares H
    double oracle_gap = 0.0;       // ||H - H_lsq||_F / ||H_lsq||_F
};

/// Tokens present in both vocabularies, ranked by the sum of their ids (ids
/// are frequency ranks), ties by token text, truncated to K. Throws
/// InsufficientAnchorsError when fewer than `min_anchors` tokens are shared.
std::vector<std::string> anchor_vocab(const Vocab& v1, const Vocab& v2, int K, int min_anchors);

/// Embedding columns of `anchors` in the given LM.
Matrix anchor_embeddings(const SoftmaxLm& lm, const std::vector<std::string>& anchors);

struct FitConfig {
    double lr = 0.01;
    int steps = 5000;
    double init_var = 1e-3;
    std::uint64_t seed = 0;
};

/// Adam on ||H E2 - E1||_F^2 from a Gaussian start; also records the
/// closed-form minimizer E1 E2^+ as an oracle.
EmbeddingMap fit_embedding_map(const Matrix& E1_anchor, const Matrix& E2_anchor, const FitConfig& cfg = {});

/// W_tgt = H^T W H (and likewise for the dummy switch). The matrix is not
/// rescaled; decode_scale records the advisory 0.1 multiplier.
SwitchMatrix transfer_switch(const SwitchMatrix& sw, const EmbeddingMap& map);

}  // namespace lmswitch
