#include "lmswitch/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lmswitch/linalg.hpp"
#include "lmswitch/optim.hpp"

namespace lmswitch {

std::vector<std::string> anchor_vocab(const Vocab& v1, const Vocab& v2, int K, int min_anchors) {
    if (K < 0) throw InputError("anchor count must be non-negative");
    std::vector<std::pair<long, std::string>> shared;
    for (const auto& tok : v1.tokens())
        if (auto j = v2.find(tok)) shared.emplace_back(static_cast<long>(*v1.find(tok)) + *j, tok);
    if (static_cast<int>(shared.size()) < min_anchors)
        throw InsufficientAnchorsError("only " + std::to_string(shared.size()) + " shared tokens; need at least " +
                                       std::to_string(min_anchors));
    std::sort(shared.begin(), shared.end());
    if (static_cast<int>(shared.size()) > K) shared.resize(static_cast<std::size_t>(K));
    std::vector<std::string> out;
    out.reserve(shared.size());
    for (auto& [rank, tok] : shared) out.push_back(std::move(tok));
    return out;
}

Matrix anchor_embeddings(const SoftmaxLm& lm, const std::vector<std::string>& anchors) {
    Matrix out(lm.dim(), static_cast<Eigen::Index>(anchors.size()));
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const auto id = lm.vocab().find(anchors[i]);
        if (!id) throw InputError("anchor '" + anchors[i] + "' is not in the vocabulary");
        out.col(static_cast<Eigen::Index>(i)) = lm.E().col(*id);
    }
    return out;
}

EmbeddingMap fit_embedding_map(const Matrix& E1, const Matrix& E2, const FitConfig& cfg) {
    if (E1.cols() != E2.cols()) throw InputError("anchor embeddings must have one column per anchor in both models");
    if (E1.cols() == 0) throw InsufficientAnchorsError("no anchors to fit");
    std::mt19937_64 rng(cfg.seed);
    Matrix H = gaussian_matrix(E1.rows(), E2.rows(), cfg.init_var, rng);
    Adam adam(cfg.lr, H.rows(), H.cols());
    for (int step = 0; step < cfg.steps; ++step) {
        const Matrix R = H * E2 - E1;
        if (!all_finite(R)) throw DivergenceError("embedding map residual is not finite", step);
        adam.step(H, 2.0 * R * E2.transpose());
    }
    if (!all_finite(H)) throw DivergenceError("embedding map is not finite", cfg.steps);

    EmbeddingMap map;
    const Matrix oracle = E1 * pseudo_inverse(E2).value;
    map.H = std::move(H);
    map.anchor_count = static_cast<int>(E1.cols());
    map.fit_residual = (map.H * E2 - E1).norm();
    map.oracle_residual = (oracle * E2 - E1).norm();
    const double scale = oracle.norm();
    map.oracle_gap = scale > 0.0 ? (map.H - oracle).norm() / scale : map.H.norm();
    return map;
}

SwitchMatrix transfer_switch(const SwitchMatrix& sw, const EmbeddingMap& map) {
    if (sw.W.rows() != map.H.rows() || sw.W.cols() != map.H.rows())
        throw InputError("switch dimension does not match the source side of the embedding map");
    SwitchMatrix out;
    out.eps0 = sw.eps0;
    out.W = map.H.transpose() * sw.W * map.H;
    if (sw.W_dummy.size() != 0) out.W_dummy = map.H.transpose() * sw.W_dummy * map.H;
    out.decode_scale = kTransferDecodeScale;
    return out;
}

}  // namespace lmswitch
