#include "lmswitch/interpret.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/SVD>

#include "lmswitch/linalg.hpp"

namespace lmswitch {

double SvdDecomposition::reconstruction_error(const Matrix& W) const {
    const Matrix back = U * S.asDiagonal() * Vt;
    const double scale = W.norm();
    return scale == 0.0 ? back.norm() : (back - W).norm() / scale;
}

SvdDecomposition svd_directions(const Matrix& W) {
    if (W.size() == 0) throw InputError("cannot decompose an empty matrix");
    if (!all_finite(W)) throw InputError("switch matrix has non-finite entries");
    Eigen::JacobiSVD<Matrix> svd(W, Eigen::ComputeFullU | Eigen::ComputeFullV);
    SvdDecomposition out;
    out.U = svd.matrixU();
    out.S = svd.singularValues();
    out.Vt = svd.matrixV().transpose();
    return out;
}

InfluencedTokens top_influenced_tokens(const Vector& direction, const Matrix& E, int k) {
    if (direction.size() != E.rows()) throw InputError("direction length does not match the embedding dimension");
    if (k < 0 || k > E.cols()) throw InputError("k must lie in [0, |V|]");
    const Vector score = E.transpose() * direction;
    std::vector<Token> order(static_cast<std::size_t>(E.cols()));
    std::iota(order.begin(), order.end(), Token{0});
    std::stable_sort(order.begin(), order.end(), [&](Token a, Token b) { return score(a) > score(b); });
    InfluencedTokens out;
    out.top.assign(order.begin(), order.begin() + k);
    std::stable_sort(order.begin(), order.end(), [&](Token a, Token b) { return score(a) < score(b); });
    out.bottom.assign(order.begin(), order.begin() + k);
    return out;
}

std::vector<DirectionReport> interpret_switch(const Matrix& W, const SoftmaxLm& lm, const Scorer& scorer,
                                              const InterpretConfig& cfg) {
    if (W.rows() != lm.dim() || W.cols() != lm.dim()) throw InputError("switch and LM dimensions differ");
    if (cfg.rows < 1 || cfg.k < 1) throw InputError("rows and k must be positive");
    const SvdDecomposition svd = svd_directions(W);
    const Vocab& vocab = lm.vocab();
    const int rows = std::min<int>(cfg.rows, static_cast<int>(svd.Vt.rows()));
    const int k = std::min<int>(cfg.k, static_cast<int>(lm.vocab_size()));

    std::vector<DirectionReport> out;
    for (int r = 0; r < rows; ++r) {
        const Vector dir = svd.Vt.row(r).transpose();
        const InfluencedTokens toks = top_influenced_tokens(dir, lm.E(), k);
        DirectionReport rep;
        rep.row = r;
        rep.singular_value = svd.S(r);
        int special = 0;
        for (Token t : toks.top) {
            rep.top.push_back(vocab.token(t));
            special += vocab.is_special(t) ? 1 : 0;
        }
        for (Token t : toks.bottom) rep.bottom.push_back(vocab.token(t));
        rep.discarded = special > cfg.max_special_fraction * static_cast<double>(k);
        if (!rep.discarded) {
            const GroupChoice choice = classify_group(scorer, rep.top, rep.bottom);
            rep.keyword_is_top = choice.chose_a;
            rep.tie = choice.tie;
            rep.top_score = choice.score_a;
            rep.bottom_score = choice.score_b;
        }
        out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace lmswitch
