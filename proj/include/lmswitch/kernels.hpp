#pragma once

// Enumeration and reduction kernels. Each parallel kernel has a serial twin
// with the same floating-point operation order, so the two agree bitwise for
// any thread count.

#include <cstddef>
#include <vector>

#include <omp.h>

#include "lmswitch/common.hpp"

namespace lmswitch::kernels {

// Reductions are summed in fixed-size chunks; the chunk partials are then
// added serially in index order. The partition does not depend on the
// number of threads.
inline constexpr std::size_t kChunk = 4096;

template <class F>
double chunked_sum_serial(std::size_t n, F&& term) {
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    double total = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t end = std::min(n, (c + 1) * kChunk);
        double part = 0.0;
        for (std::size_t i = c * kChunk; i < end; ++i) part += term(i);
        total += part;
    }
    return total;
}

template <class F>
double chunked_sum_parallel(std::size_t n, F&& term) {
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> parts(chunks, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
        const std::size_t end = std::min(n, begin + kChunk);
        double part = 0.0;
        for (std::size_t i = begin; i < end; ++i) part += term(i);
        parts[static_cast<std::size_t>(c)] = part;
    }
    double total = 0.0;
    for (double p : parts) total += p;
    return total;
}

inline double l1_distance_serial(const std::vector<double>& a, const std::vector<double>& b) {
    return chunked_sum_serial(a.size(), [&](std::size_t i) { return std::abs(a[i] - b[i]); });
}

inline double l1_distance_parallel(const std::vector<double>& a, const std::vector<double>& b) {
    return chunked_sum_parallel(a.size(), [&](std::size_t i) { return std::abs(a[i] - b[i]); });
}

namespace detail {

// Probability of the sequence whose base-|V| digits (most significant first)
// spell `index`.
inline double markov_path(const Vector& start, const Matrix& trans, std::size_t index, int L, std::size_t V) {
    std::size_t place = 1;
    for (int t = 1; t < L; ++t) place *= V;
    std::size_t rest = index;
    auto prev = static_cast<Eigen::Index>(rest / place);
    rest %= place;
    double p = start(prev);
    for (int t = 1; t < L; ++t) {
        place /= V;
        const auto cur = static_cast<Eigen::Index>(rest / place);
        rest %= place;
        p *= trans(prev, cur);
        prev = cur;
    }
    return p;
}

}  // namespace detail

/// Probabilities of all |V|^L sequences of a first-order model, in
/// lexicographic order.
inline std::vector<double> markov_enumerate_serial(const Vector& start, const Matrix& trans, int L) {
    const auto V = static_cast<std::size_t>(start.size());
    std::size_t total = 1;
    for (int t = 0; t < L; ++t) total *= V;
    std::vector<double> out(total);
    for (std::size_t i = 0; i < total; ++i) out[i] = detail::markov_path(start, trans, i, L, V);
    return out;
}

inline std::vector<double> markov_enumerate_parallel(const Vector& start, const Matrix& trans, int L) {
    const auto V = static_cast<std::size_t>(start.size());
    std::size_t total = 1;
    for (int t = 0; t < L; ++t) total *= V;
    std::vector<double> out(total);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(total); ++i)
        out[static_cast<std::size_t>(i)] = detail::markov_path(start, trans, static_cast<std::size_t>(i), L, V);
    return out;
}

}  // namespace lmswitch::kernels
