#pragma once

// Shared fixtures and independent reference implementations. The references
// deliberately avoid the library's computation paths: plain loops and full
// sorts only, so they stay valid oracles.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fier/core.hpp"

namespace testref {

inline fier::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                  double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    fier::Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(rng);
    return m;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

inline double dot(const std::vector<double>& a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// Top-k by full sort of (score desc, index asc) pairs.
inline std::vector<std::size_t> topk_by_sort(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> pairs;
    for (std::size_t i = 0; i < scores.size(); ++i) pairs.emplace_back(scores[i], i);
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(pairs[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

// Straightforward attention over a token subset, written independently of
// gather_attention.
inline std::vector<double> attention_subset(const std::vector<double>& q, const fier::Matrix& K,
                                            const fier::Matrix& V,
                                            const std::vector<std::size_t>& subset, bool scaled) {
    const std::size_t d = K.cols();
    std::vector<double> logits;
    for (std::size_t t : subset) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += q[j] * K(t, j);
        if (scaled) acc /= std::sqrt(static_cast<double>(d));
        logits.push_back(acc);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    std::vector<double> w(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        w[i] = std::exp(logits[i] - mx);
        z += w[i];
    }
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < subset.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out[j] += (w[i] / z) * V(subset[i], j);
    }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace testref
