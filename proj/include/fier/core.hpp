#pragma once

// Single-head cache model and the exact full-precision attention path that
// every approximate policy is measured against. All arithmetic is double;
// 16-bit floats exist only in the serialized formats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fier {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// Key matrix: row i is the key vector of token i.
struct KeyCache {
    Matrix data;
    std::size_t tokens() const { return data.rows(); }
    std::size_t dim() const { return data.cols(); }
};

// Value matrix, row-aligned with its KeyCache.
struct ValueCache {
    Matrix data;
    std::size_t tokens() const { return data.rows(); }
    std::size_t dim() const { return data.cols(); }
};

using QueryVector = std::vector<double>;
using AttentionOutput = std::vector<double>;

enum class ScoreKind { logit, softmax };

struct ScoreVector {
    std::vector<double> values;
    ScoreKind kind = ScoreKind::logit;
    std::size_t size() const { return values.size(); }
};

// Ordered set of retained token positions under a cache budget.
struct Selection {
    std::vector<std::size_t> indices;  // strictly increasing
    std::size_t budget = 0;

    bool valid_against(std::size_t tokens) const {
        if (indices.size() > budget) return false;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= tokens) return false;
            if (i > 0 && indices[i] <= indices[i - 1]) return false;
        }
        return true;
    }
};

// q K^T. With `scaled`, logits are divided by sqrt(d); scaling by a positive
// constant never changes the ranking, so selection paths use the raw form.
inline ScoreVector exact_scores(const QueryVector& q, const KeyCache& K, bool scaled = false) {
    require(q.size() == K.dim(), "exact_scores: query length does not match key dim");
    const std::size_t l = K.tokens(), d = K.dim();
    ScoreVector out;
    out.kind = ScoreKind::logit;
    out.values.resize(l);
    const double inv = scaled ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    for (std::size_t i = 0; i < l; ++i) {
        const double* k = K.data.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += q[j] * k[j];
        out.values[i] = acc * inv;
    }
    return out;
}

// Numerically stable softmax (max subtraction).
inline ScoreVector softmax(const ScoreVector& scores) {
    require(scores.kind == ScoreKind::logit, "softmax: input must be logits");
    require(!scores.values.empty(), "softmax: empty input");
    ScoreVector out;
    out.kind = ScoreKind::softmax;
    out.values.resize(scores.size());
    const double mx = *std::max_element(scores.values.begin(), scores.values.end());
    require(std::isfinite(mx), "softmax: non-finite logit");
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out.values[i] = std::exp(scores.values[i] - mx);
        sum += out.values[i];
    }
    for (double& v : out.values) v /= sum;
    return out;
}

// Indices of the k largest scores; ties go to the lower index; result is
// sorted by index.
inline Selection topk_oracle(const ScoreVector& scores, std::size_t k) {
    const std::size_t l = scores.size();
    require(k >= 1 && k <= l, "topk_oracle: k out of range");
    std::vector<std::size_t> order(l);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores.values[a] != scores.values[b]) return scores.values[a] > scores.values[b];
        return a < b;
    });
    Selection sel;
    sel.budget = k;
    sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(sel.indices.begin(), sel.indices.end());
    return sel;
}

// Full-precision attention restricted to the selected tokens:
// o = softmax(q K[sel]^T) V[sel].
inline AttentionOutput gather_attention(const QueryVector& q, const KeyCache& K,
                                        const ValueCache& V, const Selection& sel,
                                        bool scaled = true) {
    require(K.tokens() == V.tokens() && K.dim() == V.dim(),
            "gather_attention: K and V are not row-aligned");
    require(q.size() == K.dim(), "gather_attention: query length does not match key dim");
    require(!sel.indices.empty(), "gather_attention: empty selection");
    require(sel.valid_against(K.tokens()), "gather_attention: selection invalid for cache");

    const std::size_t d = K.dim(), m = sel.indices.size();
    ScoreVector sub;
    sub.kind = ScoreKind::logit;
    sub.values.resize(m);
    const double inv = scaled ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    for (std::size_t s = 0; s < m; ++s) {
        const double* k = K.data.row(sel.indices[s]);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += q[j] * k[j];
        sub.values[s] = acc * inv;
    }
    const ScoreVector w = softmax(sub);
    AttentionOutput out(d, 0.0);
    for (std::size_t s = 0; s < m; ++s) {
        const double* v = V.data.row(sel.indices[s]);
        for (std::size_t j = 0; j < d; ++j) out[j] += w.values[s] * v[j];
    }
    return out;
}

inline double relative_l2_error(const std::vector<double>& got, const std::vector<double>& want) {
    require(got.size() == want.size(), "relative_l2_error: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

}  // namespace fier
