#include "sepkit/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sepkit {

namespace {

void check_qk_shapes(const Matrix& Q, const Matrix& K, const AttentionMask& mask) {
    if (Q.cols == 0) {
        throw std::invalid_argument("attention: Q has zero key dimension");
    }
    if (Q.cols != K.cols) {
        throw std::invalid_argument("attention: Q and K key dimensions differ");
    }
    if (Q.rows != K.rows) {
        throw std::invalid_argument("attention: Q and K row counts differ");
    }
    if (Q.rows != mask.size()) {
        throw std::invalid_argument("attention: mask size does not match Q rows");
    }
    Q.require_finite("attention: Q");
    K.require_finite("attention: K");
}

double dot(const double* x, const double* y, std::size_t d) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        acc += x[k] * y[k];
    }
    return acc;
}

}  // namespace

Matrix masked_scores(const Matrix& Q, const Matrix& K, const AttentionMask& mask) {
    check_qk_shapes(Q, K, mask);
    const std::size_t m = Q.rows;
    const std::size_t d = Q.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix scores(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            scores(i, j) = mask.bit(i, j) ? dot(Q.row(i), K.row(j), d) * scale : kMaskedScore;
        }
    }
    return scores;
}

std::vector<double> softmax_stable(std::span<const double> row, std::span<const std::uint8_t> active) {
    if (row.size() != active.size()) {
        throw std::invalid_argument("softmax_stable: row and active lengths differ");
    }
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (active[j]) {
            max_score = std::max(max_score, row[j]);
        }
    }
    if (max_score == -std::numeric_limits<double>::infinity()) {
        throw std::logic_error("softmax_stable: no active entries in row");
    }
    std::vector<double> out(row.size(), 0.0);
    double denom = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (active[j]) {
            out[j] = std::exp(row[j] - max_score);
            denom += out[j];
        }
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (active[j]) {
            out[j] /= denom;
        }
    }
    return out;
}

Matrix attention_weights(const Matrix& Q, const Matrix& K, const AttentionMask& mask) {
    check_qk_shapes(Q, K, mask);
    const std::size_t m = Q.rows;
    const std::size_t d = Q.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix weights(m, m);
    std::vector<double> scores(m);
    std::vector<std::uint8_t> active(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            active[j] = mask.bit(i, j) ? 1 : 0;
            scores[j] = active[j] ? dot(Q.row(i), K.row(j), d) * scale : 0.0;
        }
        auto row = softmax_stable(scores, active);
        std::copy(row.begin(), row.end(), weights.row(i));
    }
    return weights;
}

Matrix masked_attention(const Matrix& Q, const Matrix& K, const Matrix& V, const AttentionMask& mask) {
    check_qk_shapes(Q, K, mask);
    if (V.rows != K.rows) {
        throw std::invalid_argument("attention: V row count does not match K");
    }
    V.require_finite("attention: V");
    const Matrix A = attention_weights(Q, K, mask);
    const std::size_t m = Q.rows;
    const std::size_t dv = V.cols;
    Matrix out(m, dv);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double w = A(i, j);
            if (w == 0.0) continue;
            const double* vr = V.row(j);
            double* or_ = out.row(i);
            for (std::size_t k = 0; k < dv; ++k) {
                or_[k] += w * vr[k];
            }
        }
    }
    return out;
}

AttentionGrads attention_backward(const Matrix& Q, const Matrix& K, const Matrix& V,
                                  const AttentionMask& mask, const Matrix& dO) {
    check_qk_shapes(Q, K, mask);
    if (V.rows != K.rows) {
        throw std::invalid_argument("attention: V row count does not match K");
    }
    if (dO.rows != Q.rows || dO.cols != V.cols) {
        throw std::invalid_argument("attention: dO shape does not match output");
    }
    V.require_finite("attention: V");
    dO.require_finite("attention: dO");

    const std::size_t m = Q.rows;
    const std::size_t d = Q.cols;
    const std::size_t dv = V.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    const Matrix A = attention_weights(Q, K, mask);

    AttentionGrads grads{Matrix(m, d), Matrix(m, d), Matrix(m, dv)};

    // dV = A^T dO
    for (std::size_t j = 0; j < m; ++j) {
        double* dv_row = grads.dV.row(j);
        for (std::size_t i = 0; i < m; ++i) {
            const double w = A(i, j);
            if (w == 0.0) continue;
            const double* do_row = dO.row(i);
            for (std::size_t k = 0; k < dv; ++k) {
                dv_row[k] += w * do_row[k];
            }
        }
    }

    // dLambda_ij = A_ij (dA_ij - sum_k A_ik dA_ik), dA = dO V^T; masked
    // entries stay zero.
    Matrix dLambda(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        double inner = 0.0;
        std::vector<double> dA(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            if (A(i, j) == 0.0 && !mask.bit(i, j)) continue;
            dA[j] = dot(dO.row(i), V.row(j), dv);
            inner += A(i, j) * dA[j];
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (!mask.bit(i, j)) continue;
            dLambda(i, j) = A(i, j) * (dA[j] - inner);
        }
    }

    // dQ = scale * dLambda K ; dK = scale * dLambda^T Q
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double g = dLambda(i, j) * scale;
            if (g == 0.0) continue;
            const double* krow = K.row(j);
            const double* qrow = Q.row(i);
            double* dq = grads.dQ.row(i);
            double* dk = grads.dK.row(j);
            for (std::size_t k = 0; k < d; ++k) {
                dq[k] += g * krow[k];
                dk[k] += g * qrow[k];
            }
        }
    }
    return grads;
}

}  // namespace sepkit
