#pragma once

#include "sepkit/mask.hpp"
#include "sepkit/matrix.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sepkit {

struct AttentionGrads {
    Matrix dQ;
    Matrix dK;
    Matrix dV;
};

/// Sentinel stored in masked score entries; keeps score matrices finite
/// while being unmistakably "not a score".
inline constexpr double kMaskedScore = -1.7976931348623157e308;  // lowest double

/// Raw scaled scores Q_i.K_j / sqrt(d_k); masked entries get kMaskedScore.
Matrix masked_scores(const Matrix& Q, const Matrix& K, const AttentionMask& mask);

/// Numerically stable softmax over the active entries of one row. Inactive
/// entries output exactly 0; active entries sum to 1 within 1e-12.
/// Throws std::logic_error if no entry is active.
std::vector<double> softmax_stable(std::span<const double> row, std::span<const std::uint8_t> active);

/// Masked scaled-dot-product attention. Softmax runs over unmasked entries
/// only (masked positions carry exactly zero weight), then O = A * V.
Matrix masked_attention(const Matrix& Q, const Matrix& K, const Matrix& V, const AttentionMask& mask);

/// Row-stochastic attention weights A (the softmaxed masked scores).
Matrix attention_weights(const Matrix& Q, const Matrix& K, const AttentionMask& mask);

/// Analytic gradients of sum(dO . O) with respect to Q, K, V. Masked
/// positions contribute exactly zero.
AttentionGrads attention_backward(const Matrix& Q, const Matrix& K, const Matrix& V,
                                  const AttentionMask& mask, const Matrix& dO);

}  // namespace sepkit
