#pragma once

#include "sepkit/kvcache.hpp"
#include "sepkit/mask.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sepkit {

struct ModelDims {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 256;
    std::size_t vocab = 256;
};

struct FlopsBreakdown {
    std::uint64_t total = 0;
    std::uint64_t attention = 0;
    std::uint64_t linear = 0;
};

/// FLOPs convention, emitted verbatim in reports so percentages are
/// self-describing.
inline constexpr const char* kFlopsConvention =
    "multiply-accumulate = 2 FLOPs; masked query-key pairs skipped (cost 0); "
    "attention = sum over layers of 4*nnz*d_model (QK^T plus AV over unmasked pairs); "
    "linear = per layer 8*T*d_model^2 (QKV and output projections) + 4*T*d_model*d_ff "
    "(feed-forward) + T*d_model (positional add) + 2*T*d_model*vocab (output head); "
    "softmax, layer norms and residual adds uncounted";

/// Fraction of ones in the lower triangle: nnz / (m(m+1)/2).
/// Throws std::invalid_argument for an empty mask.
double attention_ratio(const AttentionMask& mask);

/// Mask-independent linear FLOPs plus per-layer attention FLOPs driven by the
/// nnz counts. nnz_per_layer must have one entry per layer.
FlopsBreakdown flops_estimate(const ModelDims& dims, std::size_t seq_len,
                              const std::vector<std::uint64_t>& nnz_per_layer);

/// Closed-form limit of the mean neighboring count: (w + c - a - s) / 2.
double theoretical_avg_n(const CacheConfig& cfg);

/// Closed-form limit of the mean runtime occupancy: (w + c + a + s) / 2,
/// strictly below c for every valid config.
double theoretical_avg_size(const CacheConfig& cfg);

/// mean(method) / mean(vanilla). Throws on empty or mismatched series.
double rkv_percent(const std::vector<std::size_t>& method_series,
                   const std::vector<std::size_t>& vanilla_series);

struct MetricsReport {
    std::optional<double> attention_ratio;
    std::optional<FlopsBreakdown> flops;
    std::optional<double> rkv_mean;
    std::optional<double> rkv_percent_vs_vanilla;
    std::optional<double> theoretical_avg_n;
    std::optional<double> theoretical_avg_size;

    /// Flat JSON object; unset fields are omitted, the FLOPs convention
    /// string is always included.
    std::string to_json() const;
};

}  // namespace sepkit
