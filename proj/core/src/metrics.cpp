#include "sepkit/metrics.hpp"

#include <cassert>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sepkit {

double attention_ratio(const AttentionMask& mask) {
    const std::size_t m = mask.size();
    if (m == 0) {
        throw std::invalid_argument("attention_ratio: empty mask");
    }
    const double lower = static_cast<double>(m) * static_cast<double>(m + 1) / 2.0;
    return static_cast<double>(nnz_lower(mask)) / lower;
}

FlopsBreakdown flops_estimate(const ModelDims& dims, std::size_t seq_len,
                              const std::vector<std::uint64_t>& nnz_per_layer) {
    if (nnz_per_layer.size() != dims.n_layers) {
        throw std::invalid_argument("flops_estimate: nnz_per_layer length != n_layers");
    }
    const std::uint64_t t = seq_len;
    const std::uint64_t d = dims.d_model;
    const std::uint64_t dff = dims.d_ff;
    const std::uint64_t v = dims.vocab;

    FlopsBreakdown out;
    const std::uint64_t per_layer_linear = 8 * t * d * d + 4 * t * d * dff;
    out.linear = dims.n_layers * per_layer_linear + t * d + 2 * t * d * v;
    for (std::uint64_t nnz : nnz_per_layer) {
        out.attention += 4 * nnz * d;
    }
    out.total = out.linear + out.attention;
    return out;
}

double theoretical_avg_n(const CacheConfig& cfg) {
    cfg.validate();
    return static_cast<double>(cfg.w + cfg.c - cfg.a - cfg.s) / 2.0;
}

double theoretical_avg_size(const CacheConfig& cfg) {
    cfg.validate();
    const double avg = static_cast<double>(cfg.w + cfg.c + cfg.a + cfg.s) / 2.0;
    assert(avg < static_cast<double>(cfg.c));
    return avg;
}

double rkv_percent(const std::vector<std::size_t>& method_series,
                   const std::vector<std::size_t>& vanilla_series) {
    if (method_series.empty() || vanilla_series.empty()) {
        throw std::invalid_argument("rkv_percent: empty trace");
    }
    if (method_series.size() != vanilla_series.size()) {
        throw std::invalid_argument("rkv_percent: trace lengths differ");
    }
    const double method =
        std::accumulate(method_series.begin(), method_series.end(), 0.0) / method_series.size();
    const double vanilla =
        std::accumulate(vanilla_series.begin(), vanilla_series.end(), 0.0) / vanilla_series.size();
    return method / vanilla;
}

namespace {

void append_number(std::ostringstream& out, bool& first, const char* key, double value) {
    out << (first ? "" : ",") << "\"" << key << "\":";
    std::ostringstream num;
    num.precision(17);
    num << value;
    out << num.str();
    first = false;
}

}  // namespace

std::string MetricsReport::to_json() const {
    std::ostringstream out;
    out << "{";
    bool first = true;
    if (attention_ratio) append_number(out, first, "attention_ratio", *attention_ratio);
    if (flops) {
        append_number(out, first, "flops_total", static_cast<double>(flops->total));
        append_number(out, first, "flops_attention", static_cast<double>(flops->attention));
        append_number(out, first, "flops_linear", static_cast<double>(flops->linear));
    }
    if (rkv_mean) append_number(out, first, "rkv_mean", *rkv_mean);
    if (rkv_percent_vs_vanilla) append_number(out, first, "rkv_percent_vs_vanilla", *rkv_percent_vs_vanilla);
    if (theoretical_avg_n) append_number(out, first, "theoretical_avg_n", *theoretical_avg_n);
    if (theoretical_avg_size) append_number(out, first, "theoretical_avg_size", *theoretical_avg_size);
    out << (first ? "" : ",") << "\"flops_convention\":\"" << kFlopsConvention << "\"}";
    return out.str();
}

}  // namespace sepkit
