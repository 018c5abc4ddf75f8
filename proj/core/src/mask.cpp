#include "sepkit/mask.hpp"

#include <sstream>
#include <stdexcept>

namespace sepkit {

void AttentionMask::check_invariants() const {
    for (std::size_t i = 0; i < m_; ++i) {
        if (!bit(i, i)) {
            throw std::logic_error("AttentionMask: row " + std::to_string(i) + " lacks self-visibility");
        }
        for (std::size_t j = i + 1; j < m_; ++j) {
            if (bit(i, j)) {
                throw std::logic_error("AttentionMask: non-causal bit at (" + std::to_string(i) + "," +
                                       std::to_string(j) + ")");
            }
        }
    }
}

std::string AttentionMask::to_json() const {
    std::ostringstream out;
    out << "{\"m\":" << m_ << ",\"bits\":[";
    for (std::size_t i = 0; i < m_; ++i) {
        out << (i ? ",[" : "[");
        for (std::size_t j = 0; j < m_; ++j) {
            out << (j ? "," : "") << (bit(i, j) ? 1 : 0);
        }
        out << "]";
    }
    out << "]}";
    return out.str();
}

std::string AttentionMask::to_pbm() const {
    std::ostringstream out;
    out << "P1\n" << m_ << " " << m_ << "\n";
    for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t j = 0; j < m_; ++j) {
            out << (bit(i, j) ? '1' : '0') << (j + 1 < m_ ? ' ' : '\n');
        }
    }
    return out.str();
}

void MaskPolicy::validate() const {
    if (n < 1) {
        throw std::invalid_argument("MaskPolicy: n must be >= 1");
    }
    if (delta < 1) {
        throw std::invalid_argument("MaskPolicy: delta must be >= 1");
    }
}

MaskPolicy MaskPolicy::full() { return {PolicyKind::Full, 0, 1, 1}; }
MaskPolicy MaskPolicy::sepllm(std::size_t a, std::size_t n) { return {PolicyKind::SepLLM, a, n, 1}; }
MaskPolicy MaskPolicy::streaming(std::size_t a, std::size_t n) { return {PolicyKind::StreamingLLM, a, n, 1}; }
MaskPolicy MaskPolicy::fixllm(std::size_t a, std::size_t n, std::size_t delta) {
    return {PolicyKind::FixLLM, a, n, delta};
}
MaskPolicy MaskPolicy::sliding_window(std::size_t n) { return {PolicyKind::SlidingWindow, 0, n, 1}; }

const char* policy_kind_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Full: return "full";
        case PolicyKind::SepLLM: return "sepllm";
        case PolicyKind::StreamingLLM: return "strmllm";
        case PolicyKind::FixLLM: return "fixllm";
        case PolicyKind::SlidingWindow: return "window";
    }
    return "?";
}

namespace {

// j is in the local window of query i iff j + n > i (window of width n
// ending at i). All arguments non-negative, no underflow.
inline bool in_window(std::size_t i, std::size_t j, std::size_t n) {
    return j + n > i;
}

}  // namespace

AttentionMask full_causal(std::size_t m) {
    AttentionMask mask(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            mask.set(i, j);
        }
    }
    return mask;
}

AttentionMask sepllm_mask(const TokenSeq& seq, std::size_t a, std::size_t n) {
    MaskPolicy{PolicyKind::SepLLM, a, n, 1}.validate();
    const std::size_t m = seq.size();
    AttentionMask mask(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (j < a || seq.sep_flags[j] || in_window(i, j, n)) {
                mask.set(i, j);
            }
        }
    }
    return mask;
}

AttentionMask streaming_mask(const TokenSeq& seq, std::size_t a, std::size_t n) {
    MaskPolicy{PolicyKind::StreamingLLM, a, n, 1}.validate();
    const std::size_t m = seq.size();
    AttentionMask mask(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (j < a || in_window(i, j, n)) {
                mask.set(i, j);
            }
        }
    }
    return mask;
}

AttentionMask fixllm_mask(const TokenSeq& seq, std::size_t a, std::size_t n, std::size_t delta) {
    MaskPolicy{PolicyKind::FixLLM, a, n, delta}.validate();
    const std::size_t m = seq.size();
    AttentionMask mask(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (j < a || j % delta == delta - 1 || in_window(i, j, n)) {
                mask.set(i, j);
            }
        }
    }
    return mask;
}

AttentionMask sliding_window_mask(std::size_t m, std::size_t n) {
    MaskPolicy{PolicyKind::SlidingWindow, 0, n, 1}.validate();
    AttentionMask mask(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            if (in_window(i, j, n)) {
                mask.set(i, j);
            }
        }
    }
    return mask;
}

bool mask_bit(const MaskPolicy& policy, const TokenSeq& seq, std::size_t i, std::size_t j) {
    policy.validate();
    if (j > i || i >= seq.size()) {
        return false;
    }
    switch (policy.kind) {
        case PolicyKind::Full:
            return true;
        case PolicyKind::SepLLM:
            return j < policy.a || seq.sep_flags[j] != 0 || in_window(i, j, policy.n);
        case PolicyKind::StreamingLLM:
            return j < policy.a || in_window(i, j, policy.n);
        case PolicyKind::FixLLM:
            return j < policy.a || j % policy.delta == policy.delta - 1 || in_window(i, j, policy.n);
        case PolicyKind::SlidingWindow:
            return in_window(i, j, policy.n);
    }
    return false;
}

AttentionMask build_mask(const MaskPolicy& policy, const TokenSeq& seq) {
    policy.validate();
    switch (policy.kind) {
        case PolicyKind::Full: return full_causal(seq.size());
        case PolicyKind::SepLLM: return sepllm_mask(seq, policy.a, policy.n);
        case PolicyKind::StreamingLLM: return streaming_mask(seq, policy.a, policy.n);
        case PolicyKind::FixLLM: return fixllm_mask(seq, policy.a, policy.n, policy.delta);
        case PolicyKind::SlidingWindow: return sliding_window_mask(seq.size(), policy.n);
    }
    throw std::logic_error("build_mask: unknown policy kind");
}

std::uint64_t nnz_lower(const AttentionMask& mask) {
    std::uint64_t count = 0;
    const std::size_t m = mask.size();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i && j < m; ++j) {
            count += mask.bit(i, j) ? 1 : 0;
        }
    }
    return count;
}

std::vector<MaskPolicy> resolve_layers(const MaskPolicy& base, HybridMode hybrid, std::size_t layer_count) {
    if (layer_count == 0) {
        throw std::invalid_argument("resolve_layers: layer count must be >= 1");
    }
    base.validate();
    std::vector<MaskPolicy> layers(layer_count, base);
    if (hybrid == HybridMode::H || hybrid == HybridMode::HT) {
        layers.front() = MaskPolicy::full();
    }
    if (hybrid == HybridMode::HT) {
        layers.back() = MaskPolicy::full();
    }
    return layers;
}

}  // namespace sepkit
