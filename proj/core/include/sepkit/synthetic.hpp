#pragma once

#include "sepkit/tokenizer.hpp"

#include <cstdint>
#include <string>

namespace sepkit {

/// Parameters for the seeded synthetic token stream used by simulations and
/// acceptance runs: separators roughly every `sep_period` tokens, each gap
/// jittered uniformly in [-jitter, +jitter] (clamped to at least 1).
struct SyntheticConfig {
    std::size_t length = 200000;
    std::size_t sep_period = 5;
    std::size_t jitter = 2;
    std::uint64_t seed = 0;
};

/// Byte text: lowercase letters with '.' at the jittered separator gaps.
std::string synthetic_text(const SyntheticConfig& cfg);

/// synthetic_text encoded and classified against `seps`.
TokenSeq synthetic_stream(const SyntheticConfig& cfg, const SeparatorSet& seps);

}  // namespace sepkit
