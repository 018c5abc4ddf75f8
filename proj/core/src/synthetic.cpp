#include "sepkit/synthetic.hpp"

#include <algorithm>
#include <random>

namespace sepkit {

std::string synthetic_text(const SyntheticConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> letter(0, 25);
    std::string text(cfg.length, 'a');
    for (char& ch : text) {
        ch = static_cast<char>('a' + letter(rng));
    }
    if (cfg.sep_period > 0) {
        std::uniform_int_distribution<long long> jitter(-static_cast<long long>(cfg.jitter),
                                                        static_cast<long long>(cfg.jitter));
        std::size_t pos = 0;
        while (true) {
            long long gap = static_cast<long long>(cfg.sep_period);
            if (cfg.jitter > 0) gap += jitter(rng);
            gap = std::max<long long>(1, gap);
            pos += static_cast<std::size_t>(gap);
            if (pos > cfg.length) break;
            text[pos - 1] = '.';
        }
    }
    return text;
}

TokenSeq synthetic_stream(const SyntheticConfig& cfg, const SeparatorSet& seps) {
    return encode(synthetic_text(cfg), seps);
}

}  // namespace sepkit
