#include "sepkit/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace sepkit {

SeparatorSet::SeparatorSet(const std::vector<TokenId>& ids) : members_(ids) {
    std::sort(members_.begin(), members_.end());
    members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
}

SeparatorSet SeparatorSet::from_chars(std::string_view chars) {
    std::vector<TokenId> ids;
    ids.reserve(chars.size());
    for (unsigned char ch : chars) {
        ids.push_back(static_cast<TokenId>(ch));
    }
    return SeparatorSet(ids);
}

SeparatorSet SeparatorSet::default_set() {
    return from_chars(".,?!;: \t\n");
}

bool SeparatorSet::contains(TokenId id) const {
    return std::binary_search(members_.begin(), members_.end(), id);
}

TokenSeq encode(std::string_view text, const SeparatorSet& seps) {
    TokenSeq seq;
    seq.ids.reserve(text.size());
    seq.sep_flags.reserve(text.size());
    for (unsigned char ch : text) {
        const auto id = static_cast<TokenId>(ch);
        seq.ids.push_back(id);
        seq.sep_flags.push_back(seps.contains(id) ? 1 : 0);
    }
    return seq;
}

std::string decode(const TokenSeq& seq) {
    std::string out;
    out.reserve(seq.ids.size());
    for (TokenId id : seq.ids) {
        if (id < 0 || id > 255) {
            throw std::invalid_argument("decode: lossy decode, token id " + std::to_string(id) +
                                        " is not a byte value");
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

std::vector<std::uint8_t> classify(const std::vector<TokenId>& ids, const SeparatorSet& seps) {
    std::vector<std::uint8_t> flags(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        flags[i] = seps.contains(ids[i]) ? 1 : 0;
    }
    return flags;
}

TokenSeq load_corpus(const std::filesystem::path& path, const SeparatorSet& seps) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_corpus: cannot open file: " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw std::runtime_error("load_corpus: read error: " + path.string());
    }
    return encode(bytes, seps);
}

std::string unescape(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != '\\') {
            out.push_back(raw[i]);
            continue;
        }
        if (i + 1 == raw.size()) {
            throw std::invalid_argument("unescape: dangling backslash");
        }
        switch (raw[++i]) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            case '0': out.push_back('\0'); break;
            case '\\': out.push_back('\\'); break;
            default:
                throw std::invalid_argument(std::string("unescape: unknown escape \\") + raw[i]);
        }
    }
    return out;
}

}  // namespace sepkit
