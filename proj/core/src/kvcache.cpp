#include "sepkit/kvcache.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sepkit {

void CacheConfig::validate() const {
    if (w < 1) {
        throw std::invalid_argument("CacheConfig: w must be >= 1");
    }
    if (c < 1) {
        throw std::invalid_argument("CacheConfig: c must be >= 1");
    }
    if (a + s + w >= c) {
        throw std::invalid_argument("CacheConfig: requires a + s + w < c, got " + std::to_string(a) + "+" +
                                    std::to_string(s) + "+" + std::to_string(w) + " >= " + std::to_string(c));
    }
}

const char* StepEvents::label() const {
    if (compressed) return "compress";
    if (shifted) return "shift";
    return placed_in == Placement::Init ? "init" : "local";
}

StreamState::StreamState(const CacheConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
}

StepEvents::Placement StreamState::place(const CacheEntry& token, bool* shifted) {
    if (init_.size() < cfg_.a) {
        init_.push_back(token);
        return StepEvents::Placement::Init;
    }
    local_.push_back(token);
    if (local_.size() > cfg_.w) {
        past_.push_back(local_.front());
        local_.pop_front();
        *shifted = true;
    }
    return StepEvents::Placement::Local;
}

void StreamState::compress(std::size_t* promoted, std::size_t* dropped) {
    // Past entries are scanned in arrival order; separators are promoted
    // while the Separator Cache has room, everything else is discarded.
    for (const CacheEntry& entry : past_) {
        if (entry.is_sep && sep_.size() < cfg_.s) {
            sep_.push_back(entry);
            ++*promoted;
        } else {
            ++*dropped;
        }
    }
    past_.clear();
    ++compressions_;
}

StepEvents StreamState::step(const CacheEntry& token) {
    StepEvents ev;
    ev.placed_in = place(token, &ev.shifted);
    ++consumed_;
    ev.peak_size_run = size_run();
    if (size_run() == cfg_.c) {
        ev.compressed = true;
        compress(&ev.promoted, &ev.dropped);
    }
    return ev;
}

StepEvents StreamState::step(TokenId token, bool is_sep) {
    return step(CacheEntry{token, is_sep, consumed_});
}

std::vector<CacheEntry> StreamState::entries() const {
    std::vector<CacheEntry> all;
    all.reserve(size_run());
    all.insert(all.end(), init_.begin(), init_.end());
    all.insert(all.end(), sep_.begin(), sep_.end());
    all.insert(all.end(), past_.begin(), past_.end());
    all.insert(all.end(), local_.begin(), local_.end());
    return all;
}

std::vector<std::size_t> StreamState::positions() const {
    std::vector<std::size_t> pos(size_run());
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    return pos;
}

FundamentalCache::FundamentalCache(std::size_t a, std::size_t n) : a_(a), n_(n) {
    if (n_ < 1) {
        throw std::invalid_argument("FundamentalCache: n must be >= 1");
    }
}

void FundamentalCache::step(const CacheEntry& token) {
    if (init_.size() < a_) {
        init_.push_back(token);
    }
    window_.push_back(token);
    if (window_.size() > n_) {
        const CacheEntry evicted = window_.front();
        window_.pop_front();
        // Initial-prefix tokens already live in init; everything else that
        // is a separator is retained forever.
        if (evicted.is_sep && evicted.arrival_index >= a_) {
            seps_.push_back(evicted);
        }
    }
    ++consumed_;
}

void FundamentalCache::step(TokenId token, bool is_sep) {
    step(CacheEntry{token, is_sep, consumed_});
}

std::vector<CacheEntry> FundamentalCache::retained() const {
    // init arrivals < a, sep arrivals in [a, window start), window ascending:
    // concatenating init, seps, and the non-initial window suffix is already
    // ascending and duplicate-free.
    std::vector<CacheEntry> all;
    all.reserve(init_.size() + seps_.size() + window_.size());
    all.insert(all.end(), init_.begin(), init_.end());
    all.insert(all.end(), seps_.begin(), seps_.end());
    for (const CacheEntry& entry : window_) {
        if (entry.arrival_index >= a_) {
            all.push_back(entry);
        }
    }
    return all;
}

std::size_t FundamentalCache::size() const {
    std::size_t window_overlap = 0;
    for (const CacheEntry& entry : window_) {
        if (entry.arrival_index < a_) ++window_overlap;
    }
    return init_.size() + seps_.size() + window_.size() - window_overlap;
}

namespace {

TraceRow make_row(std::size_t step, const char* event, std::size_t init, std::size_t sep, std::size_t past,
                  std::size_t local) {
    TraceRow row;
    row.step = step;
    row.event = event;
    row.size_init = init;
    row.size_sep = sep;
    row.size_past = past;
    row.size_local = local;
    row.size_run = init + sep + past + local;
    row.n = past + local;
    return row;
}

}  // namespace

PolicyTracker::PolicyTracker(const KvPolicy& policy)
    : state_(std::visit(
          [](const auto& p) -> std::variant<VanillaState, RingState, FundamentalCache, StreamState> {
              using P = std::decay_t<decltype(p)>;
              if constexpr (std::is_same_v<P, VanillaPolicy>) {
                  return VanillaState{};
              } else if constexpr (std::is_same_v<P, RingPolicy>) {
                  if (p.c == 0 || p.a >= p.c) {
                      throw std::invalid_argument("RingPolicy: requires a < c and c >= 1");
                  }
                  return RingState{p, {}, {}};
              } else if constexpr (std::is_same_v<P, FundamentalPolicy>) {
                  return FundamentalCache(p.a, p.n);
              } else {
                  return StreamState(p);
              }
          },
          policy)) {}

TraceRow PolicyTracker::step(TokenId token, bool is_sep) {
    const CacheEntry entry{token, is_sep, consumed_};
    ++consumed_;
    const std::size_t m = consumed_;
    return std::visit(
        [&](auto& s) -> TraceRow {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, VanillaState>) {
                s.all.push_back(entry);
                return make_row(m, "local", 0, 0, 0, s.all.size());
            } else if constexpr (std::is_same_v<S, RingState>) {
                const char* ev = "local";
                if (s.sinks.size() < s.policy.a) {
                    s.sinks.push_back(entry);
                    ev = "init";
                } else {
                    s.ring.push_back(entry);
                    if (s.ring.size() > s.policy.c - s.policy.a) {
                        s.ring.pop_front();
                        ev = "shift";
                    }
                }
                return make_row(m, ev, s.sinks.size(), 0, 0, s.ring.size());
            } else if constexpr (std::is_same_v<S, FundamentalCache>) {
                const std::size_t before_init = s.size_init();
                const std::size_t before_seps = s.size_seps();
                const std::size_t before_window = s.size_window();
                s.step(entry);
                const char* ev = "local";
                if (s.size_seps() > before_seps) {
                    ev = "promote";  // window eviction retained a separator
                } else if (before_window > 0 && s.size_window() == before_window) {
                    ev = "shift";  // window was full, oldest fell out
                } else if (s.size_init() > before_init) {
                    ev = "init";
                }
                // Window entries still inside the initial prefix count once, in init.
                const std::size_t overlap = s.size_init() + s.size_seps() + s.size_window() - s.size();
                return make_row(m, ev, s.size_init(), s.size_seps(), 0, s.size_window() - overlap);
            } else {
                const StepEvents ev = s.step(entry);
                return make_row(m, ev.label(), s.size_init(), s.size_sep(), s.size_past(), s.size_local());
            }
        },
        state_);
}

std::vector<CacheEntry> PolicyTracker::retained() const {
    return std::visit(
        [&](const auto& s) -> std::vector<CacheEntry> {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, VanillaState>) {
                return s.all;
            } else if constexpr (std::is_same_v<S, RingState>) {
                std::vector<CacheEntry> all(s.sinks.begin(), s.sinks.end());
                all.insert(all.end(), s.ring.begin(), s.ring.end());
                return all;
            } else if constexpr (std::is_same_v<S, FundamentalCache>) {
                return s.retained();
            } else {
                return s.entries();
            }
        },
        state_);
}

std::size_t PolicyTracker::compressions() const {
    if (const auto* stream = std::get_if<StreamState>(&state_)) {
        return stream->compressions();
    }
    return 0;
}

TraceResult runtime_kv_trace(const TokenSeq& tokens, const KvPolicy& policy) {
    PolicyTracker tracker(policy);
    TraceResult result;
    result.rows.reserve(tokens.size());
    double total = 0.0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        result.rows.push_back(tracker.step(tokens.ids[i], tokens.sep_flags[i] != 0));
        const TraceRow& row = result.rows.back();
        result.size_run_series.push_back(row.size_run);
        result.n_series.push_back(row.n);
        total += static_cast<double>(row.size_run);
    }
    result.compressions = tracker.compressions();
    result.rkv_mean = result.rows.empty() ? 0.0 : total / static_cast<double>(result.rows.size());
    return result;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream out;
    out << kTraceCsvHeader << '\n';
    for (const TraceRow& row : rows) {
        out << row.step << ',' << row.event << ',' << row.size_init << ',' << row.size_sep << ','
            << row.size_past << ',' << row.size_local << ',' << row.size_run << ',' << row.n << '\n';
    }
    return out.str();
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_trace_csv: cannot open " + path.string());
    }
    out << trace_to_csv(rows);
    if (!out) {
        throw std::runtime_error("write_trace_csv: write failed: " + path.string());
    }
}

}  // namespace sepkit
