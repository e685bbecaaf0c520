#pragma once
// Per-user top-K rankings: selection with deterministic tie-breaking and the
// TSV persistence format `user_id, rank, item_id, score`.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pare/core.hpp"

namespace pare {

struct RankedItem {
    std::uint32_t item = 0;
    double score = 0.0;
};

struct Ranking {
    std::uint32_t user = 0;
    std::vector<RankedItem> items;  // scores non-increasing, ties by ascending item index
    bool truncated = false;         // fewer than K unseen items existed
};

// Top-K unseen items by score, descending, ties broken by ascending item index.
inline Ranking topk_ranking(std::uint32_t user, std::span<const double> scores,
                            const SeenSets& seen, std::size_t k) {
    Ranking out;
    out.user = user;
    if (k == 0) throw std::runtime_error("topk_ranking: K must be >= 1");
    std::vector<std::uint32_t> candidates;
    candidates.reserve(scores.size());
    for (std::uint32_t i = 0; i < scores.size(); ++i)
        if (!seen.contains(user, i)) candidates.push_back(i);

    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    if (candidates.size() > k) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                         candidates.end(), better);
        candidates.resize(k);
    } else {
        out.truncated = true;
    }
    std::sort(candidates.begin(), candidates.end(), better);
    out.items.reserve(candidates.size());
    for (std::uint32_t i : candidates) out.items.push_back({i, scores[i]});
    return out;
}

inline std::string format_score(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void save_rankings_tsv(const std::vector<Ranking>& rankings, const IdMap& users,
                              const IdMap& items, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "user_id\trank\titem_id\tscore\n";
    for (const Ranking& r : rankings) {
        for (std::size_t pos = 0; pos < r.items.size(); ++pos) {
            out << users.name(r.user) << '\t' << (pos + 1) << '\t' << items.name(r.items[pos].item)
                << '\t' << format_score(r.items[pos].score) << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace pare
