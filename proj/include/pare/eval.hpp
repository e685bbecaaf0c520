#pragma once
// Top-K ranking metrics over binary relevance, per-user aggregation, and the
// paired bootstrap significance test between per-user metric vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pare/core.hpp"
#include "pare/ranking.hpp"
#include "pare/split.hpp"

namespace pare {

struct MetricsAtK {
    double hitrate = 0.0;
    double recall = 0.0;
    double ndcg = 0.0;
    double mrr = 0.0;
    double precision = 0.0;
};

inline const char* const kMetricNames[5] = {"hitrate", "recall", "ndcg", "mrr", "precision"};

inline double metric_by_name(const MetricsAtK& m, const std::string& name) {
    if (name == "hitrate") return m.hitrate;
    if (name == "recall") return m.recall;
    if (name == "ndcg") return m.ndcg;
    if (name == "mrr") return m.mrr;
    if (name == "precision") return m.precision;
    throw std::runtime_error("unknown metric: " + name);
}

// hits = ranking[1..K] intersected with relevant.
//   hitrate   = 1 if any hit else 0
//   recall    = |hits| / |relevant|
//   precision = |hits| / K
//   mrr       = 1 / rank of first hit within top-K, else 0
//   ndcg      = DCG / IDCG, DCG = sum over hit ranks r of 1/log2(r+1),
//               IDCG = sum_{r=1..min(|relevant|,K)} 1/log2(r+1)
inline MetricsAtK metrics_at_k(const std::vector<std::uint32_t>& ranking,
                               const std::unordered_set<std::uint32_t>& relevant, std::size_t k) {
    if (relevant.empty()) throw std::runtime_error("metrics_at_k: empty relevance set");
    if (k == 0) throw std::runtime_error("metrics_at_k: K must be >= 1");

    MetricsAtK m;
    std::size_t hits = 0;
    double dcg = 0.0;
    std::size_t first_hit_rank = 0;
    const std::size_t depth = std::min(k, ranking.size());
    for (std::size_t pos = 0; pos < depth; ++pos) {
        if (relevant.count(ranking[pos])) {
            ++hits;
            const std::size_t rank = pos + 1;
            dcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
            if (first_hit_rank == 0) first_hit_rank = rank;
        }
    }
    double idcg = 0.0;
    const std::size_t ideal = std::min(relevant.size(), k);
    for (std::size_t rank = 1; rank <= ideal; ++rank)
        idcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);

    m.hitrate = hits > 0 ? 1.0 : 0.0;
    m.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
    m.precision = static_cast<double>(hits) / static_cast<double>(k);
    m.mrr = first_hit_rank > 0 ? 1.0 / static_cast<double>(first_hit_rank) : 0.0;
    m.ndcg = dcg / idcg;
    return m;
}

struct UserMetrics {
    std::uint32_t user = 0;
    MetricsAtK m;
};

// Arithmetic means, user-uniform weighting.
inline MetricsAtK aggregate(const std::vector<UserMetrics>& per_user) {
    if (per_user.empty()) throw std::runtime_error("aggregate: no users");
    MetricsAtK sum;
    for (const UserMetrics& u : per_user) {
        sum.hitrate += u.m.hitrate;
        sum.recall += u.m.recall;
        sum.ndcg += u.m.ndcg;
        sum.mrr += u.m.mrr;
        sum.precision += u.m.precision;
    }
    const double n = static_cast<double>(per_user.size());
    return {sum.hitrate / n, sum.recall / n, sum.ndcg / n, sum.mrr / n, sum.precision / n};
}

// Per evaluation user, the set of distinct eval items. Keyed by internal user
// index; only users present in `users` get a set.
inline std::vector<std::unordered_set<std::uint32_t>> relevance_sets(
    const std::vector<IndexedEvent>& eval_events, std::size_t n_users) {
    std::vector<std::unordered_set<std::uint32_t>> rel(n_users);
    for (const IndexedEvent& e : eval_events) rel[e.user].insert(e.item);
    return rel;
}

struct MetricReport {
    std::string model;
    std::string variant;
    std::size_t k = 0;
    std::vector<UserMetrics> per_user;
    MetricsAtK means;
};

inline MetricReport evaluate_rankings(const std::string& model, const std::string& variant,
                                      const std::vector<Ranking>& rankings,
                                      const std::vector<std::unordered_set<std::uint32_t>>& relevant,
                                      std::size_t k) {
    MetricReport report;
    report.model = model;
    report.variant = variant;
    report.k = k;
    for (const Ranking& r : rankings) {
        std::vector<std::uint32_t> items;
        items.reserve(r.items.size());
        for (const RankedItem& ri : r.items) items.push_back(ri.item);
        report.per_user.push_back({r.user, metrics_at_k(items, relevant[r.user], k)});
    }
    report.means = aggregate(report.per_user);
    return report;
}

// Paired bootstrap over users of mean(A - B). Two-sided p-value: twice the
// smaller tail proportion of resampled means at or across zero, capped at 1.
inline double bootstrap_significance(const std::vector<double>& a, const std::vector<double>& b,
                                     int resamples = 10000, std::uint64_t seed = 0) {
    if (a.size() != b.size())
        throw std::runtime_error("bootstrap_significance: vectors must be aligned on the same users");
    if (a.size() < 2) throw std::runtime_error("bootstrap_significance: need at least 2 users");
    if (resamples < 1) throw std::runtime_error("bootstrap_significance: resamples must be >= 1");

    const std::size_t n = a.size();
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t at_or_below = 0, at_or_above = 0;
    for (int r = 0; r < resamples; ++r) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += diff[pick(rng)];
        const double mean = sum / static_cast<double>(n);
        if (mean <= 0.0) ++at_or_below;
        if (mean >= 0.0) ++at_or_above;
    }
    const double denom = static_cast<double>(resamples);
    double p = 2.0 * std::min(static_cast<double>(at_or_below) / denom,
                              static_cast<double>(at_or_above) / denom);
    return std::min(p, 1.0);
}

inline void save_user_metrics_csv(const MetricReport& report, const IdMap& users,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "user_id,hitrate,recall,ndcg,mrr,precision\n";
    for (const UserMetrics& u : report.per_user) {
        out << users.name(u.user) << ',' << format_score(u.m.hitrate) << ','
            << format_score(u.m.recall) << ',' << format_score(u.m.ndcg) << ','
            << format_score(u.m.mrr) << ',' << format_score(u.m.precision) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace pare
