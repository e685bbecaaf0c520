#pragma once
// Temporal train/validation/test protocol: window the log around a boundary,
// drop holdout events whose user/item is cold or whose item the user already
// played, then halve the surviving users into validation and test at random.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pare/core.hpp"

namespace pare {

struct SplitConfig {
    std::int64_t boundary = 0;        // train/eval cut, seconds since epoch
    std::int64_t train_window = 0;    // seconds before boundary
    std::int64_t holdout_window = 0;  // seconds after boundary
    std::uint64_t user_half_split_seed = 0;

    void validate() const {
        if (train_window <= 0) throw std::runtime_error("SplitConfig: train_window must be > 0");
        if (holdout_window <= 0) throw std::runtime_error("SplitConfig: holdout_window must be > 0");
    }
};

constexpr std::int64_t kSecondsPerDay = 86400;

struct DatasetSplit {
    std::vector<IndexedEvent> train;
    std::vector<IndexedEvent> validation;
    std::vector<IndexedEvent> test;
    IdMap users;
    IdMap items;
    SeenSets seen;  // built from train
    std::vector<std::uint32_t> validation_users;  // sorted ascending
    std::vector<std::uint32_t> test_users;        // sorted ascending
    std::size_t dropped_items = 0;
    std::size_t dropped_events = 0;

    std::size_t n_users() const { return users.size(); }
    std::size_t n_items() const { return items.size(); }
};

// Half-open windows: train = [boundary - train_window, boundary),
// holdout = [boundary, boundary + holdout_window). Everything else is discarded.
inline std::pair<InteractionLog, InteractionLog> temporal_split(const InteractionLog& log,
                                                                const SplitConfig& config) {
    config.validate();
    InteractionLog train, holdout;
    const std::int64_t train_start = config.boundary - config.train_window;
    const std::int64_t holdout_end = config.boundary + config.holdout_window;
    for (const Event& e : log.events) {
        if (e.timestamp >= train_start && e.timestamp < config.boundary)
            train.events.push_back(e);
        else if (e.timestamp >= config.boundary && e.timestamp < holdout_end)
            holdout.events.push_back(e);
    }
    if (train.empty()) throw std::runtime_error("temporal_split: empty train window");
    if (holdout.empty()) throw std::runtime_error("temporal_split: empty holdout window");
    return {std::move(train), std::move(holdout)};
}

// Build the final split: internal IDs from train (items restricted to the
// embedding table), holdout sanitized to warm users/items and to items new in
// the user's history, users shuffled with the seed and dealt alternately to
// validation and test.
inline DatasetSplit sanitize_and_partition(const InteractionLog& train_log,
                                           const InteractionLog& holdout_log,
                                           const EmbeddingTable& embeddings, std::uint64_t seed) {
    IdMapResult maps = build_id_maps(train_log, embeddings);

    DatasetSplit split;
    split.users = std::move(maps.users);
    split.items = std::move(maps.items);
    split.dropped_items = maps.dropped_items;
    split.dropped_events = maps.dropped_events;

    split.train.reserve(train_log.size());
    for (const Event& e : train_log.events) {
        auto u = split.users.lookup(e.user_id);
        auto i = split.items.lookup(e.item_id);
        if (u && i) split.train.push_back({*u, *i, e.timestamp});
    }
    split.seen = build_seen_sets(split.train, split.users, split.items);

    // Sanitize holdout: warm user, warm item, and new to that user.
    std::vector<IndexedEvent> eval_events;
    for (const Event& e : holdout_log.events) {
        auto u = split.users.lookup(e.user_id);
        auto i = split.items.lookup(e.item_id);
        if (!u || !i) continue;
        if (split.seen.contains(*u, *i)) continue;
        eval_events.push_back({*u, *i, e.timestamp});
    }

    std::vector<std::uint32_t> eval_users;
    {
        std::unordered_set<std::uint32_t> seen_users;
        for (const IndexedEvent& e : eval_events) seen_users.insert(e.user);
        eval_users.assign(seen_users.begin(), seen_users.end());
        std::sort(eval_users.begin(), eval_users.end());
    }
    if (eval_users.empty())
        throw std::runtime_error("sanitize_and_partition: no eval users survive sanitization");

    std::mt19937_64 rng(seed);
    std::shuffle(eval_users.begin(), eval_users.end(), rng);

    std::vector<char> in_validation(split.users.size(), 0);
    std::vector<char> in_test(split.users.size(), 0);
    for (std::size_t pos = 0; pos < eval_users.size(); ++pos) {
        if (pos % 2 == 0) {
            in_validation[eval_users[pos]] = 1;
            split.validation_users.push_back(eval_users[pos]);
        } else {
            in_test[eval_users[pos]] = 1;
            split.test_users.push_back(eval_users[pos]);
        }
    }
    std::sort(split.validation_users.begin(), split.validation_users.end());
    std::sort(split.test_users.begin(), split.test_users.end());

    for (const IndexedEvent& e : eval_events) {
        if (in_validation[e.user])
            split.validation.push_back(e);
        else
            split.test.push_back(e);
    }
    return split;
}

inline DatasetSplit make_split(const InteractionLog& log, const SplitConfig& config,
                               const EmbeddingTable& embeddings) {
    auto [train, holdout] = temporal_split(log, config);
    return sanitize_and_partition(train, holdout, embeddings, config.user_half_split_seed);
}

struct PartitionCounts {
    std::string name;
    std::size_t n_users = 0;
    std::size_t n_items = 0;  // distinct
    std::size_t n_events = 0;
};

inline PartitionCounts count_partition(const std::string& name,
                                       const std::vector<IndexedEvent>& events) {
    std::unordered_set<std::uint32_t> users, items;
    for (const IndexedEvent& e : events) {
        users.insert(e.user);
        items.insert(e.item);
    }
    return {name, users.size(), items.size(), events.size()};
}

// One row per partition: |users|, |distinct items|, |events|.
inline std::vector<PartitionCounts> split_report(const DatasetSplit& split) {
    return {count_partition("train", split.train), count_partition("validation", split.validation),
            count_partition("test", split.test)};
}

// Gather embedding rows into the split's internal item index space.
inline MatrixF aligned_item_matrix(const DatasetSplit& split, const EmbeddingTable& embeddings) {
    MatrixF out(split.n_items(), embeddings.dim);
    for (std::uint32_t i = 0; i < split.n_items(); ++i) {
        std::uint32_t src = embeddings.ids.require(split.items.name(i));
        const float* row = embeddings.matrix.row(src);
        std::copy(row, row + embeddings.dim, out.row(i));
    }
    return out;
}

}  // namespace pare
