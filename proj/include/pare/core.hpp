#pragma once
// Shared domain types: interaction events, external<->internal ID maps,
// embedding tables and per-user seen sets. Everything here is immutable
// after construction and safe to share across threads.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pare/matrix.hpp"

namespace pare {

struct Event {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;  // seconds since Unix epoch, non-negative

    bool operator==(const Event&) const = default;
};

// Raw implicit-feedback log. Canonical order is (user_id, timestamp, item_id),
// duplicates kept: repeated plays are real events.
struct InteractionLog {
    std::vector<Event> events;

    void canonicalize() {
        std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
            if (a.user_id != b.user_id) return a.user_id < b.user_id;
            if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
            return a.item_id < b.item_id;
        });
    }

    bool empty() const { return events.empty(); }
    std::size_t size() const { return events.size(); }
};

// Bijective map between external string IDs and contiguous 0-based indices,
// assigned in first-appearance order.
struct IdMap {
    std::unordered_map<std::string, std::uint32_t> forward;
    std::vector<std::string> backward;

    std::uint32_t add(const std::string& id) {
        auto it = forward.find(id);
        if (it != forward.end()) return it->second;
        auto idx = static_cast<std::uint32_t>(backward.size());
        forward.emplace(id, idx);
        backward.push_back(id);
        return idx;
    }

    std::optional<std::uint32_t> lookup(const std::string& id) const {
        auto it = forward.find(id);
        if (it == forward.end()) return std::nullopt;
        return it->second;
    }

    std::uint32_t require(const std::string& id) const {
        auto idx = lookup(id);
        if (!idx) throw std::runtime_error("unmapped ID: '" + id + "'");
        return *idx;
    }

    const std::string& name(std::uint32_t idx) const { return backward.at(idx); }
    std::size_t size() const { return backward.size(); }
    bool empty() const { return backward.empty(); }
};

// Item-ID-aligned table of pretrained representations (float32 storage).
struct EmbeddingTable {
    IdMap ids;
    MatrixF matrix;
    std::uint32_t dim = 0;

    std::size_t n_items() const { return ids.size(); }
};

struct IndexedEvent {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    std::int64_t timestamp = 0;

    bool operator==(const IndexedEvent&) const = default;
};

// Per-user set of distinct train items, stored as sorted vectors.
// A user that never appears in train has an empty set.
struct SeenSets {
    std::vector<std::vector<std::uint32_t>> sets;

    bool contains(std::uint32_t user, std::uint32_t item) const {
        if (user >= sets.size()) return false;
        const auto& s = sets[user];
        return std::binary_search(s.begin(), s.end(), item);
    }

    const std::vector<std::uint32_t>& of(std::uint32_t user) const {
        static const std::vector<std::uint32_t> kEmpty;
        return user < sets.size() ? sets[user] : kEmpty;
    }

    bool has_user(std::uint32_t user) const { return user < sets.size() && !sets[user].empty(); }
    std::size_t n_users() const { return sets.size(); }
};

struct IdMapResult {
    IdMap users;
    IdMap items;
    std::size_t dropped_items = 0;   // distinct log items with no embedding row
    std::size_t dropped_events = 0;  // events referencing those items
    std::string warning;             // non-empty when anything was dropped
};

// Map users/items to contiguous indices in first-appearance order. Items are
// mapped only if present in both the log and the embedding table; users are
// mapped from the surviving events so every mapped user keeps at least one event.
inline IdMapResult build_id_maps(const InteractionLog& log, const EmbeddingTable& embeddings) {
    if (log.empty()) throw std::runtime_error("build_id_maps: empty interaction log");

    IdMapResult out;
    std::unordered_map<std::string, bool> item_known;
    item_known.reserve(log.size());

    for (const Event& e : log.events) {
        auto it = item_known.find(e.item_id);
        bool keep;
        if (it == item_known.end()) {
            keep = embeddings.ids.lookup(e.item_id).has_value();
            item_known.emplace(e.item_id, keep);
            if (!keep) ++out.dropped_items;
        } else {
            keep = it->second;
        }
        if (!keep) {
            ++out.dropped_events;
            continue;
        }
        out.items.add(e.item_id);
        out.users.add(e.user_id);
    }

    if (out.items.empty()) {
        throw std::runtime_error(
            "build_id_maps: no overlap between log items (" + std::to_string(item_known.size()) +
            ") and embedding items (" + std::to_string(embeddings.n_items()) + ")");
    }
    if (out.dropped_items > 0) {
        out.warning = "dropped " + std::to_string(out.dropped_items) + " of " +
                      std::to_string(item_known.size()) + " log items (" +
                      std::to_string(out.dropped_events) + " events) lacking embeddings";
    }
    return out;
}

// seen(u) = distinct train items of u. Events must reference mapped IDs.
inline SeenSets build_seen_sets(const std::vector<IndexedEvent>& train_events, const IdMap& users,
                                const IdMap& items) {
    SeenSets seen;
    seen.sets.resize(users.size());
    for (const IndexedEvent& e : train_events) {
        if (e.user >= users.size())
            throw std::runtime_error("build_seen_sets: unmapped user index " + std::to_string(e.user));
        if (e.item >= items.size())
            throw std::runtime_error("build_seen_sets: unmapped item index " + std::to_string(e.item));
        seen.sets[e.user].push_back(e.item);
    }
    for (auto& s : seen.sets) {
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
    }
    return seen;
}

}  // namespace pare
