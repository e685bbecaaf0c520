#pragma once
// Profile-mean nearest-neighbour recommender: a user is the average of their
// train items' embeddings; recommendations are the closest unseen items by
// cosine similarity.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "pare/core.hpp"
#include "pare/ranking.hpp"
#include "pare/split.hpp"

namespace pare {

constexpr double kKnnNormEpsilon = 1e-12;

// Row u = mean of the embedding rows of u's distinct train items.
inline MatrixF build_user_profiles(const DatasetSplit& split, const MatrixF& item_matrix) {
    if (item_matrix.rows != split.n_items())
        throw std::runtime_error("build_user_profiles: item matrix not aligned to split");
    const std::size_t dim = item_matrix.cols;
    MatrixF profiles(split.n_users(), dim);
    std::vector<double> acc(dim);
    for (std::uint32_t u = 0; u < split.n_users(); ++u) {
        const auto& items = split.seen.of(u);
        if (items.empty())
            throw std::runtime_error("build_user_profiles: user " + split.users.name(u) +
                                     " has no train items");
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::uint32_t i : items) {
            const float* row = item_matrix.row(i);
            for (std::size_t d = 0; d < dim; ++d) acc[d] += static_cast<double>(row[d]);
        }
        float* out = profiles.row(u);
        for (std::size_t d = 0; d < dim; ++d)
            out[d] = static_cast<float>(acc[d] / static_cast<double>(items.size()));
    }
    return profiles;
}

inline double cosine_similarity(const float* a, const float* b, std::size_t dim) {
    const double dot = dot_acc(a, b, dim);
    const double na = norm_acc(a, dim);
    const double nb = norm_acc(b, dim);
    return dot / (na * nb + kKnnNormEpsilon);
}

// Top-K unseen items per user by cosine similarity to the profile.
inline std::vector<Ranking> recommend_knn(const MatrixF& profiles, const MatrixF& item_matrix,
                                          const SeenSets& seen,
                                          std::span<const std::uint32_t> users, std::size_t k) {
    if (k == 0) throw std::runtime_error("recommend_knn: K must be >= 1");
    if (profiles.cols != item_matrix.cols)
        throw std::runtime_error("recommend_knn: profile and item dims differ");
    const std::size_t dim = item_matrix.cols;
    const std::size_t n_items = item_matrix.rows;

    std::vector<double> item_norms(n_items);
    for (std::size_t i = 0; i < n_items; ++i) item_norms[i] = norm_acc(item_matrix.row(i), dim);

    std::vector<Ranking> out;
    out.reserve(users.size());
    std::vector<double> scores(n_items);
    for (std::uint32_t u : users) {
        const float* profile = profiles.row(u);
        const double pnorm = norm_acc(profile, dim);
        for (std::size_t i = 0; i < n_items; ++i) {
            const double dot = dot_acc(profile, item_matrix.row(i), dim);
            scores[i] = dot / (pnorm * item_norms[i] + kKnnNormEpsilon);
        }
        out.push_back(topk_ranking(u, scores, seen, k));
    }
    return out;
}

}  // namespace pare
