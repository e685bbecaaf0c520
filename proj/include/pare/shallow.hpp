#pragma once
// Two-tower model: trainable user embeddings, optionally frozen pretrained item
// embeddings, one fully connected layer per tower (dimension-preserving, ReLU),
// cosine scoring, and max-margin hinge loss against sampled negative users.
// Gradients are hand-derived; training is single-threaded and deterministic.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "pare/adam.hpp"
#include "pare/core.hpp"
#include "pare/eval.hpp"
#include "pare/matrix.hpp"
#include "pare/ranking.hpp"
#include "pare/split.hpp"

namespace pare {

constexpr double kScoreNormEpsilon = 1e-8;

enum class InitMode { PretrainedFrozen, RandomUnfrozen };

template <class S>
struct ShallowParams {
    Matrix<S> user_emb;  // n_users x dim, trainable
    Matrix<S> item_emb;  // n_items x dim, frozen in pretrained mode
    Matrix<S> w_user;    // dim x dim
    Matrix<S> w_item;    // dim x dim
    std::vector<S> b_user;
    std::vector<S> b_item;
    bool item_frozen = true;
    double margin = 0.2;
    std::uint32_t dim = 0;

    std::size_t n_users() const { return user_emb.rows; }
    std::size_t n_items() const { return item_emb.rows; }
};

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 100;
    int n_neg = 20;
    double margin = 0.2;
    int batch_size = 256;
    int early_stop_patience = 10;
    int plateau_patience = 5;
    double plateau_factor = 0.5;
    double lr_floor = 1e-5;
    std::uint64_t seed = 0;
    int monitor_k = 50;              // validation NDCG@K drives plateau/early stop
    bool monitor_validation = true;  // disabled -> fixed epoch count

    void validate() const {
        if (lr <= 0) throw std::runtime_error("TrainConfig: lr must be > 0");
        if (epochs < 0) throw std::runtime_error("TrainConfig: epochs must be >= 0");
        if (n_neg < 1) throw std::runtime_error("TrainConfig: n_neg must be >= 1");
        if (batch_size < 1) throw std::runtime_error("TrainConfig: batch_size must be >= 1");
    }
};

namespace detail {

// Mean of the user's distinct train item rows; identical arithmetic to
// build_user_profiles so the two stay bit-for-bit interchangeable.
template <class S>
void fill_profile_means(const DatasetSplit& split, const Matrix<S>& item_matrix, Matrix<S>& out) {
    const std::size_t dim = item_matrix.cols;
    std::vector<double> acc(dim);
    for (std::uint32_t u = 0; u < split.n_users(); ++u) {
        const auto& items = split.seen.of(u);
        if (items.empty())
            throw std::runtime_error("init_shallow: user " + split.users.name(u) +
                                     " has no train items");
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::uint32_t i : items) {
            const S* row = item_matrix.row(i);
            for (std::size_t d = 0; d < dim; ++d) acc[d] += static_cast<double>(row[d]);
        }
        S* dst = out.row(u);
        for (std::size_t d = 0; d < dim; ++d)
            dst[d] = static_cast<S>(acc[d] / static_cast<double>(items.size()));
    }
}

}  // namespace detail

template <class S>
ShallowParams<S> init_shallow(const DatasetSplit& split, const Matrix<S>& item_matrix, InitMode mode,
                              std::uint64_t seed) {
    if (item_matrix.rows != split.n_items())
        throw std::runtime_error("init_shallow: item matrix not aligned to split");
    ShallowParams<S> p;
    p.dim = static_cast<std::uint32_t>(item_matrix.cols);
    p.user_emb = Matrix<S>(split.n_users(), p.dim);
    p.item_emb = Matrix<S>(split.n_items(), p.dim);
    p.w_user = Matrix<S>(p.dim, p.dim);
    p.w_item = Matrix<S>(p.dim, p.dim);
    p.b_user.assign(p.dim, S(0));
    p.b_item.assign(p.dim, S(0));

    std::mt19937_64 rng(mix_seed(seed, "shallow.init"));
    if (mode == InitMode::PretrainedFrozen) {
        p.item_frozen = true;
        p.item_emb = item_matrix;
        detail::fill_profile_means(split, item_matrix, p.user_emb);
    } else {
        p.item_frozen = false;
        fill_normal(p.user_emb, 1.0 / std::sqrt(static_cast<double>(p.dim)), rng);
        fill_normal(p.item_emb, 1.0 / std::sqrt(static_cast<double>(p.dim)), rng);
    }
    fill_uniform_fan_in(p.w_user, p.dim, rng);
    fill_uniform_fan_in(p.w_item, p.dim, rng);
    return p;
}

// Random baseline without a pretrained table: both towers random at the given dim.
template <class S>
ShallowParams<S> init_shallow_random(const DatasetSplit& split, std::uint32_t dim,
                                     std::uint64_t seed) {
    Matrix<S> dummy(split.n_items(), dim);
    return init_shallow(split, dummy, InitMode::RandomUnfrozen, seed);
}

struct TowerOut {
    std::vector<double> a;  // pre-activation
    std::vector<double> h;  // ReLU(a)
    double norm = 0.0;
};

template <class S>
inline void tower_forward(const Matrix<S>& w, const std::vector<S>& b, const S* e, TowerOut& out) {
    const std::size_t dim = w.rows;
    out.a.resize(dim);
    out.h.resize(dim);
    double sq = 0.0;
    for (std::size_t r = 0; r < dim; ++r) {
        double acc = static_cast<double>(b[r]);
        const S* wrow = w.row(r);
        for (std::size_t c = 0; c < dim; ++c)
            acc += static_cast<double>(wrow[c]) * static_cast<double>(e[c]);
        out.a[r] = acc;
        const double h = acc > 0.0 ? acc : 0.0;
        out.h[r] = h;
        sq += h * h;
    }
    out.norm = std::sqrt(sq);
}

inline double cosine_from_towers(const TowerOut& tu, const TowerOut& ti) {
    double dot = 0.0;
    for (std::size_t d = 0; d < tu.h.size(); ++d) dot += tu.h[d] * ti.h[d];
    return dot / (tu.norm * ti.norm + kScoreNormEpsilon);
}

// cos(ReLU(W_u e_u + b_u), ReLU(W_i e_i + b_i)) with epsilon in the norm product.
template <class S>
double shallow_score(const ShallowParams<S>& p, std::uint32_t u, std::uint32_t i) {
    TowerOut tu, ti;
    tower_forward(p.w_user, p.b_user, p.user_emb.row(u), tu);
    tower_forward(p.w_item, p.b_item, p.item_emb.row(i), ti);
    return cosine_from_towers(tu, ti);
}

inline double hinge_from_scores(double s_pos, std::span<const double> s_negs, double margin) {
    double loss = 0.0;
    for (double s : s_negs) loss += std::max(0.0, margin - s_pos + s);
    return loss;
}

// Sum over negatives of max(0, m - score(u,i) + score(v,i)).
template <class S>
double hinge_loss(const ShallowParams<S>& p, std::uint32_t u, std::uint32_t i,
                  std::span<const std::uint32_t> negatives) {
    if (negatives.empty()) throw std::runtime_error("hinge_loss: empty negative set");
    TowerOut ti;
    tower_forward(p.w_item, p.b_item, p.item_emb.row(i), ti);
    TowerOut tu;
    tower_forward(p.w_user, p.b_user, p.user_emb.row(u), tu);
    const double s_pos = cosine_from_towers(tu, ti);
    double loss = 0.0;
    TowerOut tv;
    for (std::uint32_t v : negatives) {
        tower_forward(p.w_user, p.b_user, p.user_emb.row(v), tv);
        loss += std::max(0.0, p.margin - s_pos + cosine_from_towers(tv, ti));
    }
    return loss;
}

// Per-item count of users who have it in their seen set, for negative-sampling
// eligibility checks.
struct InteractionIndex {
    std::uint32_t n_users = 0;
    std::vector<std::uint32_t> users_per_item;

    static InteractionIndex build(const SeenSets& seen, std::size_t n_items) {
        InteractionIndex idx;
        idx.n_users = static_cast<std::uint32_t>(seen.n_users());
        idx.users_per_item.assign(n_items, 0);
        for (const auto& s : seen.sets)
            for (std::uint32_t i : s) ++idx.users_per_item[i];
        return idx;
    }
};

// n_neg users drawn uniformly (rejection-resampled) from users who have not
// interacted with the item. Returns empty when every user has.
inline std::vector<std::uint32_t> sample_negative_users(std::mt19937_64& rng, std::uint32_t item,
                                                        int n_neg, const InteractionIndex& index,
                                                        const SeenSets& seen) {
    std::vector<std::uint32_t> out;
    if (index.users_per_item[item] >= index.n_users) return out;  // nobody eligible
    out.reserve(static_cast<std::size_t>(n_neg));
    std::uniform_int_distribution<std::uint32_t> pick(0, index.n_users - 1);
    while (out.size() < static_cast<std::size_t>(n_neg)) {
        std::uint32_t v = pick(rng);
        if (!seen.contains(v, item)) out.push_back(v);
    }
    return out;
}

struct ShallowGrads {
    std::vector<double> user_emb, item_emb, w_user, w_item, b_user, b_item;

    template <class S>
    void resize_like(const ShallowParams<S>& p) {
        user_emb.assign(p.user_emb.size(), 0.0);
        item_emb.assign(p.item_emb.size(), 0.0);
        w_user.assign(p.w_user.size(), 0.0);
        w_item.assign(p.w_item.size(), 0.0);
        b_user.assign(p.dim, 0.0);
        b_item.assign(p.dim, 0.0);
    }

    void clear() {
        auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
        zero(user_emb);
        zero(item_emb);
        zero(w_user);
        zero(w_item);
        zero(b_user);
        zero(b_item);
    }
};

namespace detail {

// d(cos)/dh for one side: h_other/D - dot*n_other*h_this/(n_this*D^2).
inline void cosine_backward_side(const TowerOut& self, const TowerOut& other, double dot,
                                 double denom, double upstream, std::vector<double>& g_h) {
    const std::size_t dim = self.h.size();
    g_h.resize(dim);
    const double inv_d = 1.0 / denom;
    const double coef = self.norm > 0.0 ? dot * other.norm / (self.norm * denom * denom) : 0.0;
    for (std::size_t d = 0; d < dim; ++d)
        g_h[d] = upstream * (other.h[d] * inv_d - coef * self.h[d]);
}

// Backprop one tower instance into its weight/bias/embedding gradients.
template <class S>
void tower_backward(const Matrix<S>& w, const S* e, const TowerOut& t,
                    const std::vector<double>& g_h, std::span<double> g_w, std::span<double> g_b,
                    std::span<double> g_e) {
    const std::size_t dim = w.rows;
    for (std::size_t r = 0; r < dim; ++r) {
        if (t.a[r] <= 0.0) continue;  // ReLU mask
        const double g = g_h[r];
        if (g == 0.0) continue;
        g_b[r] += g;
        double* gw_row = g_w.data() + r * dim;
        const S* w_row = w.row(r);
        for (std::size_t c = 0; c < dim; ++c) {
            gw_row[c] += g * static_cast<double>(e[c]);
            g_e[c] += g * static_cast<double>(w_row[c]);
        }
    }
}

}  // namespace detail

// Hinge loss for one positive pair plus its gradient contributions.
template <class S>
double shallow_pair_backward(const ShallowParams<S>& p, std::uint32_t u, std::uint32_t i,
                             std::span<const std::uint32_t> negatives, ShallowGrads& g) {
    const std::size_t dim = p.dim;
    TowerOut ti, tu, tv;
    tower_forward(p.w_item, p.b_item, p.item_emb.row(i), ti);
    tower_forward(p.w_user, p.b_user, p.user_emb.row(u), tu);
    const double dot_pos = [&] {
        double d = 0.0;
        for (std::size_t k = 0; k < dim; ++k) d += tu.h[k] * ti.h[k];
        return d;
    }();
    const double denom_pos = tu.norm * ti.norm + kScoreNormEpsilon;
    const double s_pos = dot_pos / denom_pos;

    double loss = 0.0;
    int active = 0;
    std::vector<double> g_h_item(dim, 0.0), g_h_user, g_h_tmp;
    std::span<double> g_ue(g.user_emb);
    std::span<double> g_ie(g.item_emb);

    for (std::uint32_t v : negatives) {
        tower_forward(p.w_user, p.b_user, p.user_emb.row(v), tv);
        double dot_v = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot_v += tv.h[k] * ti.h[k];
        const double denom_v = tv.norm * ti.norm + kScoreNormEpsilon;
        const double s_v = dot_v / denom_v;
        const double term = p.margin - s_pos + s_v;
        if (term <= 0.0) continue;
        loss += term;
        ++active;

        // negative user tower gets +1 * ds_v
        detail::cosine_backward_side(tv, ti, dot_v, denom_v, 1.0, g_h_user);
        detail::tower_backward(p.w_user, p.user_emb.row(v), tv, g_h_user, g.w_user, g.b_user,
                               g_ue.subspan(static_cast<std::size_t>(v) * dim, dim));
        // item side of s_v
        detail::cosine_backward_side(ti, tv, dot_v, denom_v, 1.0, g_h_tmp);
        for (std::size_t d = 0; d < dim; ++d) g_h_item[d] += g_h_tmp[d];
    }

    if (active > 0) {
        const double up = -static_cast<double>(active);
        detail::cosine_backward_side(tu, ti, dot_pos, denom_pos, up, g_h_user);
        detail::tower_backward(p.w_user, p.user_emb.row(u), tu, g_h_user, g.w_user, g.b_user,
                               g_ue.subspan(static_cast<std::size_t>(u) * dim, dim));
        detail::cosine_backward_side(ti, tu, dot_pos, denom_pos, up, g_h_tmp);
        for (std::size_t d = 0; d < dim; ++d) g_h_item[d] += g_h_tmp[d];

        detail::tower_backward(p.w_item, p.item_emb.row(i), ti, g_h_item, g.w_item, g.b_item,
                               g_ie.subspan(static_cast<std::size_t>(i) * dim, dim));
    }
    return loss;
}

template <class S>
std::vector<Ranking> recommend_shallow(const ShallowParams<S>& p, const SeenSets& seen,
                                       std::span<const std::uint32_t> users, std::size_t k) {
    if (k == 0) throw std::runtime_error("recommend_shallow: K must be >= 1");
    const std::size_t n_items = p.n_items();
    std::vector<TowerOut> item_towers(n_items);
    for (std::size_t i = 0; i < n_items; ++i)
        tower_forward(p.w_item, p.b_item, p.item_emb.row(i), item_towers[i]);

    std::vector<Ranking> out;
    out.reserve(users.size());
    std::vector<double> scores(n_items);
    TowerOut tu;
    for (std::uint32_t u : users) {
        tower_forward(p.w_user, p.b_user, p.user_emb.row(u), tu);
        for (std::size_t i = 0; i < n_items; ++i) scores[i] = cosine_from_towers(tu, item_towers[i]);
        out.push_back(topk_ranking(u, scores, seen, k));
    }
    return out;
}

namespace detail {

template <class S>
double validation_ndcg(const ShallowParams<S>& p, const DatasetSplit& split, int k) {
    auto rel = relevance_sets(split.validation, split.n_users());
    auto rankings = recommend_shallow(p, split.seen, split.validation_users,
                                      static_cast<std::size_t>(k));
    auto report = evaluate_rankings("shallow", "val", rankings, rel, static_cast<std::size_t>(k));
    return report.means.ndcg;
}

}  // namespace detail

// Epochs over shuffled positive pairs, fresh negatives each epoch, Adam
// updates per mini-batch. Validation NDCG drives reduce-on-plateau and early
// stopping; the best-validation snapshot is restored at the end.
template <class S>
TrainHistory train_shallow(ShallowParams<S>& p, const DatasetSplit& split,
                           const TrainConfig& config) {
    config.validate();
    p.margin = config.margin;
    TrainHistory history;
    if (config.epochs == 0) return history;

    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    pairs.reserve(split.train.size());
    for (const IndexedEvent& e : split.train) pairs.emplace_back(e.user, e.item);
    if (pairs.empty()) throw std::runtime_error("train_shallow: no train pairs");

    const InteractionIndex index = InteractionIndex::build(split.seen, split.n_items());
    std::mt19937_64 rng(mix_seed(config.seed, "shallow.train"));

    const bool monitor = config.monitor_validation && !split.validation_users.empty();
    PlateauController controller{config.plateau_factor, config.plateau_patience,
                                 config.early_stop_patience, config.lr_floor};
    double lr = config.lr;
    ShallowParams<S> best;
    bool have_best = false;

    ShallowGrads grads;
    grads.resize_like(p);
    AdamState st_user_emb, st_item_emb, st_w_user, st_w_item, st_b_user, st_b_item;
    st_user_emb.resize(p.user_emb.size());
    st_w_user.resize(p.w_user.size());
    st_w_item.resize(p.w_item.size());
    st_b_user.resize(p.dim);
    st_b_item.resize(p.dim);
    if (!p.item_frozen) st_item_emb.resize(p.item_emb.size());

    std::vector<std::uint32_t> negatives;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        double epoch_loss = 0.0;
        std::size_t used_pairs = 0, skipped_pairs = 0;

        for (std::size_t start = 0; start < pairs.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(pairs.size(), start + static_cast<std::size_t>(config.batch_size));
            grads.clear();
            double batch_loss = 0.0;
            for (std::size_t idx = start; idx < stop; ++idx) {
                const auto [u, i] = pairs[idx];
                negatives = sample_negative_users(rng, i, config.n_neg, index, split.seen);
                if (negatives.empty()) {
                    ++skipped_pairs;
                    continue;
                }
                batch_loss += shallow_pair_backward(p, u, i, negatives, grads);
                ++used_pairs;
            }
            check_finite_loss(batch_loss, epoch, start / config.batch_size, "train_shallow");
            epoch_loss += batch_loss;

            const double cur_lr = lr;
            adam_step<S>(st_user_emb, p.user_emb.data, grads.user_emb, cur_lr);
            adam_step<S>(st_w_user, p.w_user.data, grads.w_user, cur_lr);
            adam_step<S>(st_w_item, p.w_item.data, grads.w_item, cur_lr);
            adam_step<S>(st_b_user, std::span<S>(p.b_user), grads.b_user, cur_lr);
            adam_step<S>(st_b_item, std::span<S>(p.b_item), grads.b_item, cur_lr);
            if (!p.item_frozen) adam_step<S>(st_item_emb, p.item_emb.data, grads.item_emb, cur_lr);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = used_pairs > 0 ? epoch_loss / static_cast<double>(used_pairs) : 0.0;
        stats.lr = lr;
        stats.skipped_pairs = skipped_pairs;
        if (monitor) {
            stats.val_metric = detail::validation_ndcg(p, split, config.monitor_k);
            const bool stop = controller.observe(stats.val_metric, lr);
            if (controller.should_snapshot()) {
                best = p;
                have_best = true;
            }
            history.push_back(stats);
            if (stop) break;
        } else {
            history.push_back(stats);
        }
    }

    if (have_best) p = std::move(best);
    return history;
}

}  // namespace pare
