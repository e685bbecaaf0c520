#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pare/knn.hpp"
#include "pare/shallow.hpp"
#include "testutil.hpp"

using namespace pare;

namespace {

template <class S>
ShallowParams<S> identity_params(std::size_t n_users, std::size_t n_items, std::size_t dim) {
    ShallowParams<S> p;
    p.dim = static_cast<std::uint32_t>(dim);
    p.user_emb = Matrix<S>(n_users, dim);
    p.item_emb = Matrix<S>(n_items, dim);
    p.w_user = Matrix<S>(dim, dim);
    p.w_item = Matrix<S>(dim, dim);
    p.b_user.assign(dim, S(0));
    p.b_item.assign(dim, S(0));
    for (std::size_t d = 0; d < dim; ++d) {
        p.w_user.at(d, d) = S(1);
        p.w_item.at(d, d) = S(1);
    }
    return p;
}

struct FdFixture {
    DatasetSplit split;
    ShallowParams<double> params;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    std::vector<std::vector<std::uint32_t>> negatives;  // fixed per pair
};

double fixture_loss(const FdFixture& f, const ShallowParams<double>& p) {
    double loss = 0.0;
    for (std::size_t k = 0; k < f.pairs.size(); ++k)
        loss += hinge_loss(p, f.pairs[k].first, f.pairs[k].second, f.negatives[k]);
    return loss;
}

// True when every ReLU pre-activation, tower norm and hinge term is far enough
// from its kink that a central difference with step h stays one-sided.
bool kink_free(const FdFixture& f, double h) {
    const double margin_gap = 6.0 * h;
    int active = 0, total = 0;
    for (std::size_t k = 0; k < f.pairs.size(); ++k) {
        const auto [u, i] = f.pairs[k];
        TowerOut tu, ti, tv;
        tower_forward(f.params.w_user, f.params.b_user, f.params.user_emb.row(u), tu);
        tower_forward(f.params.w_item, f.params.b_item, f.params.item_emb.row(i), ti);
        for (double a : tu.a)
            if (std::abs(a) < margin_gap) return false;
        for (double a : ti.a)
            if (std::abs(a) < margin_gap) return false;
        if (tu.norm < 1e-2 || ti.norm < 1e-2) return false;
        const double s_pos = cosine_from_towers(tu, ti);
        for (std::uint32_t v : f.negatives[k]) {
            tower_forward(f.params.w_user, f.params.b_user, f.params.user_emb.row(v), tv);
            for (double a : tv.a)
                if (std::abs(a) < margin_gap) return false;
            if (tv.norm < 1e-2) return false;
            const double term = f.params.margin - s_pos + cosine_from_towers(tv, ti);
            if (std::abs(term) < margin_gap) return false;
            ++total;
            if (term > 0) ++active;
        }
    }
    return total > 0 && active * 4 >= total;  // at least a quarter of terms active
}

FdFixture make_fd_fixture() {
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        FdFixture f;
        auto [split, table] = testutil::small_split(5, 8, 6, 100 + seed);
        f.split = std::move(split);
        auto items = aligned_item_matrix(f.split, table).cast<double>();
        f.params = init_shallow(f.split, items, InitMode::RandomUnfrozen, seed);
        f.params.margin = 0.2;

        std::mt19937_64 rng(seed * 31 + 7);
        const auto index = InteractionIndex::build(f.split.seen, f.split.n_items());
        for (const auto& e : f.split.train) {
            if (f.pairs.size() >= 12) break;
            auto negs = sample_negative_users(rng, e.item, 4, index, f.split.seen);
            if (negs.empty()) continue;
            f.pairs.push_back({e.user, e.item});
            f.negatives.push_back(std::move(negs));
        }
        if (f.pairs.size() >= 6 && kink_free(f, 1e-3)) return f;
    }
    throw std::runtime_error("no kink-free fixture found");
}

struct TensorView {
    std::string name;
    std::vector<double>* values;
    const std::vector<double>* grad;
};

}  // namespace

TEST_CASE("pretrained init copies item rows and profile means") {
    auto [split, table] = testutil::small_split(6, 14, 5, 3);
    auto items = aligned_item_matrix(split, table);
    auto p = init_shallow(split, items, InitMode::PretrainedFrozen, 17);
    CHECK(p.item_frozen);
    CHECK(p.item_emb.data == items.data);

    // cross-module oracle: identical to knn profile construction, bit for bit
    auto profiles = build_user_profiles(split, items);
    CHECK(p.user_emb.data == profiles.data);

    // a user with a single train item gets that item's row
    for (std::uint32_t u = 0; u < split.n_users(); ++u) {
        if (split.seen.of(u).size() != 1) continue;
        const std::uint32_t only = split.seen.of(u)[0];
        for (std::size_t d = 0; d < 5; ++d) CHECK(p.user_emb.at(u, d) == items.at(only, d));
    }
}

TEST_CASE("random init is deterministic per seed") {
    auto [split, table] = testutil::small_split(5, 10, 4, 9);
    auto items = aligned_item_matrix(split, table);
    auto a = init_shallow(split, items, InitMode::RandomUnfrozen, 5);
    auto b = init_shallow(split, items, InitMode::RandomUnfrozen, 5);
    CHECK_FALSE(a.item_frozen);
    CHECK(a.user_emb.data == b.user_emb.data);
    CHECK(a.item_emb.data == b.item_emb.data);
    CHECK(a.w_user.data == b.w_user.data);
    auto c = init_shallow(split, items, InitMode::RandomUnfrozen, 6);
    CHECK(a.user_emb.data != c.user_emb.data);
}

TEST_CASE("score of identical towers on the same row is 1") {
    auto p = identity_params<double>(1, 1, 3);
    p.user_emb.at(0, 0) = 0.5;
    p.user_emb.at(0, 1) = 1.0;
    p.user_emb.at(0, 2) = 0.25;
    p.item_emb.data = p.user_emb.data;
    CHECK(shallow_score(p, 0, 0) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("a ReLU-dead tower scores exactly zero") {
    auto p = identity_params<double>(1, 1, 3);
    p.user_emb.at(0, 0) = -1.0;  // identity W, zero bias: all pre-activations negative
    p.user_emb.at(0, 1) = -2.0;
    p.user_emb.at(0, 2) = -3.0;
    p.item_emb.at(0, 0) = 1.0;
    CHECK(shallow_score(p, 0, 0) == 0.0);
}

TEST_CASE("score matches an independent straight-line recomputation") {
    auto [split, table] = testutil::small_split(4, 9, 5, 13);
    auto items = aligned_item_matrix(split, table).cast<double>();
    auto p = init_shallow(split, items, InitMode::RandomUnfrozen, 3);
    for (std::uint32_t u = 0; u < 4; ++u) {
        for (std::uint32_t i = 0; i < 9; ++i) {
            // oracle: plain loops, no shared helpers
            std::vector<double> hu(5), hi(5);
            for (std::size_t r = 0; r < 5; ++r) {
                double au = p.b_user[r], ai = p.b_item[r];
                for (std::size_t c = 0; c < 5; ++c) {
                    au += p.w_user.at(r, c) * p.user_emb.at(u, c);
                    ai += p.w_item.at(r, c) * p.item_emb.at(i, c);
                }
                hu[r] = au > 0 ? au : 0;
                hi[r] = ai > 0 ? ai : 0;
            }
            double dot = 0, nu = 0, ni = 0;
            for (std::size_t r = 0; r < 5; ++r) {
                dot += hu[r] * hi[r];
                nu += hu[r] * hu[r];
                ni += hi[r] * hi[r];
            }
            const double want = dot / (std::sqrt(nu) * std::sqrt(ni) + 1e-8);
            CHECK(shallow_score(p, u, i) == Catch::Approx(want).epsilon(1e-12));
            CHECK(shallow_score(p, u, i) >= -1.0);
            CHECK(shallow_score(p, u, i) <= 1.0);
        }
    }
}

TEST_CASE("hinge terms follow the margin formula") {
    std::vector<double> one_neg{0.5};
    CHECK(hinge_from_scores(0.9, one_neg, 0.2) == 0.0);
    one_neg[0] = 0.55;
    CHECK(hinge_from_scores(0.6, one_neg, 0.2) == Catch::Approx(0.15));
    // non-negativity, zero when every negative clears the margin
    std::vector<double> negs{0.1, 0.2, -0.3};
    CHECK(hinge_from_scores(0.95, negs, 0.2) == 0.0);
    CHECK(hinge_from_scores(-0.5, negs, 0.2) > 0.0);
}

TEST_CASE("hinge_loss equals the per-term oracle sum") {
    auto [split, table] = testutil::small_split(6, 10, 4, 23);
    auto items = aligned_item_matrix(split, table).cast<double>();
    auto p = init_shallow(split, items, InitMode::RandomUnfrozen, 8);
    p.margin = 0.2;
    std::vector<std::uint32_t> negs{0, 2, 3, 5, 1, 2};
    const std::uint32_t u = 4, i = 7;
    double want = 0.0;
    for (std::uint32_t v : negs)
        want += std::max(0.0, 0.2 - shallow_score(p, u, i) + shallow_score(p, v, i));
    CHECK(hinge_loss(p, u, i, negs) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("negative sampling defaults and forced-negative case") {
    CHECK(TrainConfig{}.n_neg == 20);
    CHECK(TrainConfig{}.lr == 0.001);
    CHECK(TrainConfig{}.epochs == 100);

    // item 0 heard by everyone except user 3
    SeenSets seen;
    seen.sets = {{0}, {0}, {0}, {}, {0}};
    seen.sets[3] = {1};
    auto index = InteractionIndex::build(seen, 2);
    std::mt19937_64 rng(1);
    auto negs = sample_negative_users(rng, 0, 20, index, seen);
    REQUIRE(negs.size() == 20);
    for (auto v : negs) CHECK(v == 3);
}

TEST_CASE("sampling returns empty when every user has the item") {
    SeenSets seen;
    seen.sets = {{0}, {0}, {0}};
    auto index = InteractionIndex::build(seen, 1);
    std::mt19937_64 rng(1);
    CHECK(sample_negative_users(rng, 0, 20, index, seen).empty());
}

TEST_CASE("negative draws are uniform over eligible users (chi-square)") {
    const std::uint32_t n_users = 30;
    SeenSets seen;
    seen.sets.resize(n_users);
    seen.sets[0] = {0};
    seen.sets[1] = {0};  // users 2..29 eligible for item 0
    auto index = InteractionIndex::build(seen, 1);
    std::mt19937_64 rng(42);
    std::vector<std::size_t> counts(n_users, 0);
    const std::size_t draws = 100000;
    for (std::size_t d = 0; d < draws / 20; ++d)
        for (auto v : sample_negative_users(rng, 0, 20, index, seen)) ++counts[v];

    CHECK(counts[0] == 0);
    CHECK(counts[1] == 0);
    const double expect = double(draws) / 28.0;
    double chi2 = 0.0;
    for (std::uint32_t u = 2; u < n_users; ++u) {
        const double d = double(counts[u]) - expect;
        chi2 += d * d / expect;
    }
    // df = 27: mean 27, sd = sqrt(54); 3 sigma above the mean
    CHECK(chi2 < 27.0 + 3.0 * std::sqrt(54.0));
}

TEST_CASE("training with zero epochs returns params unchanged") {
    auto [split, table] = testutil::small_split(6, 12, 4, 29);
    auto items = aligned_item_matrix(split, table);
    auto p = init_shallow(split, items, InitMode::PretrainedFrozen, 2);
    auto before_user = testutil::checksum(p.user_emb);
    TrainConfig cfg;
    cfg.epochs = 0;
    auto history = train_shallow(p, split, cfg);
    CHECK(history.empty());
    CHECK(testutil::checksum(p.user_emb) == before_user);
}

TEST_CASE("frozen item embeddings are bitwise invariant under training") {
    auto [split, table] = testutil::small_split(8, 16, 5, 37);
    auto items = aligned_item_matrix(split, table);
    auto p = init_shallow(split, items, InitMode::PretrainedFrozen, 4);
    const auto before = testutil::checksum(p.item_emb);
    const auto before_user = testutil::checksum(p.user_emb);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.n_neg = 5;
    cfg.batch_size = 16;
    cfg.seed = 11;
    auto history = train_shallow(p, split, cfg);
    CHECK(history.size() <= 5);
    CHECK(testutil::checksum(p.item_emb) == before);
    CHECK(testutil::checksum(p.user_emb) != before_user);  // user tower did move
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    auto [split, table] = testutil::small_split(6, 12, 4, 43);
    auto items = aligned_item_matrix(split, table);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.n_neg = 4;
    cfg.batch_size = 8;
    cfg.seed = 21;
    auto p1 = init_shallow(split, items, InitMode::RandomUnfrozen, 9);
    auto p2 = init_shallow(split, items, InitMode::RandomUnfrozen, 9);
    auto h1 = train_shallow(p1, split, cfg);
    auto h2 = train_shallow(p2, split, cfg);
    REQUIRE(h1.size() == h2.size());
    CHECK(p1.user_emb.data == p2.user_emb.data);
    CHECK(p1.item_emb.data == p2.item_emb.data);
    CHECK(p1.w_user.data == p2.w_user.data);
    for (std::size_t e = 0; e < h1.size(); ++e) CHECK(h1[e].train_loss == h2[e].train_loss);
}

TEST_CASE("analytic gradients match central finite differences (64-bit, h=1e-3)") {
    FdFixture f = make_fd_fixture();
    const double h = 1e-3;

    ShallowGrads grads;
    grads.resize_like(f.params);
    double loss = 0.0;
    for (std::size_t k = 0; k < f.pairs.size(); ++k)
        loss += shallow_pair_backward(f.params, f.pairs[k].first, f.pairs[k].second,
                                      f.negatives[k], grads);
    CHECK(loss == Catch::Approx(fixture_loss(f, f.params)).epsilon(1e-12));
    CHECK(loss > 0.0);

    std::vector<TensorView> tensors{
        {"user_emb", &f.params.user_emb.data, &grads.user_emb},
        {"item_emb", &f.params.item_emb.data, &grads.item_emb},
        {"w_user", &f.params.w_user.data, &grads.w_user},
        {"w_item", &f.params.w_item.data, &grads.w_item},
        {"b_user", &f.params.b_user, &grads.b_user},
        {"b_item", &f.params.b_item, &grads.b_item},
    };
    for (auto& t : tensors) {
        double max_abs = 1e-12, max_err = 0.0;
        for (std::size_t idx = 0; idx < t.values->size(); ++idx) {
            const double saved = (*t.values)[idx];
            (*t.values)[idx] = saved + h;
            const double up = fixture_loss(f, f.params);
            (*t.values)[idx] = saved - h;
            const double down = fixture_loss(f, f.params);
            (*t.values)[idx] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double an = (*t.grad)[idx];
            max_abs = std::max({max_abs, std::abs(fd), std::abs(an)});
            max_err = std::max(max_err, std::abs(fd - an));
        }
        INFO("tensor " << t.name);
        CHECK(max_err / max_abs <= 1e-4);
    }
}

TEST_CASE("recommend_shallow matches exhaustive scoring") {
    auto p = identity_params<float>(1, 3, 2);
    p.user_emb.at(0, 0) = 1.0f;
    p.item_emb.at(0, 0) = 1.0f;                              // x = [1,0]
    p.item_emb.at(1, 0) = 0.7f;
    p.item_emb.at(1, 1) = 0.7f;                              // y
    p.item_emb.at(2, 1) = 1.0f;                              // z = [0,1]
    SeenSets seen;
    seen.sets.resize(1);
    std::vector<std::uint32_t> users{0};
    auto rankings = recommend_shallow(p, seen, users, 2);
    REQUIRE(rankings.size() == 1);
    REQUIRE(rankings[0].items.size() == 2);
    CHECK(rankings[0].items[0].item == 0);
    CHECK(rankings[0].items[1].item == 1);
    CHECK(rankings[0].items[0].score == Catch::Approx(shallow_score(p, 0, 0)).epsilon(1e-12));

    SECTION("all items seen yields an empty truncated ranking") {
        seen.sets[0] = {0, 1, 2};
        auto r = recommend_shallow(p, seen, users, 2);
        CHECK(r[0].items.empty());
        CHECK(r[0].truncated);
    }
    SECTION("K beyond the catalogue returns all unseen with the truncation flag") {
        auto r = recommend_shallow(p, seen, users, 10);
        CHECK(r[0].items.size() == 3);
        CHECK(r[0].truncated);
    }
}

TEST_CASE("larger random instance agrees with a full-sort oracle") {
    auto [split, table] = testutil::small_split(5, 26, 6, 53);
    auto items = aligned_item_matrix(split, table);
    auto p = init_shallow(split, items, InitMode::PretrainedFrozen, 31);
    std::vector<std::uint32_t> users;
    for (std::uint32_t u = 0; u < split.n_users(); ++u) users.push_back(u);
    auto rankings = recommend_shallow(p, split.seen, users, 7);
    for (const auto& r : rankings) {
        std::vector<std::pair<double, std::uint32_t>> scored;
        for (std::uint32_t i = 0; i < split.n_items(); ++i) {
            if (split.seen.contains(r.user, i)) continue;
            scored.push_back({shallow_score(p, r.user, i), i});
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        REQUIRE(r.items.size() == std::min<std::size_t>(7, scored.size()));
        for (std::size_t pos = 0; pos < r.items.size(); ++pos) {
            CHECK(r.items[pos].item == scored[pos].second);
            if (pos > 0) CHECK(r.items[pos - 1].score >= r.items[pos].score);
            CHECK_FALSE(split.seen.contains(r.user, r.items[pos].item));
        }
    }
}
