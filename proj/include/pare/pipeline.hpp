#pragma once
// Configuration-driven pipeline: split -> train/run each (model, embedding
// variant) pair -> evaluate -> persist rankings, metrics, checkpoints and the
// comparison report. Failures are isolated per pair. Outputs are deterministic
// for a fixed config and seed: no timestamps, relative paths, sorted JSON keys.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pare/checkpoint.hpp"
#include "pare/core.hpp"
#include "pare/eval.hpp"
#include "pare/ingest.hpp"
#include "pare/knn.hpp"
#include "pare/report.hpp"
#include "pare/seqrec.hpp"
#include "pare/shallow.hpp"
#include "pare/split.hpp"

namespace pare {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Days-from-civil (Howard Hinnant's algorithm); UTC midnight.
inline std::int64_t parse_date_utc(const std::string& s) {
    int y = 0, m = 0, d = 0;
    if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 || d < 1 || d > 31)
        throw std::runtime_error("bad date (expected YYYY-MM-DD): " + s);
    const int yy = y - (m <= 2 ? 1 : 0);
    const int era = (yy >= 0 ? yy : yy - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(yy - era * 400);
    const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    const std::int64_t days = static_cast<std::int64_t>(era) * 146097 +
                              static_cast<std::int64_t>(doe) - 719468;
    return days * kSecondsPerDay;
}

struct VariantConfig {
    std::string name;
    std::string embeddings_path;
};

struct RunConfig {
    std::string interactions_path;
    LogFormat log_format = LogFormat::Auto;
    std::vector<std::string> models;  // knn | shallow | seqrec
    std::vector<VariantConfig> variants;
    bool random_baseline = true;  // adds a "random" row for shallow/seqrec
    std::uint32_t random_dim = 64;
    std::size_t k = 50;
    std::uint64_t seed = 42;
    SplitConfig split;
    TrainConfig shallow;
    SeqTrainConfig seqrec;

    void validate() const {
        namespace fs = std::filesystem;
        if (interactions_path.empty() || !fs::exists(interactions_path))
            throw std::runtime_error("config: interactions file not found: " + interactions_path);
        if (k < 1) throw std::runtime_error("config: k must be >= 1");
        if (models.empty()) throw std::runtime_error("config: no models selected");
        for (const auto& m : models)
            if (m != "knn" && m != "shallow" && m != "seqrec")
                throw std::runtime_error("config: unknown model '" + m + "'");
        if (variants.empty()) throw std::runtime_error("config: no embedding variants");
        std::vector<std::string> names;
        for (const auto& v : variants) {
            if (v.name.empty()) throw std::runtime_error("config: variant with empty name");
            if (v.name == kRandomVariant)
                throw std::runtime_error("config: variant name 'random' is reserved");
            names.push_back(v.name);
            if (!fs::exists(v.embeddings_path))
                throw std::runtime_error("config: embeddings file not found for variant '" +
                                         v.name + "': " + v.embeddings_path);
        }
        std::sort(names.begin(), names.end());
        if (std::adjacent_find(names.begin(), names.end()) != names.end())
            throw std::runtime_error("config: duplicate variant names");
        split.validate();
    }
};

namespace detail {

inline std::int64_t json_timestamp(const nlohmann::json& j) {
    if (j.is_string()) return parse_date_utc(j.get<std::string>());
    return j.get<std::int64_t>();
}

}  // namespace detail

// Every protocol constant surfaces as a named field with its default value:
// boundary 2020-02-20, windows 365/30 days, K = 50, lr = 0.001, 100/200 epochs,
// 20 negative users, sequence cap 300.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig c;
    c.interactions_path = j.at("interactions").get<std::string>();
    if (j.contains("format")) {
        const std::string f = j.at("format").get<std::string>();
        if (f == "tsv")
            c.log_format = LogFormat::Tsv;
        else if (f == "csv")
            c.log_format = LogFormat::Csv;
        else
            throw std::runtime_error("config: format must be tsv or csv");
    }
    c.models = j.value("models", std::vector<std::string>{"knn", "shallow", "seqrec"});
    for (const auto& v : j.at("variants"))
        c.variants.push_back(
            {v.at("name").get<std::string>(), v.at("embeddings").get<std::string>()});
    c.random_baseline = j.value("random_baseline", true);
    c.random_dim = j.value("random_dim", 64u);
    c.k = j.value("k", std::size_t{50});
    c.seed = j.value("seed", std::uint64_t{42});

    const nlohmann::json split = j.value("split", nlohmann::json::object());
    c.split.boundary = split.contains("boundary") ? detail::json_timestamp(split.at("boundary"))
                                                  : parse_date_utc("2020-02-20");
    c.split.train_window = split.value("train_window_days", std::int64_t{365}) * kSecondsPerDay;
    c.split.holdout_window = split.value("holdout_window_days", std::int64_t{30}) * kSecondsPerDay;
    c.split.user_half_split_seed = split.value("seed", c.seed);

    const nlohmann::json sh = j.value("shallow", nlohmann::json::object());
    c.shallow.lr = sh.value("lr", 1e-3);
    c.shallow.epochs = sh.value("epochs", 100);
    c.shallow.n_neg = sh.value("n_neg", 20);
    c.shallow.margin = sh.value("margin", 0.2);
    c.shallow.batch_size = sh.value("batch_size", 256);
    c.shallow.early_stop_patience = sh.value("early_stop_patience", 10);
    c.shallow.plateau_patience = sh.value("plateau_patience", 5);
    c.shallow.plateau_factor = sh.value("plateau_factor", 0.5);
    c.shallow.lr_floor = sh.value("lr_floor", 1e-5);
    c.shallow.monitor_k = sh.value("monitor_k", 50);

    const nlohmann::json sq = j.value("seqrec", nlohmann::json::object());
    c.seqrec.lr = sq.value("lr", 1e-3);
    c.seqrec.epochs = sq.value("epochs", 200);
    c.seqrec.mask_prob = sq.value("mask_prob", 0.2);
    c.seqrec.d_model = sq.value("d_model", 64);
    c.seqrec.n_layers = sq.value("layers", 2);
    c.seqrec.n_heads = sq.value("heads", 2);
    c.seqrec.d_ff = sq.value("ff_dim", 0);
    c.seqrec.batch_size = sq.value("batch_size", 32);
    c.seqrec.max_len = sq.value("max_len", 300);
    c.seqrec.early_stop_patience = sq.value("early_stop_patience", 10);
    c.seqrec.plateau_patience = sq.value("plateau_patience", 5);
    c.seqrec.plateau_factor = sq.value("plateau_factor", 0.5);
    c.seqrec.lr_floor = sq.value("lr_floor", 1e-5);
    c.seqrec.monitor_k = sq.value("monitor_k", 50);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return parse_run_config(nlohmann::json::parse(in));
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct PairResult {
    std::string model;
    std::string variant;
    bool ok = false;
    std::string error;
    std::vector<std::string> artifacts;  // relative to the run directory
};

struct RunResult {
    std::vector<PairResult> pairs;
    bool all_ok() const {
        for (const auto& p : pairs)
            if (!p.ok) return false;
        return true;
    }
    bool any_ok() const {
        for (const auto& p : pairs)
            if (p.ok) return true;
        return false;
    }
};

namespace detail {

struct VariantState {
    DatasetSplit split;
    MatrixF item_matrix;
    SequenceDataset sequences;  // built lazily for seqrec
    bool sequences_built = false;
    std::vector<std::unordered_set<std::uint32_t>> test_relevance;
};

struct PipelineContext {
    const RunConfig& config;
    std::filesystem::path out_dir;
    InteractionLog log;
    std::map<std::string, std::unique_ptr<VariantState>> variants;
    std::map<std::string, std::map<std::string, MetricReport>> reports;  // model -> variant
    nlohmann::json split_counts = nlohmann::json::object();
};

inline VariantState& variant_state(PipelineContext& ctx, const std::string& name) {
    auto it = ctx.variants.find(name);
    if (it != ctx.variants.end()) return *it->second;

    const VariantConfig* vc = nullptr;
    for (const auto& v : ctx.config.variants)
        if (v.name == name) vc = &v;
    if (!vc) throw std::runtime_error("unknown variant: " + name);

    auto state = std::make_unique<VariantState>();
    EmbeddingTable table = load_embeddings(vc->embeddings_path);
    state->split = make_split(ctx.log, ctx.config.split, table);
    state->item_matrix = aligned_item_matrix(state->split, table);
    state->test_relevance = relevance_sets(state->split.test, state->split.n_users());

    nlohmann::json counts;
    for (const auto& row : split_report(state->split))
        counts[row.name] = {{"users", row.n_users}, {"items", row.n_items}, {"events", row.n_events}};
    counts["dropped_items"] = state->split.dropped_items;
    counts["dropped_events"] = state->split.dropped_events;
    ctx.split_counts[name] = counts;

    auto& ref = *state;
    ctx.variants.emplace(name, std::move(state));
    return ref;
}

inline std::uint64_t pair_seed(const RunConfig& c, const std::string& model,
                               const std::string& variant) {
    return mix_seed(c.seed, model + "/" + variant);
}

// The random baseline borrows the first variant's split (same interactions,
// same item universe); its item vectors are freshly seeded, not loaded.
inline const std::string& baseline_host_variant(const RunConfig& c) {
    return c.variants.front().name;
}

inline void persist_pair(PipelineContext& ctx, PairResult& res, const DatasetSplit& split,
                         const std::vector<Ranking>& rankings, const MetricReport& report,
                         const Checkpoint* ckpt, const TrainHistory* history) {
    namespace fs = std::filesystem;
    const fs::path dir = ctx.out_dir / res.model / res.variant;
    fs::create_directories(dir);
    auto rel = [&](const fs::path& p) { return fs::relative(p, ctx.out_dir).generic_string(); };

    const fs::path ranking_path = dir / "ranking.tsv";
    save_rankings_tsv(rankings, split.users, split.items, ranking_path.string());
    res.artifacts.push_back(rel(ranking_path));

    const fs::path metrics_path = dir / "metrics_users.csv";
    save_user_metrics_csv(report, split.users, metrics_path.string());
    res.artifacts.push_back(rel(metrics_path));

    PairSummary summary{res.model, res.variant, report.k, report.per_user.size(), report.means};
    const fs::path summary_path = dir / "summary.json";
    save_summary_json(summary, summary_path.string());
    res.artifacts.push_back(rel(summary_path));

    if (ckpt) {
        const fs::path ckpt_path = dir / "checkpoint.parc";
        save_checkpoint(*ckpt, ckpt_path.string());
        res.artifacts.push_back(rel(ckpt_path));
    }
    if (history) {
        const fs::path hist_path = dir / "history.csv";
        save_history_csv(*history, hist_path.string());
        res.artifacts.push_back(rel(hist_path));
    }

    ctx.reports[res.model].emplace(res.variant, report);
}

inline Checkpoint shallow_checkpoint(const ShallowParams<float>& p, const std::string& config_echo) {
    Checkpoint ckpt;
    ckpt.model_kind = "shallow";
    ckpt.config_echo = config_echo;
    ckpt.add("user_emb", p.user_emb);
    ckpt.add("item_emb", p.item_emb);
    ckpt.add("w_user", p.w_user);
    ckpt.add("b_user", p.b_user);
    ckpt.add("w_item", p.w_item);
    ckpt.add("b_item", p.b_item);
    return ckpt;
}

inline Checkpoint seqrec_checkpoint(const SeqParams<float>& p, const std::string& config_echo) {
    Checkpoint ckpt;
    ckpt.model_kind = "seqrec";
    ckpt.config_echo = config_echo;
    ckpt.add("item_table", p.item_table);
    if (p.pretrained_mode) ckpt.add("input_proj", p.input_proj);
    ckpt.add("special_emb", p.special_emb);
    ckpt.add("pos_emb", p.pos_emb);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const auto& b = p.blocks[l];
        const std::string prefix = "block" + std::to_string(l) + ".";
        ckpt.add(prefix + "w_q", b.w_q);
        ckpt.add(prefix + "b_q", b.b_q);
        ckpt.add(prefix + "w_k", b.w_k);
        ckpt.add(prefix + "b_k", b.b_k);
        ckpt.add(prefix + "w_v", b.w_v);
        ckpt.add(prefix + "b_v", b.b_v);
        ckpt.add(prefix + "w_o", b.w_o);
        ckpt.add(prefix + "b_o", b.b_o);
        ckpt.add(prefix + "ln1_gamma", b.ln1_gamma);
        ckpt.add(prefix + "ln1_beta", b.ln1_beta);
        ckpt.add(prefix + "w_ff1", b.w_ff1);
        ckpt.add(prefix + "b_ff1", b.b_ff1);
        ckpt.add(prefix + "w_ff2", b.w_ff2);
        ckpt.add(prefix + "b_ff2", b.b_ff2);
        ckpt.add(prefix + "ln2_gamma", b.ln2_gamma);
        ckpt.add(prefix + "ln2_beta", b.ln2_beta);
    }
    ckpt.add("head_w", p.head_w);
    ckpt.add("head_b", p.head_b);
    return ckpt;
}

inline void run_pair(PipelineContext& ctx, PairResult& res, const nlohmann::json& config_echo) {
    const bool is_random = res.variant == kRandomVariant;
    const std::string host = is_random ? baseline_host_variant(ctx.config) : res.variant;
    VariantState& vs = variant_state(ctx, host);
    const DatasetSplit& split = vs.split;
    const std::uint64_t seed = pair_seed(ctx.config, res.model, res.variant);
    const std::string echo = config_echo.dump();

    if (res.model == "knn") {
        MatrixF profiles = build_user_profiles(split, vs.item_matrix);
        auto rankings = recommend_knn(profiles, vs.item_matrix, split.seen, split.test_users,
                                      ctx.config.k);
        auto report = evaluate_rankings(res.model, res.variant, rankings, vs.test_relevance,
                                        ctx.config.k);
        persist_pair(ctx, res, split, rankings, report, nullptr, nullptr);
    } else if (res.model == "shallow") {
        TrainConfig tc = ctx.config.shallow;
        tc.seed = seed;
        ShallowParams<float> params =
            is_random ? init_shallow_random<float>(split, ctx.config.random_dim, seed)
                      : init_shallow(split, vs.item_matrix, InitMode::PretrainedFrozen, seed);
        TrainHistory history = train_shallow(params, split, tc);
        auto rankings = recommend_shallow(params, split.seen, split.test_users, ctx.config.k);
        auto report = evaluate_rankings(res.model, res.variant, rankings, vs.test_relevance,
                                        ctx.config.k);
        Checkpoint ckpt = shallow_checkpoint(params, echo);
        persist_pair(ctx, res, split, rankings, report, &ckpt, &history);
    } else if (res.model == "seqrec") {
        SeqTrainConfig sc = ctx.config.seqrec;
        sc.seed = seed;
        if (!vs.sequences_built) {
            vs.sequences = build_sequences(split, sc.max_len);
            vs.sequences_built = true;
        }
        SeqParams<float> params =
            is_random ? init_seqrec<float>(static_cast<std::uint32_t>(split.n_items()), nullptr,
                                           sc, seed)
                      : init_seqrec<float>(static_cast<std::uint32_t>(split.n_items()),
                                           &vs.item_matrix, sc, seed);
        TrainHistory history = train_seqrec(params, vs.sequences, sc, &split);
        auto rankings =
            recommend_seqrec(params, vs.sequences, split.seen, split.test_users, ctx.config.k);
        auto report = evaluate_rankings(res.model, res.variant, rankings, vs.test_relevance,
                                        ctx.config.k);
        Checkpoint ckpt = seqrec_checkpoint(params, echo);
        persist_pair(ctx, res, split, rankings, report, &ckpt, &history);
    } else {
        throw std::runtime_error("unknown model: " + res.model);
    }
    res.ok = true;
}

// Pairwise significance on hitrate/recall/ndcg between variants of each model,
// aligned on external user IDs.
inline std::vector<SignificanceRecord> compute_significance(PipelineContext& ctx) {
    std::vector<SignificanceRecord> records;
    const char* metrics[] = {"hitrate", "recall", "ndcg"};
    for (const auto& [model, variants] : ctx.reports) {
        std::vector<std::string> names;
        for (const auto& [name, _] : variants) names.push_back(name);
        std::sort(names.begin(), names.end());
        for (std::size_t i = 0; i < names.size(); ++i) {
            for (std::size_t j = i + 1; j < names.size(); ++j) {
                const MetricReport& ra = variants.at(names[i]);
                const MetricReport& rb = variants.at(names[j]);
                // align per-user values by external ID
                const VariantState& va = *ctx.variants.at(names[i] == kRandomVariant
                                                              ? baseline_host_variant(ctx.config)
                                                              : names[i]);
                const VariantState& vb = *ctx.variants.at(names[j] == kRandomVariant
                                                              ? baseline_host_variant(ctx.config)
                                                              : names[j]);
                std::map<std::string, MetricsAtK> ma, mb;
                for (const UserMetrics& u : ra.per_user) ma[va.split.users.name(u.user)] = u.m;
                for (const UserMetrics& u : rb.per_user) mb[vb.split.users.name(u.user)] = u.m;
                std::vector<std::string> common;
                for (const auto& [uid, _] : ma)
                    if (mb.count(uid)) common.push_back(uid);
                if (common.size() < 2) continue;
                for (const char* metric : metrics) {
                    std::vector<double> a, b;
                    a.reserve(common.size());
                    b.reserve(common.size());
                    for (const auto& uid : common) {
                        a.push_back(metric_by_name(ma.at(uid), metric));
                        b.push_back(metric_by_name(mb.at(uid), metric));
                    }
                    const std::uint64_t seed =
                        mix_seed(ctx.config.seed, "sig/" + model + "/" + names[i] + "/" + names[j] +
                                                      "/" + metric);
                    records.push_back(
                        {model, metric, names[i], names[j],
                         bootstrap_significance(a, b, 10000, seed)});
                }
            }
        }
    }
    return records;
}

}  // namespace detail

// Execute the full comparison. A stage failure aborts its (model, variant)
// pair, is recorded in the manifest, and the remaining pairs continue.
inline RunResult run_pipeline(const RunConfig& config, const std::string& out_dir,
                              const nlohmann::json& config_echo = nlohmann::json::object()) {
    namespace fs = std::filesystem;
    config.validate();
    fs::create_directories(out_dir);

    detail::PipelineContext ctx{config, fs::path(out_dir)};
    {
        LoadLogResult loaded = load_interactions(config.interactions_path, config.log_format);
        ctx.log = std::move(loaded.log);
    }

    RunResult result;
    for (const std::string& model : config.models) {
        std::vector<std::string> variant_names;
        for (const auto& v : config.variants) variant_names.push_back(v.name);
        if (config.random_baseline && model != "knn") variant_names.push_back(kRandomVariant);
        for (const std::string& variant : variant_names) {
            PairResult res;
            res.model = model;
            res.variant = variant;
            try {
                detail::run_pair(ctx, res, config_echo);
            } catch (const std::exception& e) {
                res.ok = false;
                res.error = e.what();
                res.artifacts.clear();
            }
            result.pairs.push_back(std::move(res));
        }
    }

    std::vector<std::string> extra_files;
    if (result.any_ok()) {
        auto significance = detail::compute_significance(ctx);
        save_significance_json(significance, (fs::path(out_dir) / "significance.json").string());
        extra_files.push_back("significance.json");
        render_report_dir(out_dir, true);
        extra_files.push_back("report.txt");
        extra_files.push_back("report.csv");
    }

    nlohmann::json manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["seed"] = config.seed;
    manifest["config"] = config_echo;
    char hash_hex[17];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_echo.dump())));
    manifest["config_hash"] = hash_hex;
    manifest["splits"] = ctx.split_counts;
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : result.pairs) {
        nlohmann::json jp;
        jp["model"] = p.model;
        jp["variant"] = p.variant;
        jp["status"] = p.ok ? "ok" : "error";
        if (!p.ok) jp["error"] = p.error;
        jp["artifacts"] = p.artifacts;
        pairs.push_back(jp);
    }
    manifest["pairs"] = pairs;
    manifest["files"] = extra_files;
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << '\n';
    if (!mf) throw std::runtime_error("cannot write manifest under " + out_dir);
    return result;
}

// Persist a split as three event TSVs plus a metadata file.
inline void save_split_manifest(const DatasetSplit& split, const SplitConfig& config,
                                const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write_events = [&](const std::vector<IndexedEvent>& events, const std::string& name) {
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error("cannot write " + name + " under " + dir);
        out << "user_id\titem_id\ttimestamp\n";
        for (const IndexedEvent& e : events)
            out << split.users.name(e.user) << '\t' << split.items.name(e.item) << '\t'
                << e.timestamp << '\n';
    };
    write_events(split.train, "train.tsv");
    write_events(split.validation, "validation.tsv");
    write_events(split.test, "test.tsv");

    nlohmann::json meta;
    meta["boundary"] = config.boundary;
    meta["train_window"] = config.train_window;
    meta["holdout_window"] = config.holdout_window;
    meta["seed"] = config.user_half_split_seed;
    meta["dropped_items"] = split.dropped_items;
    meta["dropped_events"] = split.dropped_events;
    nlohmann::json counts;
    for (const auto& row : split_report(split))
        counts[row.name] = {{"users", row.n_users}, {"items", row.n_items}, {"events", row.n_events}};
    meta["counts"] = counts;
    std::ofstream out(fs::path(dir) / "meta.json");
    out << meta.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write meta.json under " + dir);
}

}  // namespace pare
