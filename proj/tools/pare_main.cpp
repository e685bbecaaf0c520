// pare: offline evaluation harness for hybrid music recommendation over
// pretrained audio embeddings.
//
// Subcommands: split, pool, run, report, significance.
// Exit codes: 0 success, 1 fatal error, 2 partial failure (some pairs failed).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pare/core.hpp"
#include "pare/eval.hpp"
#include "pare/ingest.hpp"
#include "pare/pipeline.hpp"
#include "pare/report.hpp"
#include "pare/split.hpp"

namespace {

nlohmann::json read_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return nlohmann::json::parse(in);
}

int cmd_split(const std::string& config_path, const std::string& out_dir, std::int64_t seed) {
    nlohmann::json raw = read_config_json(config_path);
    pare::RunConfig config = pare::parse_run_config(raw);
    if (seed >= 0) config.split.user_half_split_seed = static_cast<std::uint64_t>(seed);
    config.validate();

    pare::LoadLogResult loaded = pare::load_interactions(config.interactions_path, config.log_format);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    if (loaded.skipped_rows > 0)
        std::cerr << "warning: skipped " << loaded.skipped_rows << " of " << loaded.total_rows
                  << " rows\n";

    for (const auto& variant : config.variants) {
        pare::EmbeddingTable table = pare::load_embeddings(variant.embeddings_path);
        pare::DatasetSplit split = pare::make_split(loaded.log, config.split, table);
        const std::string dir =
            (std::filesystem::path(out_dir) / variant.name).string();
        pare::save_split_manifest(split, config.split, dir);
        std::cout << "variant " << variant.name << ":\n";
        for (const auto& row : pare::split_report(split)) {
            std::printf("  %-10s users=%zu items=%zu events=%zu\n", row.name.c_str(), row.n_users,
                        row.n_items, row.n_events);
        }
        if (split.dropped_items > 0)
            std::cout << "  dropped " << split.dropped_items << " items ("
                      << split.dropped_events << " events) lacking embeddings\n";
    }
    return 0;
}

int cmd_pool(const std::string& input, const std::string& out_dir, const std::string& name) {
    pare::EmbeddingTable pooled = pare::pool_chunk_csv(input);
    std::filesystem::create_directories(out_dir);
    const std::string out_path = (std::filesystem::path(out_dir) / name).string();
    pare::save_embeddings_pare(pooled, out_path);
    std::cout << "pooled " << pooled.n_items() << " items (dim " << pooled.dim << ") -> "
              << out_path << "\n";
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::int64_t seed) {
    nlohmann::json raw = read_config_json(config_path);
    if (seed >= 0) raw["seed"] = static_cast<std::uint64_t>(seed);
    pare::RunConfig config = pare::parse_run_config(raw);
    pare::RunResult result = pare::run_pipeline(config, out_dir, raw);

    for (const auto& pair : result.pairs) {
        if (pair.ok)
            std::cout << "[ok]    " << pair.model << " / " << pair.variant << "\n";
        else
            std::cout << "[error] " << pair.model << " / " << pair.variant << ": " << pair.error
                      << "\n";
    }
    const std::filesystem::path report_path = std::filesystem::path(out_dir) / "report.txt";
    if (std::filesystem::exists(report_path)) {
        std::ifstream in(report_path);
        std::cout << "\n" << in.rdbuf();
    }
    return result.all_ok() ? 0 : 2;
}

int cmd_report(const std::string& run_dir) {
    pare::RenderedReport rendered = pare::render_report_dir(run_dir, true);
    std::cout << rendered.text;
    return 0;
}

// Reads two per-user metric CSVs (metrics_users.csv schema), aligns users, and
// prints the paired bootstrap p-value.
int cmd_significance(const std::string& path_a, const std::string& path_b,
                     const std::string& metric, int resamples, std::uint64_t seed) {
    auto load = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open metrics file: " + path);
        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
        std::map<std::string, pare::MetricsAtK> out;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            pare::MetricsAtK m;
            char user[256];
            if (std::sscanf(line.c_str(), "%255[^,],%lf,%lf,%lf,%lf,%lf", user, &m.hitrate,
                            &m.recall, &m.ndcg, &m.mrr, &m.precision) != 6)
                throw std::runtime_error(path + ": bad row: " + line);
            out[user] = m;
        }
        return out;
    };
    auto ma = load(path_a);
    auto mb = load(path_b);
    std::vector<double> a, b;
    for (const auto& [uid, m] : ma) {
        auto it = mb.find(uid);
        if (it == mb.end()) continue;
        a.push_back(pare::metric_by_name(m, metric));
        b.push_back(pare::metric_by_name(it->second, metric));
    }
    const double p = pare::bootstrap_significance(a, b, resamples, seed);
    std::printf("metric=%s users=%zu p=%.6g\n", metric.c_str(), a.size(), p);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pare: offline evaluation for embedding-based music recommenders"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::int64_t seed = -1;

    auto* split = app.add_subcommand("split", "build and persist the temporal split per variant");
    split->add_option("--config", config_path, "run config JSON")->required();
    split->add_option("--out", out_dir, "output directory");
    split->add_option("--seed", seed, "override the user half-split seed");

    std::string pool_input, pool_name = "pooled.pare";
    auto* pool = app.add_subcommand("pool", "mean-pool chunk-level embeddings to track level");
    pool->add_option("--input", pool_input, "chunk CSV (item_id,e0,..., repeated rows per item)")
        ->required();
    pool->add_option("--out", out_dir, "output directory");
    pool->add_option("--name", pool_name, "output PARE file name");

    auto* run = app.add_subcommand("run", "run the full model x variant comparison");
    run->add_option("--config", config_path, "run config JSON")->required();
    run->add_option("--out", out_dir, "run directory");
    run->add_option("--seed", seed, "override the config seed");

    auto* report = app.add_subcommand("report", "re-render the comparison table of a run directory");
    report->add_option("--out", out_dir, "run directory to read")->required();

    std::string sig_a, sig_b, sig_metric = "ndcg";
    int sig_resamples = 10000;
    std::uint64_t sig_seed = 0;
    auto* sig = app.add_subcommand("significance",
                                   "paired bootstrap between two per-user metric files");
    sig->add_option("--a", sig_a, "metrics_users.csv of run A")->required();
    sig->add_option("--b", sig_b, "metrics_users.csv of run B")->required();
    sig->add_option("--metric", sig_metric, "hitrate|recall|ndcg|mrr|precision");
    sig->add_option("--resamples", sig_resamples, "bootstrap resamples");
    sig->add_option("--seed", sig_seed, "bootstrap seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (split->parsed()) return cmd_split(config_path, out_dir, seed);
        if (pool->parsed()) return cmd_pool(pool_input, out_dir, pool_name);
        if (run->parsed()) return cmd_run(config_path, out_dir, seed);
        if (report->parsed()) return cmd_report(out_dir);
        if (sig->parsed())
            return cmd_significance(sig_a, sig_b, sig_metric, sig_resamples, sig_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
