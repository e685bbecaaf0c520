#pragma once
// Run-directory reports: per-pair summary JSON files rendered into a comparison
// table grouped by model, rows ascending by HitRate@K, best row starred, with
// significance markers against the random baseline when present.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pare/eval.hpp"

namespace pare {

inline const std::string kRandomVariant = "random";

struct PairSummary {
    std::string model;
    std::string variant;
    std::size_t k = 0;
    std::size_t n_users = 0;
    MetricsAtK means;
};

struct SignificanceRecord {
    std::string model;
    std::string metric;
    std::string a;
    std::string b;
    double p = 1.0;
};

inline void save_summary_json(const PairSummary& s, const std::string& path) {
    nlohmann::json j;
    j["model"] = s.model;
    j["variant"] = s.variant;
    j["k"] = s.k;
    j["n_users"] = s.n_users;
    j["metrics"] = {{"hitrate", s.means.hitrate},
                    {"recall", s.means.recall},
                    {"ndcg", s.means.ndcg},
                    {"mrr", s.means.mrr},
                    {"precision", s.means.precision}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

inline PairSummary load_summary_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open summary: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    PairSummary s;
    s.model = j.at("model").get<std::string>();
    s.variant = j.at("variant").get<std::string>();
    s.k = j.at("k").get<std::size_t>();
    s.n_users = j.value("n_users", std::size_t{0});
    const auto& m = j.at("metrics");
    s.means.hitrate = m.at("hitrate").get<double>();
    s.means.recall = m.at("recall").get<double>();
    s.means.ndcg = m.at("ndcg").get<double>();
    s.means.mrr = m.value("mrr", 0.0);
    s.means.precision = m.value("precision", 0.0);
    return s;
}

inline void save_significance_json(const std::vector<SignificanceRecord>& records,
                                   const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records)
        arr.push_back(
            {{"model", r.model}, {"metric", r.metric}, {"a", r.a}, {"b", r.b}, {"p", r.p}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << arr.dump(2) << '\n';
}

inline std::vector<SignificanceRecord> load_significance_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open significance file: " + path);
    nlohmann::json arr = nlohmann::json::parse(in);
    std::vector<SignificanceRecord> out;
    for (const auto& j : arr)
        out.push_back({j.at("model").get<std::string>(), j.at("metric").get<std::string>(),
                       j.at("a").get<std::string>(), j.at("b").get<std::string>(),
                       j.at("p").get<double>()});
    return out;
}

namespace detail {

inline std::string display_model(const std::string& model) {
    if (model == "knn") return "KNN";
    if (model == "shallow") return "Shallow Net";
    if (model == "seqrec") return "SeqRec";
    return model;
}

inline int model_order(const std::string& model) {
    if (model == "knn") return 0;
    if (model == "shallow") return 1;
    if (model == "seqrec") return 2;
    return 3;
}

inline std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace detail

struct RenderedReport {
    std::string text;
    std::string csv;
};

// Rows ascending by HitRate@K within each model group (ties broken by recall,
// ndcg, then name); the best row per group is starred.
inline RenderedReport render_report(std::vector<PairSummary> summaries,
                                    const std::vector<SignificanceRecord>& significance = {}) {
    if (summaries.empty()) throw std::runtime_error("render_report: no summaries");

    std::stable_sort(summaries.begin(), summaries.end(),
                     [](const PairSummary& a, const PairSummary& b) {
                         const int ma = detail::model_order(a.model);
                         const int mb = detail::model_order(b.model);
                         if (ma != mb) return ma < mb;
                         if (a.model != b.model) return a.model < b.model;
                         if (a.means.hitrate != b.means.hitrate)
                             return a.means.hitrate < b.means.hitrate;
                         if (a.means.recall != b.means.recall) return a.means.recall < b.means.recall;
                         if (a.means.ndcg != b.means.ndcg) return a.means.ndcg < b.means.ndcg;
                         return a.variant < b.variant;
                     });

    auto p_vs_random = [&](const std::string& model,
                           const std::string& variant) -> std::optional<double> {
        if (variant == kRandomVariant) return std::nullopt;
        for (const auto& r : significance) {
            if (r.model != model || r.metric != "hitrate") continue;
            if ((r.a == variant && r.b == kRandomVariant) ||
                (r.b == variant && r.a == kRandomVariant))
                return r.p;
        }
        return std::nullopt;
    };

    RenderedReport out;
    out.csv = "model,variant,k,hitrate,recall,ndcg,mrr,precision,best,p_hitrate_vs_random\n";

    std::size_t group_start = 0;
    while (group_start < summaries.size()) {
        std::size_t group_end = group_start;
        while (group_end < summaries.size() &&
               summaries[group_end].model == summaries[group_start].model)
            ++group_end;
        const std::size_t best_row = group_end - 1;  // ascending order: last is best
        const auto& head = summaries[group_start];

        out.text += "Model: " + detail::display_model(head.model) + " (K=" +
                    std::to_string(head.k) + ")\n";
        char line[256];
        std::snprintf(line, sizeof(line), "  %-14s %12s %12s %12s %6s\n", "embeddings",
                      ("HitRate@" + std::to_string(head.k)).c_str(),
                      ("Recall@" + std::to_string(head.k)).c_str(),
                      ("NDCG@" + std::to_string(head.k)).c_str(), "");
        out.text += line;
        for (std::size_t row = group_start; row < group_end; ++row) {
            const auto& s = summaries[row];
            const bool best = row == best_row;
            auto p = p_vs_random(s.model, s.variant);
            const bool sig = p && *p < 0.05;
            std::string marker = sig ? "sig" : "";
            std::snprintf(line, sizeof(line), "%c %-14s %12s %12s %12s %6s\n", best ? '*' : ' ',
                          s.variant.c_str(), detail::fmt3(s.means.hitrate).c_str(),
                          detail::fmt3(s.means.recall).c_str(), detail::fmt3(s.means.ndcg).c_str(),
                          marker.c_str());
            out.text += line;

            out.csv += s.model + "," + s.variant + "," + std::to_string(s.k) + "," +
                       format_score(s.means.hitrate) + "," + format_score(s.means.recall) + "," +
                       format_score(s.means.ndcg) + "," + format_score(s.means.mrr) + "," +
                       format_score(s.means.precision) + "," + (best ? "1" : "0") + "," +
                       (p ? format_score(*p) : "") + "\n";
        }
        out.text += "\n";
        group_start = group_end;
    }
    return out;
}

// Scan a run directory for <model>/<variant>/summary.json files (sorted, so the
// result is independent of directory enumeration order) and render.
inline RenderedReport render_report_dir(const std::string& run_dir, bool write_files = true) {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    if (!fs::is_directory(run_dir)) throw std::runtime_error("not a directory: " + run_dir);
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (entry.is_regular_file() && entry.path().filename() == "summary.json")
            paths.push_back(entry.path().string());
    }
    if (paths.empty()) throw std::runtime_error("render_report: no summary.json files under " + run_dir);
    std::sort(paths.begin(), paths.end());

    std::vector<PairSummary> summaries;
    summaries.reserve(paths.size());
    for (const auto& p : paths) summaries.push_back(load_summary_json(p));

    std::vector<SignificanceRecord> significance;
    const fs::path sig_path = fs::path(run_dir) / "significance.json";
    if (fs::exists(sig_path)) significance = load_significance_json(sig_path.string());

    RenderedReport rendered = render_report(std::move(summaries), significance);
    if (write_files) {
        std::ofstream txt(fs::path(run_dir) / "report.txt");
        txt << rendered.text;
        std::ofstream csv(fs::path(run_dir) / "report.csv");
        csv << rendered.csv;
        if (!txt || !csv) throw std::runtime_error("render_report: write failed under " + run_dir);
    }
    return rendered;
}

}  // namespace pare
