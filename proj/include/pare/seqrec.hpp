#pragma once
// Miniature masked-sequence recommender: bidirectional transformer encoder over
// per-user item sequences, frozen pretrained item vectors behind a trainable
// input projection (or a trainable item table in random mode), masked-position
// cross-entropy, and all-item ranking at the last position.
//
// Forward activations are double; parameters keep their storage type. The
// backward pass is written out by hand and is checked against central finite
// differences in the test suite.

#include <algorithm>
#include <cmath>
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

constexpr std::int32_t kPadToken = 0;
constexpr std::int32_t kMaskToken = 1;
constexpr std::int32_t kTokenOffset = 2;  // item i -> token i + 2

inline std::int32_t item_to_token(std::uint32_t item) {
    return static_cast<std::int32_t>(item) + kTokenOffset;
}
inline std::uint32_t token_to_item(std::int32_t token) {
    return static_cast<std::uint32_t>(token - kTokenOffset);
}

struct SequenceDataset {
    std::vector<std::vector<std::int32_t>> sequences;  // per user: item tokens, time order
    int max_len = 300;
    std::uint32_t n_items = 0;
};

// Per-user chronological train items, most recent max_len kept. Ties on
// timestamp fall back to ascending internal item index.
inline SequenceDataset build_sequences(const DatasetSplit& split, int max_len = 300) {
    if (max_len < 1) throw std::runtime_error("build_sequences: max_len must be >= 1");
    SequenceDataset ds;
    ds.max_len = max_len;
    ds.n_items = static_cast<std::uint32_t>(split.n_items());
    std::vector<std::vector<std::pair<std::int64_t, std::uint32_t>>> per_user(split.n_users());
    for (const IndexedEvent& e : split.train) per_user[e.user].push_back({e.timestamp, e.item});
    ds.sequences.resize(split.n_users());
    for (std::uint32_t u = 0; u < split.n_users(); ++u) {
        auto& events = per_user[u];
        std::sort(events.begin(), events.end());
        const std::size_t keep = std::min(events.size(), static_cast<std::size_t>(max_len));
        auto& seq = ds.sequences[u];
        seq.reserve(keep);
        for (std::size_t idx = events.size() - keep; idx < events.size(); ++idx)
            seq.push_back(item_to_token(events[idx].second));
    }
    return ds;
}

struct SeqTrainConfig {
    int epochs = 200;
    double lr = 1e-3;
    double mask_prob = 0.2;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 0;  // 0 -> 4 * d_model
    int batch_size = 32;
    int max_len = 300;
    int early_stop_patience = 10;
    int plateau_patience = 5;
    double plateau_factor = 0.5;
    double lr_floor = 1e-5;
    std::uint64_t seed = 0;
    int monitor_k = 50;

    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }

    void validate() const {
        if (epochs < 0) throw std::runtime_error("SeqTrainConfig: epochs must be >= 0");
        if (lr <= 0) throw std::runtime_error("SeqTrainConfig: lr must be > 0");
        if (mask_prob < 0.0 || mask_prob > 1.0)
            throw std::runtime_error("SeqTrainConfig: mask_prob must be in [0,1]");
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || batch_size < 1 || max_len < 1)
            throw std::runtime_error("SeqTrainConfig: bad architecture constants");
        if (d_model % n_heads != 0)
            throw std::runtime_error("SeqTrainConfig: d_model must be divisible by n_heads");
    }
};

template <class S>
struct SeqBlock {
    Matrix<S> w_q, w_k, w_v, w_o;  // d_model x d_model, applied as x * W
    std::vector<S> b_q, b_k, b_v, b_o;
    std::vector<S> ln1_gamma, ln1_beta;
    Matrix<S> w_ff1;  // d_model x d_ff
    std::vector<S> b_ff1;
    Matrix<S> w_ff2;  // d_ff x d_model
    std::vector<S> b_ff2;
    std::vector<S> ln2_gamma, ln2_beta;
};

template <class S>
struct SeqParams {
    bool pretrained_mode = true;
    Matrix<S> item_table;   // pretrained: n_items x p_dim, frozen; random: n_items x d_model
    Matrix<S> input_proj;   // p_dim x d_model (pretrained mode only)
    Matrix<S> special_emb;  // 2 x d_model: PAD, MASK
    Matrix<S> pos_emb;      // (max_len + 1) x d_model
    std::vector<SeqBlock<S>> blocks;
    Matrix<S> head_w;  // d_model x n_items
    std::vector<S> head_b;
    int d_model = 0, n_heads = 0, d_ff = 0, max_len = 0;
    std::uint32_t n_items = 0;
};

// pretrained != nullptr: frozen table + trainable projection to d_model.
// pretrained == nullptr: trainable d_model-sized item table, no projection.
template <class S>
SeqParams<S> init_seqrec(std::uint32_t n_items, const Matrix<S>* pretrained,
                         const SeqTrainConfig& config, std::uint64_t seed) {
    config.validate();
    if (pretrained && pretrained->rows != n_items)
        throw std::runtime_error("init_seqrec: pretrained table rows != n_items");

    SeqParams<S> p;
    p.pretrained_mode = pretrained != nullptr;
    p.d_model = config.d_model;
    p.n_heads = config.n_heads;
    p.d_ff = config.ff_dim();
    p.max_len = config.max_len;
    p.n_items = n_items;

    std::mt19937_64 rng(mix_seed(seed, "seqrec.init"));
    const std::size_t d = static_cast<std::size_t>(p.d_model);
    if (p.pretrained_mode) {
        p.item_table = *pretrained;
        p.input_proj = Matrix<S>(pretrained->cols, d);
        fill_uniform_fan_in(p.input_proj, pretrained->cols, rng);
    } else {
        p.item_table = Matrix<S>(n_items, d);
        fill_normal(p.item_table, 0.02, rng);
    }
    p.special_emb = Matrix<S>(2, d);
    fill_normal(p.special_emb, 0.02, rng);
    p.pos_emb = Matrix<S>(static_cast<std::size_t>(p.max_len) + 1, d);
    fill_normal(p.pos_emb, 0.02, rng);

    p.blocks.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& blk : p.blocks) {
        for (Matrix<S>* w : {&blk.w_q, &blk.w_k, &blk.w_v, &blk.w_o}) {
            *w = Matrix<S>(d, d);
            fill_uniform_fan_in(*w, d, rng);
        }
        blk.b_q.assign(d, S(0));
        blk.b_k.assign(d, S(0));
        blk.b_v.assign(d, S(0));
        blk.b_o.assign(d, S(0));
        blk.ln1_gamma.assign(d, S(1));
        blk.ln1_beta.assign(d, S(0));
        blk.w_ff1 = Matrix<S>(d, static_cast<std::size_t>(p.d_ff));
        fill_uniform_fan_in(blk.w_ff1, d, rng);
        blk.b_ff1.assign(static_cast<std::size_t>(p.d_ff), S(0));
        blk.w_ff2 = Matrix<S>(static_cast<std::size_t>(p.d_ff), d);
        fill_uniform_fan_in(blk.w_ff2, static_cast<std::size_t>(p.d_ff), rng);
        blk.b_ff2.assign(d, S(0));
        blk.ln2_gamma.assign(d, S(1));
        blk.ln2_beta.assign(d, S(0));
    }
    p.head_w = Matrix<S>(d, n_items);
    fill_uniform_fan_in(p.head_w, d, rng);
    p.head_b.assign(n_items, S(0));
    return p;
}

// --- masking ---------------------------------------------------------------

struct MaskTarget {
    std::size_t seq = 0;
    std::size_t pos = 0;
    std::int32_t original = 0;
};

struct MaskedBatch {
    std::vector<std::vector<std::int32_t>> tokens;
    std::vector<MaskTarget> targets;
};

// Each non-pad position masked independently with probability mask_prob; at
// least one position forced per sequence.
inline MaskedBatch apply_masking(std::span<const std::vector<std::int32_t>> batch,
                                 std::mt19937_64& rng, double mask_prob) {
    MaskedBatch out;
    out.tokens.reserve(batch.size());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        out.tokens.push_back(batch[s]);
        auto& seq = out.tokens.back();
        if (seq.empty()) throw std::runtime_error("apply_masking: empty sequence");
        std::vector<std::size_t> maskable;
        std::size_t masked_before = out.targets.size();
        for (std::size_t pos = 0; pos < seq.size(); ++pos) {
            if (seq[pos] == kPadToken) continue;
            maskable.push_back(pos);
            if (unit(rng) < mask_prob) {
                out.targets.push_back({s, pos, seq[pos]});
                seq[pos] = kMaskToken;
            }
        }
        if (maskable.empty()) throw std::runtime_error("apply_masking: all-pad sequence");
        if (out.targets.size() == masked_before) {
            std::uniform_int_distribution<std::size_t> pick(0, maskable.size() - 1);
            const std::size_t pos = maskable[pick(rng)];
            out.targets.push_back({s, pos, seq[pos]});
            seq[pos] = kMaskToken;
        }
    }
    return out;
}

// --- forward ----------------------------------------------------------------

constexpr double kLayerNormEpsilon = 1e-5;

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014327;  // 1/sqrt(2*pi)
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

// out[j] = b[j] + sum_i x[i] * w(i, j)
template <class S>
inline void vecmat(const double* x, const Matrix<S>& w, const std::vector<S>& b, double* out) {
    for (std::size_t j = 0; j < w.cols; ++j) out[j] = static_cast<double>(b[j]);
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const S* wrow = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) out[j] += xi * static_cast<double>(wrow[j]);
    }
}

// Accumulates g_x, g_w, g_b for out = x * w + b given g_out.
template <class S>
inline void vecmat_backward(const double* x, const Matrix<S>& w, const double* g_out, double* g_x,
                            double* g_w, double* g_b) {
    for (std::size_t j = 0; j < w.cols; ++j) g_b[j] += g_out[j];
    for (std::size_t i = 0; i < w.rows; ++i) {
        const S* wrow = w.row(i);
        double* gwrow = g_w + i * w.cols;
        double acc = 0.0;
        const double xi = x[i];
        for (std::size_t j = 0; j < w.cols; ++j) {
            acc += static_cast<double>(wrow[j]) * g_out[j];
            gwrow[j] += xi * g_out[j];
        }
        g_x[i] += acc;
    }
}

template <class S>
inline void layer_norm_row(const double* x, const std::vector<S>& gamma,
                           const std::vector<S>& beta, double* xhat, double* out, double& rstd) {
    const std::size_t d = gamma.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<double>(d);
    rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t i = 0; i < d; ++i) {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = static_cast<double>(gamma[i]) * xhat[i] + static_cast<double>(beta[i]);
    }
}

// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
template <class S>
inline void layer_norm_backward_row(const double* g_out, const double* xhat, double rstd,
                                    const std::vector<S>& gamma, double* g_x, double* g_gamma,
                                    double* g_beta) {
    const std::size_t d = gamma.size();
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double dxhat = g_out[i] * static_cast<double>(gamma[i]);
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat[i];
        g_gamma[i] += g_out[i] * xhat[i];
        g_beta[i] += g_out[i];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double dxhat = g_out[i] * static_cast<double>(gamma[i]);
        g_x[i] += rstd * (dxhat - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

}  // namespace detail

struct SeqBlockCache {
    MatrixD x_in, q, k, v, ctx, sum1, xhat1, x_mid, ff_pre, ff_act, sum2, xhat2, x_out;
    std::vector<MatrixD> att;  // per head, L x L; masked key columns are exactly zero
    std::vector<double> rstd1, rstd2;
};

struct SeqCache {
    std::vector<std::int32_t> tokens;
    std::vector<char> is_pad;
    MatrixD emb;  // token embedding + positional, L x d_model
    std::vector<SeqBlockCache> blocks;

    const MatrixD& final_hidden() const { return blocks.back().x_out; }
};

// Token embedding row (item rows through the projection in pretrained mode).
template <class S>
inline void token_embedding(const SeqParams<S>& p, std::int32_t token, double* out) {
    const std::size_t d = static_cast<std::size_t>(p.d_model);
    if (token == kPadToken || token == kMaskToken) {
        const S* row = p.special_emb.row(static_cast<std::size_t>(token));
        for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<double>(row[j]);
        return;
    }
    const std::uint32_t item = token_to_item(token);
    if (item >= p.n_items) throw std::runtime_error("token out of range: " + std::to_string(token));
    if (p.pretrained_mode) {
        const std::size_t pd = p.item_table.cols;
        const S* e = p.item_table.row(item);
        for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
        for (std::size_t c = 0; c < pd; ++c) {
            const double ec = static_cast<double>(e[c]);
            const S* prow = p.input_proj.row(c);
            for (std::size_t j = 0; j < d; ++j) out[j] += ec * static_cast<double>(prow[j]);
        }
    } else {
        const S* row = p.item_table.row(item);
        for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<double>(row[j]);
    }
}

// Bidirectional encoder over one sequence. PAD positions are masked out of the
// attention keys; no causal mask.
template <class S>
void seqrec_encode(const SeqParams<S>& p, const std::vector<std::int32_t>& tokens, SeqCache& cache) {
    const std::size_t len = tokens.size();
    const std::size_t d = static_cast<std::size_t>(p.d_model);
    if (len == 0) throw std::runtime_error("seqrec_encode: empty sequence");
    if (len > static_cast<std::size_t>(p.max_len) + 1)
        throw std::runtime_error("seqrec_encode: sequence longer than max_len + 1");

    cache.tokens = tokens;
    cache.is_pad.resize(len);
    bool any_real = false;
    for (std::size_t i = 0; i < len; ++i) {
        cache.is_pad[i] = tokens[i] == kPadToken ? 1 : 0;
        any_real |= !cache.is_pad[i];
    }
    if (!any_real) throw std::runtime_error("seqrec_encode: all-pad sequence");

    cache.emb = MatrixD(len, d);
    for (std::size_t pos = 0; pos < len; ++pos) {
        double* row = cache.emb.row(pos);
        token_embedding(p, tokens[pos], row);
        const S* pe = p.pos_emb.row(pos);
        for (std::size_t j = 0; j < d; ++j) row[j] += static_cast<double>(pe[j]);
    }

    const int n_heads = p.n_heads;
    const std::size_t dh = d / static_cast<std::size_t>(n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.blocks.resize(p.blocks.size());
    const MatrixD* x = &cache.emb;
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const SeqBlock<S>& blk = p.blocks[l];
        SeqBlockCache& c = cache.blocks[l];
        c.x_in = *x;
        c.q = MatrixD(len, d);
        c.k = MatrixD(len, d);
        c.v = MatrixD(len, d);
        for (std::size_t pos = 0; pos < len; ++pos) {
            detail::vecmat(c.x_in.row(pos), blk.w_q, blk.b_q, c.q.row(pos));
            detail::vecmat(c.x_in.row(pos), blk.w_k, blk.b_k, c.k.row(pos));
            detail::vecmat(c.x_in.row(pos), blk.w_v, blk.b_v, c.v.row(pos));
        }

        c.att.assign(static_cast<std::size_t>(n_heads), MatrixD(len, len));
        c.ctx = MatrixD(len, d);
        std::vector<double> scores(len);
        for (int h = 0; h < n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            MatrixD& att = c.att[static_cast<std::size_t>(h)];
            for (std::size_t i = 0; i < len; ++i) {
                double maxs = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    if (cache.is_pad[j]) continue;
                    double s = 0.0;
                    const double* qi = c.q.row(i) + off;
                    const double* kj = c.k.row(j) + off;
                    for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
                    scores[j] = s * scale;
                    maxs = std::max(maxs, scores[j]);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    if (cache.is_pad[j]) {
                        att.at(i, j) = 0.0;
                        continue;
                    }
                    const double e = std::exp(scores[j] - maxs);
                    att.at(i, j) = e;
                    denom += e;
                }
                double* ctx_row = c.ctx.row(i) + off;
                for (std::size_t t = 0; t < dh; ++t) ctx_row[t] = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    if (cache.is_pad[j]) continue;
                    const double a = att.at(i, j) / denom;
                    att.at(i, j) = a;
                    const double* vj = c.v.row(j) + off;
                    for (std::size_t t = 0; t < dh; ++t) ctx_row[t] += a * vj[t];
                }
            }
        }

        c.sum1 = MatrixD(len, d);
        c.xhat1 = MatrixD(len, d);
        c.x_mid = MatrixD(len, d);
        c.rstd1.resize(len);
        std::vector<double> attn_out(d);
        for (std::size_t pos = 0; pos < len; ++pos) {
            detail::vecmat(c.ctx.row(pos), blk.w_o, blk.b_o, attn_out.data());
            double* sum_row = c.sum1.row(pos);
            const double* in_row = c.x_in.row(pos);
            for (std::size_t j = 0; j < d; ++j) sum_row[j] = in_row[j] + attn_out[j];
            detail::layer_norm_row(sum_row, blk.ln1_gamma, blk.ln1_beta, c.xhat1.row(pos),
                                   c.x_mid.row(pos), c.rstd1[pos]);
        }

        c.ff_pre = MatrixD(len, static_cast<std::size_t>(p.d_ff));
        c.ff_act = MatrixD(len, static_cast<std::size_t>(p.d_ff));
        c.sum2 = MatrixD(len, d);
        c.xhat2 = MatrixD(len, d);
        c.x_out = MatrixD(len, d);
        c.rstd2.resize(len);
        std::vector<double> ff_out(d);
        for (std::size_t pos = 0; pos < len; ++pos) {
            detail::vecmat(c.x_mid.row(pos), blk.w_ff1, blk.b_ff1, c.ff_pre.row(pos));
            double* act = c.ff_act.row(pos);
            const double* pre = c.ff_pre.row(pos);
            for (int j = 0; j < p.d_ff; ++j) act[j] = detail::gelu(pre[j]);
            detail::vecmat(act, blk.w_ff2, blk.b_ff2, ff_out.data());
            double* sum_row = c.sum2.row(pos);
            const double* mid_row = c.x_mid.row(pos);
            for (std::size_t j = 0; j < d; ++j) sum_row[j] = mid_row[j] + ff_out[j];
            detail::layer_norm_row(sum_row, blk.ln2_gamma, blk.ln2_beta, c.xhat2.row(pos),
                                   c.x_out.row(pos), c.rstd2[pos]);
        }

        for (double v : c.x_out.data) {
            if (!std::isfinite(v))
                throw std::runtime_error("seqrec_encode: non-finite activation in block " +
                                         std::to_string(l));
        }
        x = &c.x_out;
    }
}

template <class S>
inline void logits_at(const SeqParams<S>& p, const double* hidden, double* out) {
    for (std::uint32_t y = 0; y < p.n_items; ++y) out[y] = static_cast<double>(p.head_b[y]);
    for (int dd = 0; dd < p.d_model; ++dd) {
        const double h = hidden[static_cast<std::size_t>(dd)];
        if (h == 0.0) continue;
        const S* wrow = p.head_w.row(static_cast<std::size_t>(dd));
        for (std::uint32_t y = 0; y < p.n_items; ++y) out[y] += h * static_cast<double>(wrow[y]);
    }
}

// Per-position logits over all items, one matrix per sequence.
template <class S>
std::vector<MatrixD> forward_logits(const SeqParams<S>& p,
                                    std::span<const std::vector<std::int32_t>> batch) {
    std::vector<MatrixD> out;
    out.reserve(batch.size());
    SeqCache cache;
    for (const auto& tokens : batch) {
        seqrec_encode(p, tokens, cache);
        const MatrixD& hidden = cache.final_hidden();
        MatrixD logits(tokens.size(), p.n_items);
        for (std::size_t pos = 0; pos < tokens.size(); ++pos)
            logits_at(p, hidden.row(pos), logits.row(pos));
        out.push_back(std::move(logits));
    }
    return out;
}

// --- gradients ----------------------------------------------------------------

struct SeqBlockGrads {
    std::vector<double> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
    std::vector<double> ln1_gamma, ln1_beta, w_ff1, b_ff1, w_ff2, b_ff2, ln2_gamma, ln2_beta;
};

struct SeqGrads {
    std::vector<double> item_table;  // random mode only
    std::vector<double> input_proj;  // pretrained mode only
    std::vector<double> special_emb, pos_emb, head_w, head_b;
    std::vector<SeqBlockGrads> blocks;

    template <class S>
    void resize_like(const SeqParams<S>& p) {
        item_table.assign(p.pretrained_mode ? 0 : p.item_table.size(), 0.0);
        input_proj.assign(p.pretrained_mode ? p.input_proj.size() : 0, 0.0);
        special_emb.assign(p.special_emb.size(), 0.0);
        pos_emb.assign(p.pos_emb.size(), 0.0);
        head_w.assign(p.head_w.size(), 0.0);
        head_b.assign(p.head_b.size(), 0.0);
        blocks.resize(p.blocks.size());
        for (std::size_t l = 0; l < p.blocks.size(); ++l) {
            const auto& b = p.blocks[l];
            auto& g = blocks[l];
            g.w_q.assign(b.w_q.size(), 0.0);
            g.b_q.assign(b.b_q.size(), 0.0);
            g.w_k.assign(b.w_k.size(), 0.0);
            g.b_k.assign(b.b_k.size(), 0.0);
            g.w_v.assign(b.w_v.size(), 0.0);
            g.b_v.assign(b.b_v.size(), 0.0);
            g.w_o.assign(b.w_o.size(), 0.0);
            g.b_o.assign(b.b_o.size(), 0.0);
            g.ln1_gamma.assign(b.ln1_gamma.size(), 0.0);
            g.ln1_beta.assign(b.ln1_beta.size(), 0.0);
            g.w_ff1.assign(b.w_ff1.size(), 0.0);
            g.b_ff1.assign(b.b_ff1.size(), 0.0);
            g.w_ff2.assign(b.w_ff2.size(), 0.0);
            g.b_ff2.assign(b.b_ff2.size(), 0.0);
            g.ln2_gamma.assign(b.ln2_gamma.size(), 0.0);
            g.ln2_beta.assign(b.ln2_beta.size(), 0.0);
        }
    }

    void clear() {
        auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
        zero(item_table);
        zero(input_proj);
        zero(special_emb);
        zero(pos_emb);
        zero(head_w);
        zero(head_b);
        for (auto& g : blocks) {
            zero(g.w_q);
            zero(g.b_q);
            zero(g.w_k);
            zero(g.b_k);
            zero(g.w_v);
            zero(g.b_v);
            zero(g.w_o);
            zero(g.b_o);
            zero(g.ln1_gamma);
            zero(g.ln1_beta);
            zero(g.w_ff1);
            zero(g.b_ff1);
            zero(g.w_ff2);
            zero(g.b_ff2);
            zero(g.ln2_gamma);
            zero(g.ln2_beta);
        }
    }
};

namespace detail {

// Backprop one encoded sequence given d(loss)/d(final hidden).
template <class S>
void seqrec_backward(const SeqParams<S>& p, const SeqCache& cache, MatrixD& g_hidden, SeqGrads& g) {
    const std::size_t len = cache.tokens.size();
    const std::size_t d = static_cast<std::size_t>(p.d_model);
    const int n_heads = p.n_heads;
    const std::size_t dh = d / static_cast<std::size_t>(n_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    MatrixD g_x = std::move(g_hidden);  // gradient wrt block output, reused downward
    for (std::size_t li = p.blocks.size(); li-- > 0;) {
        const SeqBlock<S>& blk = p.blocks[li];
        const SeqBlockCache& c = cache.blocks[li];
        SeqBlockGrads& gb = g.blocks[li];

        // LN2 -> sum2 = x_mid + ff_out
        MatrixD g_sum2(len, d);
        for (std::size_t pos = 0; pos < len; ++pos)
            layer_norm_backward_row(g_x.row(pos), c.xhat2.row(pos), c.rstd2[pos], blk.ln2_gamma,
                                    g_sum2.row(pos), gb.ln2_gamma.data(), gb.ln2_beta.data());

        // FFN backward; residual adds g_sum2 into g_x_mid
        MatrixD g_x_mid = g_sum2;
        std::vector<double> g_act(static_cast<std::size_t>(p.d_ff));
        std::vector<double> g_pre(static_cast<std::size_t>(p.d_ff));
        for (std::size_t pos = 0; pos < len; ++pos) {
            std::fill(g_act.begin(), g_act.end(), 0.0);
            vecmat_backward(c.ff_act.row(pos), blk.w_ff2, g_sum2.row(pos), g_act.data(),
                            gb.w_ff2.data(), gb.b_ff2.data());
            const double* pre = c.ff_pre.row(pos);
            for (int j = 0; j < p.d_ff; ++j)
                g_pre[static_cast<std::size_t>(j)] =
                    g_act[static_cast<std::size_t>(j)] * gelu_grad(pre[j]);
            vecmat_backward(c.x_mid.row(pos), blk.w_ff1, g_pre.data(), g_x_mid.row(pos),
                            gb.w_ff1.data(), gb.b_ff1.data());
        }

        // LN1 -> sum1 = x_in + attn_out
        MatrixD g_sum1(len, d);
        for (std::size_t pos = 0; pos < len; ++pos)
            layer_norm_backward_row(g_x_mid.row(pos), c.xhat1.row(pos), c.rstd1[pos], blk.ln1_gamma,
                                    g_sum1.row(pos), gb.ln1_gamma.data(), gb.ln1_beta.data());

        // attention output projection
        MatrixD g_x_in = g_sum1;  // residual path
        MatrixD g_ctx(len, d);
        for (std::size_t pos = 0; pos < len; ++pos)
            vecmat_backward(c.ctx.row(pos), blk.w_o, g_sum1.row(pos), g_ctx.row(pos),
                            gb.w_o.data(), gb.b_o.data());

        // attention core
        MatrixD g_q(len, d), g_k(len, d), g_v(len, d);
        std::vector<double> g_att(len), g_scores(len);
        for (int h = 0; h < n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            const MatrixD& att = c.att[static_cast<std::size_t>(h)];
            for (std::size_t i = 0; i < len; ++i) {
                const double* g_ctx_row = g_ctx.row(i) + off;
                // dV and dA
                for (std::size_t j = 0; j < len; ++j) {
                    const double a = att.at(i, j);
                    double acc = 0.0;
                    if (a != 0.0) {
                        double* g_v_row = g_v.row(j) + off;
                        const double* v_row = c.v.row(j) + off;
                        for (std::size_t t = 0; t < dh; ++t) {
                            g_v_row[t] += a * g_ctx_row[t];
                            acc += g_ctx_row[t] * v_row[t];
                        }
                    } else {
                        const double* v_row = c.v.row(j) + off;
                        for (std::size_t t = 0; t < dh; ++t) acc += g_ctx_row[t] * v_row[t];
                    }
                    g_att[j] = acc;
                }
                // softmax backward (masked columns have att == 0 -> zero grad)
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) dot += g_att[j] * att.at(i, j);
                for (std::size_t j = 0; j < len; ++j)
                    g_scores[j] = att.at(i, j) * (g_att[j] - dot);
                // scores = scale * q_i . k_j
                double* g_q_row = g_q.row(i) + off;
                const double* q_row = c.q.row(i) + off;
                for (std::size_t j = 0; j < len; ++j) {
                    const double gs = g_scores[j] * scale;
                    if (gs == 0.0) continue;
                    const double* k_row = c.k.row(j) + off;
                    double* g_k_row = g_k.row(j) + off;
                    for (std::size_t t = 0; t < dh; ++t) {
                        g_q_row[t] += gs * k_row[t];
                        g_k_row[t] += gs * q_row[t];
                    }
                }
            }
        }

        // qkv projections
        for (std::size_t pos = 0; pos < len; ++pos) {
            vecmat_backward(c.x_in.row(pos), blk.w_q, g_q.row(pos), g_x_in.row(pos), gb.w_q.data(),
                            gb.b_q.data());
            vecmat_backward(c.x_in.row(pos), blk.w_k, g_k.row(pos), g_x_in.row(pos), gb.w_k.data(),
                            gb.b_k.data());
            vecmat_backward(c.x_in.row(pos), blk.w_v, g_v.row(pos), g_x_in.row(pos), gb.w_v.data(),
                            gb.b_v.data());
        }
        g_x = std::move(g_x_in);
    }

    // embeddings: emb = token_emb + pos_emb
    const std::size_t pd = p.pretrained_mode ? p.item_table.cols : 0;
    for (std::size_t pos = 0; pos < len; ++pos) {
        const double* g_row = g_x.row(pos);
        double* g_pe = g.pos_emb.data() + pos * d;
        for (std::size_t j = 0; j < d; ++j) g_pe[j] += g_row[j];
        const std::int32_t token = cache.tokens[pos];
        if (token == kPadToken || token == kMaskToken) {
            double* g_sp = g.special_emb.data() + static_cast<std::size_t>(token) * d;
            for (std::size_t j = 0; j < d; ++j) g_sp[j] += g_row[j];
        } else {
            const std::uint32_t item = token_to_item(token);
            if (p.pretrained_mode) {
                const S* e = p.item_table.row(item);
                for (std::size_t c2 = 0; c2 < pd; ++c2) {
                    const double ec = static_cast<double>(e[c2]);
                    double* g_p = g.input_proj.data() + c2 * d;
                    for (std::size_t j = 0; j < d; ++j) g_p[j] += ec * g_row[j];
                }
            } else {
                double* g_t = g.item_table.data() + static_cast<std::size_t>(item) * d;
                for (std::size_t j = 0; j < d; ++j) g_t[j] += g_row[j];
            }
        }
    }
}

}  // namespace detail

// Mean masked-position cross-entropy over the batch; gradients accumulate into
// `grads` when non-null. Softmax over all items at each target position.
template <class S>
double seqrec_loss_and_grads(const SeqParams<S>& p, const MaskedBatch& batch, SeqGrads* grads) {
    if (batch.targets.empty()) throw std::runtime_error("seqrec_loss: no targets");
    const double scale = 1.0 / static_cast<double>(batch.targets.size());
    const std::size_t d = static_cast<std::size_t>(p.d_model);

    // group targets by sequence
    std::vector<std::vector<const MaskTarget*>> by_seq(batch.tokens.size());
    for (const MaskTarget& t : batch.targets) by_seq[t.seq].push_back(&t);

    double total = 0.0;
    SeqCache cache;
    std::vector<double> logits(p.n_items), probs(p.n_items);
    for (std::size_t s = 0; s < batch.tokens.size(); ++s) {
        if (by_seq[s].empty()) continue;
        seqrec_encode(p, batch.tokens[s], cache);
        const MatrixD& hidden = cache.final_hidden();
        MatrixD g_hidden;
        if (grads) g_hidden = MatrixD(cache.tokens.size(), d);

        for (const MaskTarget* t : by_seq[s]) {
            const double* h = hidden.row(t->pos);
            logits_at(p, h, logits.data());
            double maxz = -std::numeric_limits<double>::infinity();
            for (double z : logits) maxz = std::max(maxz, z);
            double denom = 0.0;
            for (std::uint32_t y = 0; y < p.n_items; ++y) {
                probs[y] = std::exp(logits[y] - maxz);
                denom += probs[y];
            }
            const std::uint32_t target = token_to_item(t->original);
            if (target >= p.n_items)
                throw std::runtime_error("seqrec_loss: target item out of range");
            total += (std::log(denom) + maxz - logits[target]) * scale;

            if (grads) {
                double* gh = g_hidden.row(t->pos);
                for (std::uint32_t y = 0; y < p.n_items; ++y) {
                    double dz = probs[y] / denom;
                    if (y == target) dz -= 1.0;
                    dz *= scale;
                    if (dz == 0.0) continue;
                    grads->head_b[y] += dz;
                    for (std::size_t dd = 0; dd < d; ++dd) {
                        grads->head_w[dd * p.n_items + y] += h[dd] * dz;
                        gh[dd] += static_cast<double>(p.head_w.at(dd, y)) * dz;
                    }
                }
            }
        }
        if (grads) detail::seqrec_backward(p, cache, g_hidden, *grads);
    }
    return total;
}

// --- training and inference ---------------------------------------------------

template <class S>
std::vector<Ranking> recommend_seqrec(const SeqParams<S>& p, const SequenceDataset& dataset,
                                      const SeenSets& seen, std::span<const std::uint32_t> users,
                                      std::size_t k) {
    if (k == 0) throw std::runtime_error("recommend_seqrec: K must be >= 1");
    std::vector<Ranking> out;
    out.reserve(users.size());
    SeqCache cache;
    std::vector<double> scores(p.n_items);
    std::vector<std::int32_t> tokens;
    for (std::uint32_t u : users) {
        const auto& history = dataset.sequences.at(u);
        if (history.empty())
            throw std::runtime_error("recommend_seqrec: user " + std::to_string(u) +
                                     " has no history");
        tokens = history;
        tokens.push_back(kMaskToken);
        seqrec_encode(p, tokens, cache);
        logits_at(p, cache.final_hidden().row(tokens.size() - 1), scores.data());
        out.push_back(topk_ranking(u, scores, seen, k));
    }
    return out;
}

namespace detail {

template <class S>
double seqrec_validation_ndcg(const SeqParams<S>& p, const SequenceDataset& dataset,
                              const DatasetSplit& split, int k) {
    auto rel = relevance_sets(split.validation, split.n_users());
    auto rankings = recommend_seqrec(p, dataset, split.seen, split.validation_users,
                                     static_cast<std::size_t>(k));
    return evaluate_rankings("seqrec", "val", rankings, rel, static_cast<std::size_t>(k)).means.ndcg;
}

template <class S>
struct SeqTensorRegistry {
    std::vector<std::span<S>> params;
    std::vector<std::vector<double>*> grads;
    std::vector<AdamState> states;

    void add(std::vector<S>& p, std::vector<double>& g) {
        params.push_back(std::span<S>(p));
        grads.push_back(&g);
    }
    void add(Matrix<S>& p, std::vector<double>& g) {
        params.push_back(std::span<S>(p.data));
        grads.push_back(&g);
    }

    void init_states() {
        states.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) states[i].resize(params[i].size());
    }

    void step(double lr) {
        for (std::size_t i = 0; i < params.size(); ++i)
            adam_step<S>(states[i], params[i], *grads[i], lr);
    }
};

template <class S>
SeqTensorRegistry<S> build_registry(SeqParams<S>& p, SeqGrads& g) {
    SeqTensorRegistry<S> reg;
    if (p.pretrained_mode)
        reg.add(p.input_proj, g.input_proj);  // item_table stays frozen
    else
        reg.add(p.item_table, g.item_table);
    reg.add(p.special_emb, g.special_emb);
    reg.add(p.pos_emb, g.pos_emb);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        auto& gb = g.blocks[l];
        reg.add(b.w_q, gb.w_q);
        reg.add(b.b_q, gb.b_q);
        reg.add(b.w_k, gb.w_k);
        reg.add(b.b_k, gb.b_k);
        reg.add(b.w_v, gb.w_v);
        reg.add(b.b_v, gb.b_v);
        reg.add(b.w_o, gb.w_o);
        reg.add(b.b_o, gb.b_o);
        reg.add(b.ln1_gamma, gb.ln1_gamma);
        reg.add(b.ln1_beta, gb.ln1_beta);
        reg.add(b.w_ff1, gb.w_ff1);
        reg.add(b.b_ff1, gb.b_ff1);
        reg.add(b.w_ff2, gb.w_ff2);
        reg.add(b.b_ff2, gb.b_ff2);
        reg.add(b.ln2_gamma, gb.ln2_gamma);
        reg.add(b.ln2_beta, gb.ln2_beta);
    }
    reg.add(p.head_w, g.head_w);
    reg.add(p.head_b, g.head_b);
    reg.init_states();
    return reg;
}

}  // namespace detail

// Masked-position cross-entropy training with Adam, fresh masking per epoch.
// When monitor_split is given, validation NDCG drives reduce-on-plateau and
// early stopping and the best snapshot is restored.
template <class S>
TrainHistory train_seqrec(SeqParams<S>& p, const SequenceDataset& dataset,
                          const SeqTrainConfig& config,
                          const DatasetSplit* monitor_split = nullptr) {
    config.validate();
    TrainHistory history;
    if (config.epochs == 0) return history;

    std::vector<std::uint32_t> order;
    for (std::uint32_t u = 0; u < dataset.sequences.size(); ++u)
        if (!dataset.sequences[u].empty()) order.push_back(u);
    if (order.empty()) throw std::runtime_error("train_seqrec: no sequences");

    std::mt19937_64 rng(mix_seed(config.seed, "seqrec.train"));
    const bool monitor = monitor_split != nullptr && !monitor_split->validation_users.empty();
    PlateauController controller{config.plateau_factor, config.plateau_patience,
                                 config.early_stop_patience, config.lr_floor};
    double lr = config.lr;
    SeqParams<S> best;
    bool have_best = false;

    SeqGrads grads;
    grads.resize_like(p);
    auto registry = detail::build_registry(p, grads);

    std::vector<std::vector<std::int32_t>> batch;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_ce = 0.0;
        std::size_t epoch_targets = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch.clear();
            for (std::size_t idx = start; idx < stop; ++idx)
                batch.push_back(dataset.sequences[order[idx]]);
            MaskedBatch masked = apply_masking(batch, rng, config.mask_prob);

            grads.clear();
            const double loss = seqrec_loss_and_grads(p, masked, &grads);
            check_finite_loss(loss, epoch, start / static_cast<std::size_t>(config.batch_size),
                              "train_seqrec");
            epoch_ce += loss * static_cast<double>(masked.targets.size());
            epoch_targets += masked.targets.size();
            registry.step(lr);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_targets > 0 ? epoch_ce / static_cast<double>(epoch_targets) : 0.0;
        stats.lr = lr;
        if (monitor) {
            stats.val_metric =
                detail::seqrec_validation_ndcg(p, dataset, *monitor_split, config.monitor_k);
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
