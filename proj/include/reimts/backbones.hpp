#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "reimts/autodiff.hpp"
#include "reimts/params.hpp"
#include "reimts/splitting.hpp"
#include "reimts/tensor.hpp"
#include "reimts/types.hpp"

namespace reimts {

/// Reference backbone configuration. One encoder parameter set exists per
/// scale level; the decoder is single and shared across levels.
struct BackboneConfig {
    RepKind kind = RepKind::temporal;
    long hidden_dim = 16;
    int num_layers = 1;
};

inline constexpr int kTimeFeatureCount = 5;

/// Sinusoidal encoding of a raw timestamp normalized by the lookback span.
inline std::array<double, kTimeFeatureCount> time_features(double t, double scale) {
    double tau = scale > 0.0 ? t / scale : t;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return {tau, std::sin(two_pi * tau), std::cos(two_pi * tau),
            std::sin(2.0 * two_pi * tau), std::cos(2.0 * two_pi * tau)};
}

/// A representation living on the tape, with its logical geometry.
struct RepVar {
    ad::Var rows; // (rows x D), row order follows Representation::rows()
    RepKind kind = RepKind::temporal;
    int scale_level = 1;
    long P = 1, L = 0, V = 0, D = 0;

    long row_count() const {
        switch (kind) {
            case RepKind::temporal: return P * L;
            case RepKind::variable: return P * V;
            case RepKind::observation: return P * L * V;
        }
        return 0;
    }

    Representation materialize() const {
        Representation r;
        r.kind = kind;
        r.scale_level = scale_level;
        r.hidden_dim = D;
        r.P = P;
        r.L = L;
        r.V = V;
        r.data = rows.val();
        return r;
    }
};

namespace detail {

inline Tensor small_uniform(std::vector<long> shape, long fan_in, Rng& rng) {
    double s = 1.0 / std::sqrt(static_cast<double>(std::max<long>(fan_in, 1)));
    return uniform_tensor(std::move(shape), -s, s, rng);
}

inline long obs_feature_count() { return 1 + kTimeFeatureCount; } // value + time

} // namespace detail

// ---------------------------------------------------------------------------
// Parameter registration
// ---------------------------------------------------------------------------

inline void add_encoder_params(ParamStore& store, const BackboneConfig& cfg, long V,
                               const std::string& prefix, Rng& rng) {
    long D = cfg.hidden_dim;
    switch (cfg.kind) {
        case RepKind::temporal: {
            long F0 = V * (2 + kTimeFeatureCount); // fill, mask, gated time feats
            for (int l = 0; l < cfg.num_layers; ++l) {
                long F = l == 0 ? F0 : D;
                std::string p = prefix + "gru" + std::to_string(l) + ".";
                for (const char* g : {"z", "r", "h"}) {
                    store.add(p + "w" + g, detail::small_uniform({F, D}, F, rng));
                    store.add(p + "u" + g, detail::small_uniform({D, D}, D, rng));
                    store.add(p + "b" + g, Tensor({1, D}));
                }
                store.add(p + "h0", Tensor({1, D}));
            }
            break;
        }
        case RepKind::variable: {
            long F = detail::obs_feature_count();
            store.add(prefix + "w_in", detail::small_uniform({F, D}, F, rng));
            store.add(prefix + "b_in", Tensor({1, D}));
            store.add(prefix + "q", detail::small_uniform({D, 1}, D, rng));
            store.add(prefix + "emb", detail::small_uniform({V, D}, D, rng));
            for (int l = 1; l < cfg.num_layers; ++l) {
                std::string p = prefix + "ff" + std::to_string(l) + ".";
                store.add(p + "w", detail::small_uniform({D, D}, D, rng));
                store.add(p + "b", Tensor({1, D}));
            }
            break;
        }
        case RepKind::observation: {
            long F = detail::obs_feature_count();
            store.add(prefix + "w_in", detail::small_uniform({F, D}, F, rng));
            store.add(prefix + "b_in", Tensor({1, D}));
            store.add(prefix + "emb", detail::small_uniform({V, D}, D, rng));
            for (int l = 0; l < cfg.num_layers; ++l) {
                std::string p = prefix + "attn" + std::to_string(l) + ".";
                for (const char* w : {"wq", "wk", "wv", "wo"})
                    store.add(p + w, detail::small_uniform({D, D}, D, rng));
            }
            break;
        }
    }
}

inline void add_decoder_params(ParamStore& store, const BackboneConfig& cfg, long V, Rng& rng) {
    long D = cfg.hidden_dim;
    long in = 0;
    switch (cfg.kind) {
        case RepKind::temporal:
            store.add("dec.emb", detail::small_uniform({V, D}, D, rng));
            in = D + kTimeFeatureCount + D;
            break;
        case RepKind::variable:
        case RepKind::observation:
            in = D + kTimeFeatureCount;
            break;
    }
    store.add("dec.ff1.w", detail::small_uniform({in, D}, in, rng));
    store.add("dec.ff1.b", Tensor({1, D}));
    store.add("dec.ff2.w", detail::small_uniform({D, 1}, D, rng));
    store.add("dec.ff2.b", Tensor({1, 1}));
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

namespace detail {

/// Per-slot GRU input rows: for each variable, last-observed fill value,
/// mask bit, and mask-gated time features. Only masked-in data reaches the
/// features, so padding values can never leak into the encoding.
inline std::vector<Tensor> temporal_input_rows(const AlignedSample& a, double time_scale) {
    long P = a.num_subsamples, L = a.max_len, V = a.num_variables;
    long F = V * (2 + kTimeFeatureCount);
    std::vector<Tensor> rows(static_cast<std::size_t>(L), Tensor({P, F}));
    std::vector<double> fill(static_cast<std::size_t>(P * V), 0.0);
    for (long i = 0; i < L; ++i) {
        Tensor& x = rows[static_cast<std::size_t>(i)];
        for (long k = 0; k < P; ++k)
            for (long v = 0; v < V; ++v) {
                double m = a.mask_at(k, i, v);
                if (m == 1.0) fill[static_cast<std::size_t>(k * V + v)] = a.value(k, i, v);
                long base = k * F + v * (2 + kTimeFeatureCount);
                x[base] = fill[static_cast<std::size_t>(k * V + v)];
                x[base + 1] = m;
                if (m == 1.0) {
                    auto tf = time_features(a.time_at(k, i, v), time_scale);
                    for (int f = 0; f < kTimeFeatureCount; ++f) x[base + 2 + f] = tf[f];
                }
            }
    }
    return rows;
}

inline Tensor slot_gate(const AlignedSample& a, long slot) {
    Tensor g({a.num_subsamples, 1});
    for (long k = 0; k < a.num_subsamples; ++k) {
        double any = 0.0;
        for (long v = 0; v < a.num_variables; ++v)
            if (a.mask_at(k, slot, v) == 1.0) { any = 1.0; break; }
        g[k] = any;
    }
    return g;
}

inline Tensor broadcast_col(const Tensor& col, long width) {
    Tensor out({col.rows(), width});
    for (long i = 0; i < col.rows(); ++i)
        for (long j = 0; j < width; ++j) out[i * width + j] = col[i];
    return out;
}

inline ad::Var broadcast_row(ad::Tape& tape, ad::Var row, long count) {
    std::vector<long> idx(static_cast<std::size_t>(count), 0);
    (void)tape;
    return ad::gather_rows(row, idx);
}

} // namespace detail

/// TemporalRecurrent: gated recurrent pass over the padded slot axis, one
/// chain per subsample. Padding values are replaced by the last observed
/// value per variable; slots with no observation at all leave the state
/// untouched, so an empty subsample just propagates the learned initial
/// state. Emits E_time of P x L x D.
inline RepVar encode_temporal(ad::Tape& tape, BoundParams& params, const BackboneConfig& cfg,
                              const AlignedSample& a, double time_scale,
                              const std::string& prefix) {
    long P = a.num_subsamples, L = a.max_len, D = cfg.hidden_dim;
    std::vector<Tensor> inputs = detail::temporal_input_rows(a, time_scale);
    std::vector<Tensor> gates;
    gates.reserve(static_cast<std::size_t>(L));
    for (long i = 0; i < L; ++i)
        gates.push_back(detail::broadcast_col(detail::slot_gate(a, i), D));

    std::vector<ad::Var> layer_in;
    layer_in.reserve(static_cast<std::size_t>(L));
    for (long i = 0; i < L; ++i)
        layer_in.push_back(tape.constant(inputs[static_cast<std::size_t>(i)]));

    std::vector<ad::Var> states;
    for (int l = 0; l < cfg.num_layers; ++l) {
        std::string p = prefix + "gru" + std::to_string(l) + ".";
        ad::Var wz = params(p + "wz"), uz = params(p + "uz"), bz = params(p + "bz");
        ad::Var wr = params(p + "wr"), ur = params(p + "ur"), br = params(p + "br");
        ad::Var wh = params(p + "wh"), uh = params(p + "uh"), bh = params(p + "bh");
        ad::Var h = detail::broadcast_row(tape, params(p + "h0"), P);
        Tensor ones = Tensor::full({P, D}, 1.0);
        states.clear();
        states.reserve(static_cast<std::size_t>(L));
        for (long i = 0; i < L; ++i) {
            ad::Var x = layer_in[static_cast<std::size_t>(i)];
            ad::Var z = ad::sigmoid(ad::add_rowvec(ad::add(ad::matmul(x, wz), ad::matmul(h, uz)), bz));
            ad::Var r = ad::sigmoid(ad::add_rowvec(ad::add(ad::matmul(x, wr), ad::matmul(h, ur)), br));
            ad::Var hc = ad::tanh_op(
                ad::add_rowvec(ad::add(ad::matmul(x, wh), ad::matmul(ad::mul(r, h), uh)), bh));
            ad::Var mixed = ad::add(ad::mul(ad::sub(tape.constant(ones), z), h), ad::mul(z, hc));
            // update only where the slot carries at least one real observation
            ad::Var delta = ad::sub(mixed, h);
            h = ad::add(h, ad::mul(delta, tape.constant(gates[static_cast<std::size_t>(i)])));
            states.push_back(h);
        }
        layer_in = states;
    }

    // states are per-slot (P x D); reorder to (k, i) row-major rows.
    ad::Var stacked = ad::concat_rows(states); // (L*P x D), order (i, k)
    std::vector<long> reorder(static_cast<std::size_t>(P * L));
    for (long k = 0; k < P; ++k)
        for (long i = 0; i < L; ++i)
            reorder[static_cast<std::size_t>(k * L + i)] = i * P + k;
    RepVar rep;
    rep.rows = ad::gather_rows(stacked, reorder);
    rep.kind = RepKind::temporal;
    rep.scale_level = a.scale_level;
    rep.P = P;
    rep.L = L;
    rep.V = a.num_variables;
    rep.D = D;
    return rep;
}

/// VariablePool: per (subsample, variable) masked attention pooling over
/// that variable's observations with time encodings, plus a learned
/// per-variable embedding. Emits E_var of P x V x D.
inline RepVar encode_variable(ad::Tape& tape, BoundParams& params, const BackboneConfig& cfg,
                              const AlignedSample& a, double time_scale,
                              const std::string& prefix) {
    long P = a.num_subsamples, L = a.max_len, V = a.num_variables, D = cfg.hidden_dim;
    ad::Var w_in = params(prefix + "w_in");
    ad::Var b_in = params(prefix + "b_in");
    ad::Var q = params(prefix + "q");
    ad::Var emb = params(prefix + "emb");
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));

    std::vector<ad::Var> rows;
    rows.reserve(static_cast<std::size_t>(P * V));
    for (long k = 0; k < P; ++k)
        for (long v = 0; v < V; ++v) {
            long c = 0;
            for (long i = 0; i < L; ++i)
                if (a.mask_at(k, i, v) == 1.0) ++c;
            ad::Var evar = ad::gather_rows(emb, {v});
            if (c == 0) {
                rows.push_back(evar);
                continue;
            }
            Tensor x({c, detail::obs_feature_count()});
            long r = 0;
            for (long i = 0; i < L; ++i) {
                if (a.mask_at(k, i, v) != 1.0) continue;
                x[r * x.cols()] = a.value(k, i, v);
                auto tf = time_features(a.time_at(k, i, v), time_scale);
                for (int f = 0; f < kTimeFeatureCount; ++f) x[r * x.cols() + 1 + f] = tf[f];
                ++r;
            }
            ad::Var e = ad::tanh_op(ad::linear(tape.constant(x), w_in, b_in)); // c x D
            ad::Var scores = ad::scale(ad::matmul(e, q), inv_sqrt_d);          // c x 1
            ad::Var attn = ad::softmax_rows(ad::transpose(scores));            // 1 x c
            ad::Var pooled = ad::matmul(attn, e);                              // 1 x D
            rows.push_back(ad::add(pooled, evar));
        }

    ad::Var out = ad::concat_rows(rows);
    for (int l = 1; l < cfg.num_layers; ++l) {
        std::string p = prefix + "ff" + std::to_string(l) + ".";
        out = ad::tanh_op(ad::linear(out, params(p + "w"), params(p + "b")));
    }
    RepVar rep;
    rep.rows = out;
    rep.kind = RepKind::variable;
    rep.scale_level = a.scale_level;
    rep.P = P;
    rep.L = L;
    rep.V = V;
    rep.D = D;
    return rep;
}

/// ObservationSet: per-slot embedding of (value, time encoding, variable
/// embedding) followed by self-attention over the masked-in slots of each
/// subsample. Padding slots stay exactly zero. Emits E_obs of P x L x V x D.
inline RepVar encode_observation(ad::Tape& tape, BoundParams& params, const BackboneConfig& cfg,
                                 const AlignedSample& a, double time_scale,
                                 const std::string& prefix) {
    long P = a.num_subsamples, L = a.max_len, V = a.num_variables, D = cfg.hidden_dim;
    ad::Var w_in = params(prefix + "w_in");
    ad::Var b_in = params(prefix + "b_in");
    ad::Var emb = params(prefix + "emb");
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));

    std::vector<ad::Var> chunks;
    std::vector<long> full_index(static_cast<std::size_t>(P * L * V), -1);
    long offset = 0;
    for (long k = 0; k < P; ++k) {
        std::vector<long> var_ids;
        std::vector<std::pair<long, long>> slots;
        for (long i = 0; i < L; ++i)
            for (long v = 0; v < V; ++v)
                if (a.mask_at(k, i, v) == 1.0) {
                    var_ids.push_back(v);
                    slots.emplace_back(i, v);
                }
        long c = static_cast<long>(slots.size());
        if (c == 0) continue;
        Tensor x({c, detail::obs_feature_count()});
        for (long r = 0; r < c; ++r) {
            auto [i, v] = slots[static_cast<std::size_t>(r)];
            x[r * x.cols()] = a.value(k, i, v);
            auto tf = time_features(a.time_at(k, i, v), time_scale);
            for (int f = 0; f < kTimeFeatureCount; ++f) x[r * x.cols() + 1 + f] = tf[f];
        }
        ad::Var e = ad::tanh_op(ad::add(ad::linear(tape.constant(x), w_in, b_in),
                                        ad::gather_rows(emb, var_ids)));
        for (int l = 0; l < cfg.num_layers; ++l) {
            std::string p = prefix + "attn" + std::to_string(l) + ".";
            ad::Var qm = ad::matmul(e, params(p + "wq"));
            ad::Var km = ad::matmul(e, params(p + "wk"));
            ad::Var vm = ad::matmul(e, params(p + "wv"));
            ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(qm, ad::transpose(km)), inv_sqrt_d));
            e = ad::add(e, ad::matmul(ad::matmul(attn, vm), params(p + "wo")));
        }
        chunks.push_back(e);
        for (long r = 0; r < c; ++r) {
            auto [i, v] = slots[static_cast<std::size_t>(r)];
            full_index[static_cast<std::size_t>((k * L + i) * V + v)] = offset + r;
        }
        offset += c;
    }

    RepVar rep;
    rep.kind = RepKind::observation;
    rep.scale_level = a.scale_level;
    rep.P = P;
    rep.L = L;
    rep.V = V;
    rep.D = D;
    if (chunks.empty()) {
        rep.rows = tape.constant(Tensor({P * L * V, D}));
    } else {
        rep.rows = ad::gather_rows(ad::concat_rows(chunks), full_index);
    }
    return rep;
}

/// Dispatch per backbone kind. The forecast query is part of the encoder
/// contract (some backbones encode future timestamps directly); the
/// reference backbones resolve queries at decode time instead.
inline RepVar encode(ad::Tape& tape, BoundParams& params, const BackboneConfig& cfg,
                     const AlignedSample& aligned, const ForecastQuery& query,
                     double time_scale, const std::string& prefix) {
    (void)query;
    switch (cfg.kind) {
        case RepKind::temporal:
            return encode_temporal(tape, params, cfg, aligned, time_scale, prefix);
        case RepKind::variable:
            return encode_variable(tape, params, cfg, aligned, time_scale, prefix);
        case RepKind::observation:
            return encode_observation(tape, params, cfg, aligned, time_scale, prefix);
    }
    throw std::logic_error("encode: unknown backbone kind");
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor query_time_feature_rows(const ForecastQuery& q, double time_scale) {
    long LQ = q.max_len, V = q.num_variables;
    Tensor out({LQ * V, static_cast<long>(kTimeFeatureCount)});
    for (long j = 0; j < LQ; ++j)
        for (long v = 0; v < V; ++v) {
            auto tf = time_features(q.query_timestamps[q.at(j, v)], time_scale);
            for (int f = 0; f < kTimeFeatureCount; ++f)
                out[(j * V + v) * kTimeFeatureCount + f] = tf[f];
        }
    return out;
}

inline ad::Var decoder_head(ad::Tape& tape, BoundParams& params, ad::Var features, long LQ,
                            long V) {
    ad::Var h = ad::tanh_op(ad::linear(features, params("dec.ff1.w"), params("dec.ff1.b")));
    ad::Var out = ad::linear(h, params("dec.ff2.w"), params("dec.ff2.b")); // (LQ*V) x 1
    (void)tape;
    return ad::reshape(out, {LQ, V});
}

} // namespace detail

/// Maps the level-N representation plus forecast queries to an L_Q x V
/// prediction grid. `grid` is the aligned sample at the representation's
/// level and supplies the masks for pooled statistics. Values at
/// query_mask=0 positions are unconstrained; the loss never reads them.
inline ad::Var decode(ad::Tape& tape, BoundParams& params, const BackboneConfig& cfg,
                      const RepVar& rep, const AlignedSample& grid, const ForecastQuery& query,
                      double time_scale) {
    if (rep.kind != cfg.kind)
        throw std::invalid_argument(std::string("decode: representation kind ") +
                                    rep_kind_name(rep.kind) + " does not match backbone " +
                                    rep_kind_name(cfg.kind));
    if (grid.scale_level != rep.scale_level)
        throw std::invalid_argument("decode: grid level " + std::to_string(grid.scale_level) +
                                    " != representation level " +
                                    std::to_string(rep.scale_level));
    long LQ = query.max_len, V = query.num_variables, D = rep.D;
    long P = rep.P, L = rep.L;
    Tensor tfeat = detail::query_time_feature_rows(query, time_scale);

    switch (cfg.kind) {
        case RepKind::temporal: {
            // summary = mean over subsamples of each chain's final state
            std::vector<long> last(static_cast<std::size_t>(P));
            for (long k = 0; k < P; ++k) last[static_cast<std::size_t>(k)] = k * L + (L - 1);
            ad::Var finals = ad::gather_rows(rep.rows, last); // P x D
            Tensor meanw({1, P});
            for (long k = 0; k < P; ++k) meanw[k] = 1.0 / static_cast<double>(P);
            ad::Var summary = ad::matmul(tape.constant(meanw), finals); // 1 x D
            ad::Var srep = detail::broadcast_row(tape, summary, LQ * V);
            std::vector<long> vidx(static_cast<std::size_t>(LQ * V));
            for (long j = 0; j < LQ; ++j)
                for (long v = 0; v < V; ++v) vidx[static_cast<std::size_t>(j * V + v)] = v;
            ad::Var evar = ad::gather_rows(params("dec.emb"), vidx);
            ad::Var feats = ad::concat_cols({srep, tape.constant(tfeat), evar});
            return detail::decoder_head(tape, params, feats, LQ, V);
        }
        case RepKind::variable: {
            // mean over subsamples per variable
            Tensor poolw({V, P * V});
            for (long v = 0; v < V; ++v)
                for (long k = 0; k < P; ++k) poolw[v * (P * V) + k * V + v] = 1.0 / P;
            ad::Var per_var = ad::matmul(tape.constant(poolw), rep.rows); // V x D
            std::vector<long> vidx(static_cast<std::size_t>(LQ * V));
            for (long j = 0; j < LQ; ++j)
                for (long v = 0; v < V; ++v) vidx[static_cast<std::size_t>(j * V + v)] = v;
            ad::Var vrep = ad::gather_rows(per_var, vidx);
            ad::Var feats = ad::concat_cols({vrep, tape.constant(tfeat)});
            return detail::decoder_head(tape, params, feats, LQ, V);
        }
        case RepKind::observation: {
            // masked mean pool per variable over all subsamples and slots
            Tensor poolw({V, P * L * V});
            std::vector<long> counts(static_cast<std::size_t>(V), 0);
            for (long k = 0; k < P; ++k)
                for (long i = 0; i < L; ++i)
                    for (long v = 0; v < V; ++v)
                        if (grid.mask_at(k, i, v) == 1.0) ++counts[static_cast<std::size_t>(v)];
            for (long k = 0; k < P; ++k)
                for (long i = 0; i < L; ++i)
                    for (long v = 0; v < V; ++v)
                        if (grid.mask_at(k, i, v) == 1.0)
                            poolw[v * (P * L * V) + (k * L + i) * V + v] =
                                1.0 / static_cast<double>(counts[static_cast<std::size_t>(v)]);
            ad::Var per_var = ad::matmul(tape.constant(poolw), rep.rows); // V x D
            std::vector<long> vidx(static_cast<std::size_t>(LQ * V));
            for (long j = 0; j < LQ; ++j)
                for (long v = 0; v < V; ++v) vidx[static_cast<std::size_t>(j * V + v)] = v;
            ad::Var vrep = ad::gather_rows(per_var, vidx);
            ad::Var feats = ad::concat_cols({vrep, tape.constant(tfeat)});
            return detail::decoder_head(tape, params, feats, LQ, V);
        }
    }
    (void)D;
    throw std::logic_error("decode: unknown backbone kind");
}

} // namespace reimts
