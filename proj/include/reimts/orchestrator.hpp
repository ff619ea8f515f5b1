#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "reimts/autodiff.hpp"
#include "reimts/backbones.hpp"
#include "reimts/fusion.hpp"
#include "reimts/params.hpp"
#include "reimts/splitting.hpp"
#include "reimts/tensor.hpp"
#include "reimts/types.hpp"

namespace reimts {

/// Where the decoder reads from: the concatenation of all levels projected
/// back to width D, or the lowest level's representation alone.
enum class DecodeMode { concat_all_levels, lowest_level_only };

enum class Ablation { full, rp_sample, rp_split, rp_iarf, wo_iarf };

inline const char* decode_mode_name(DecodeMode m) {
    return m == DecodeMode::concat_all_levels ? "concat" : "lowest";
}

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::rp_sample: return "rp_sample";
        case Ablation::rp_split: return "rp_split";
        case Ablation::rp_iarf: return "rp_iarf";
        case Ablation::wo_iarf: return "wo_iarf";
    }
    return "?";
}

struct ReimtsConfig {
    std::vector<double> periods; // [T^1, ..., T^N]
    BackboneConfig backbone;
    DecodeMode decode_mode = DecodeMode::concat_all_levels;
    Ablation ablation = Ablation::full;
    AlphaMode alpha_mode = AlphaMode::per_channel;
    long num_variables = 0;

    ScaleStack stack() const { return ScaleStack(periods); }
    int levels() const { return static_cast<int>(periods.size()); }

    DecodeMode effective_decode_mode() const {
        // wo_iarf must still route upper levels to the decoder, otherwise the
        // variant collapses to a single-scale model.
        return ablation == Ablation::wo_iarf ? DecodeMode::concat_all_levels : decode_mode;
    }
};

/// Full parameter set: one encoder per level, one scoring layer per level
/// boundary, a (N*D -> D) projection for concat decoding, one shared decoder.
inline ParamStore make_model_params(const ReimtsConfig& cfg, std::uint64_t seed) {
    if (cfg.num_variables <= 0)
        throw std::invalid_argument("make_model_params: num_variables not set");
    ScaleStack stack = cfg.stack(); // validates the periods
    (void)stack;
    ParamStore store;
    Rng rng(derive_seed(seed, 0xB0B0));
    int N = cfg.levels();
    for (int n = 1; n <= N; ++n)
        add_encoder_params(store, cfg.backbone, cfg.num_variables,
                           "enc.l" + std::to_string(n) + ".", rng);
    for (int b = 1; b <= N - 1; ++b)
        add_fusion_params(store, cfg.backbone.hidden_dim, cfg.alpha_mode, b, rng);
    if (N > 1) {
        long D = cfg.backbone.hidden_dim;
        double s = 1.0 / std::sqrt(static_cast<double>(N) * static_cast<double>(D));
        store.add("proj.w", uniform_tensor({N * D, D}, -s, s, rng));
    }
    add_decoder_params(store, cfg.backbone, cfg.num_variables, rng);
    return store;
}

struct ForwardStats {
    int encoder_calls = 0;
    int fusion_calls = 0;
    int decoder_calls = 0;
};

struct ForwardResult {
    ad::Var predictions; // L_Q x V
    ForwardStats stats;
    std::vector<AlignedSample> level_grids; // index n-1 holds the level-n grid
};

namespace detail {

inline std::vector<AlignedSample> build_level_grids(const ReimtsConfig& cfg,
                                                    const AlignedSample& level1) {
    ScaleStack stack = cfg.stack();
    int N = cfg.levels();
    std::vector<AlignedSample> grids;
    grids.reserve(static_cast<std::size_t>(N));
    grids.push_back(level1);
    for (int n = 2; n <= N; ++n) {
        switch (cfg.ablation) {
            case Ablation::rp_sample: {
                AlignedSample copy = level1;
                copy.scale_level = n; // unsplit sample stands in at every level
                grids.push_back(std::move(copy));
                break;
            }
            case Ablation::rp_split:
                grids.push_back(split_to_level(level1, stack, n, SplitMode::obs_count));
                break;
            default:
                grids.push_back(split_to_level(level1, stack, n, SplitMode::time_period));
        }
    }
    return grids;
}

inline RepVar transported(const TransportPlan& plan, const RepVar& src,
                          const AlignedSample& dst) {
    RepVar out = src;
    out.rows = apply_transport(plan, src.rows);
    out.scale_level = dst.scale_level;
    out.P = dst.num_subsamples;
    out.L = dst.max_len;
    out.V = dst.num_variables;
    return out;
}

} // namespace detail

/// Runs the recursion end-to-end: encode level 1, then per boundary
/// transport / split / encode / fuse, and finally decode per the configured
/// mode. Exactly N encoder calls, N-1 fusion calls and one decoder call per
/// pass.
inline ForwardResult forward(ad::Tape& tape, BoundParams& params, const ReimtsConfig& cfg,
                             const AlignedSample& level1, const ForecastQuery& query) {
    if (level1.scale_level != 1)
        throw std::invalid_argument("forward: input sample must be at level 1");
    if (level1.num_variables != cfg.num_variables)
        throw std::invalid_argument("forward: sample has " +
                                    std::to_string(level1.num_variables) + " variables, config " +
                                    std::to_string(cfg.num_variables));
    int N = cfg.levels();
    double time_scale = cfg.periods.front();

    ForwardResult res;
    res.level_grids = detail::build_level_grids(cfg, level1);

    std::vector<RepVar> fused; // G^1 .. G^N
    fused.reserve(static_cast<std::size_t>(N));

    RepVar e1 = encode(tape, params, cfg.backbone, res.level_grids[0], query, time_scale,
                       "enc.l1.");
    ++res.stats.encoder_calls;
    fused.push_back(e1); // G^1 = E^1

    for (int n = 1; n <= N - 1; ++n) {
        const AlignedSample& upper = res.level_grids[static_cast<std::size_t>(n - 1)];
        const AlignedSample& lower = res.level_grids[static_cast<std::size_t>(n)];
        TransportPlan plan = make_transport_plan(upper, lower, cfg.backbone.kind);
        RepVar h = detail::transported(plan, fused.back(), lower);
        RepVar e = encode(tape, params, cfg.backbone, lower, query, time_scale,
                          "enc.l" + std::to_string(n + 1) + ".");
        ++res.stats.encoder_calls;
        switch (cfg.ablation) {
            case Ablation::wo_iarf:
                fused.push_back(e);
                break;
            case Ablation::rp_iarf: {
                RepVar g = e;
                g.rows = ad::add(e.rows, h.rows); // plain addition, no gate
                fused.push_back(g);
                ++res.stats.fusion_calls;
                break;
            }
            default: {
                RepVar h_imts = mask_global(tape, h, lower);
                ad::Var alpha = score(params, cfg.alpha_mode, n, h_imts.rows);
                fused.push_back(fuse(e, h_imts, alpha));
                ++res.stats.fusion_calls;
            }
        }
    }

    const AlignedSample& bottom = res.level_grids.back();
    RepVar decoded_input = fused.back();
    if (cfg.effective_decode_mode() == DecodeMode::concat_all_levels && N > 1) {
        // Bring every level to the lowest level's geometry with the same
        // transport rules, concatenate along the hidden axis, project back
        // to D so the backbone decoder is reused unchanged.
        std::vector<ad::Var> cols;
        for (int n = 1; n <= N; ++n) {
            RepVar g = fused[static_cast<std::size_t>(n - 1)];
            for (int m = n; m <= N - 1; ++m) {
                const AlignedSample& up = res.level_grids[static_cast<std::size_t>(m - 1)];
                const AlignedSample& lo = res.level_grids[static_cast<std::size_t>(m)];
                TransportPlan plan = make_transport_plan(up, lo, cfg.backbone.kind);
                g = detail::transported(plan, g, lo);
            }
            cols.push_back(g.rows);
        }
        RepVar proj = fused.back();
        proj.rows = ad::matmul(ad::concat_cols(cols), params("proj.w"));
        decoded_input = proj;
    }

    res.predictions = decode(tape, params, cfg.backbone, decoded_input, bottom, query,
                             time_scale);
    ++res.stats.decoder_calls;
    return res;
}

/// Eq-style masked MSE: (1/Y_Q) * sum over query positions of squared error.
/// Positions with query_mask 0 contribute exactly nothing, in value and in
/// gradient, because the mask multiplies the residual before reduction.
inline ad::Var masked_mse_loss(ad::Tape& tape, ad::Var predictions, const ForecastQuery& q) {
    if (!q.has_truth)
        throw std::invalid_argument("masked_mse_loss: query carries no truth values");
    long yq = q.query_count();
    if (yq == 0) throw std::invalid_argument("masked_mse_loss: no forecast targets");
    const Tensor& pv = predictions.val();
    if (pv.rows() != q.max_len || pv.cols() != q.num_variables)
        throw std::invalid_argument("masked_mse_loss: prediction grid " + pv.shape_str() +
                                    " does not match query grid");
    ad::Var diff = ad::sub(predictions, tape.constant(q.truth_values));
    ad::Var masked = ad::mul(diff, tape.constant(q.query_mask));
    return ad::scale(ad::sum_all(ad::mul(masked, masked)), 1.0 / static_cast<double>(yq));
}

/// Unnormalized masked squared-error sum, for batch- or split-global
/// aggregation (divide by the summed query count afterwards).
inline ad::Var masked_sq_err_sum(ad::Tape& tape, ad::Var predictions, const ForecastQuery& q) {
    ad::Var diff = ad::sub(predictions, tape.constant(q.truth_values));
    ad::Var masked = ad::mul(diff, tape.constant(q.query_mask));
    return ad::sum_all(ad::mul(masked, masked));
}

} // namespace reimts
