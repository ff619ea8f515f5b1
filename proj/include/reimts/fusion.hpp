#pragma once

#include <stdexcept>
#include <string>

#include "reimts/autodiff.hpp"
#include "reimts/backbones.hpp"
#include "reimts/params.hpp"
#include "reimts/splitting.hpp"
#include "reimts/tensor.hpp"
#include "reimts/types.hpp"

namespace reimts {

/// Shape of the fusion gate alpha: a full D-vector per position (default) or
/// a single scalar per position (ablation-style variant).
enum class AlphaMode { per_channel, per_position };

/// One scoring layer per level boundary n -> n+1. Weights start
/// small-uniform with zero bias so training begins near the pure-backbone
/// regime.
inline void add_fusion_params(ParamStore& store, long hidden_dim, AlphaMode mode, int boundary,
                              Rng& rng) {
    std::string p = "fusion.b" + std::to_string(boundary) + ".";
    long out = mode == AlphaMode::per_channel ? hidden_dim : 1;
    double s = 0.1 / std::sqrt(static_cast<double>(hidden_dim));
    store.add(p + "w", uniform_tensor({hidden_dim, out}, -s, s, rng));
    store.add(p + "b", Tensor({1, out}));
}

/// Masks the transported global representation with the lower level's
/// binary mask: elementwise for temporal (per-slot any-variable mask) and
/// observation kinds, identity for the variable kind whose irregularity is
/// already encoded.
inline RepVar mask_global(ad::Tape& tape, const RepVar& h, const AlignedSample& lower) {
    if (h.scale_level != lower.scale_level)
        throw std::invalid_argument("mask_global: representation level " +
                                    std::to_string(h.scale_level) + " != mask level " +
                                    std::to_string(lower.scale_level));
    RepVar out = h;
    switch (h.kind) {
        case RepKind::variable:
            return out; // identity branch
        case RepKind::temporal: {
            Tensor m = slot_mask(lower); // (P*L) x 1
            Tensor mb({h.P * h.L, h.D});
            for (long r = 0; r < h.P * h.L; ++r)
                for (long j = 0; j < h.D; ++j) mb[r * h.D + j] = m[r];
            out.rows = ad::mul(h.rows, tape.constant(mb));
            return out;
        }
        case RepKind::observation: {
            Tensor mb({h.P * h.L * h.V, h.D});
            for (long k = 0; k < h.P; ++k)
                for (long i = 0; i < h.L; ++i)
                    for (long v = 0; v < h.V; ++v) {
                        double m = lower.mask_at(k, i, v);
                        long r = (k * h.L + i) * h.V + v;
                        for (long j = 0; j < h.D; ++j) mb[r * h.D + j] = m;
                    }
            out.rows = ad::mul(h.rows, tape.constant(mb));
            return out;
        }
    }
    throw std::logic_error("mask_global: unknown kind");
}

/// alpha = ReLU(FF(H_IMTS)), applied along the hidden axis. Non-negative by
/// construction; same row count as the input.
inline ad::Var score(BoundParams& params, AlphaMode mode, int boundary, ad::Var h_imts_rows) {
    std::string p = "fusion.b" + std::to_string(boundary) + ".";
    ad::Var a = ad::relu(ad::linear(h_imts_rows, params(p + "w"), params(p + "b")));
    if (mode == AlphaMode::per_position) {
        // broadcast the per-position scalar across the hidden axis
        long rows = h_imts_rows.val().rows();
        long d = h_imts_rows.val().cols();
        Tensor ones({1, d});
        ones.fill(1.0);
        a = ad::matmul(a, h_imts_rows.tape->constant(ones));
        (void)rows;
    }
    return a;
}

/// G = E + alpha (.) H_IMTS, elementwise, kind and level preserved.
inline RepVar fuse(const RepVar& local, const RepVar& h_imts, ad::Var alpha) {
    if (local.kind != h_imts.kind || local.scale_level != h_imts.scale_level)
        throw std::invalid_argument("fuse: kind/level mismatch");
    if (!local.rows.val().same_shape(h_imts.rows.val()))
        throw std::invalid_argument("fuse: shape mismatch " + local.rows.val().shape_str() +
                                    " vs " + h_imts.rows.val().shape_str());
    RepVar out = local;
    out.rows = ad::add(local.rows, ad::mul(alpha, h_imts.rows));
    return out;
}

} // namespace reimts
