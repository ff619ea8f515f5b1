#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "reimts/autodiff.hpp"
#include "reimts/tensor.hpp"
#include "reimts/types.hpp"

namespace reimts {

/// How observations are bucketed into subsamples. Time-period splitting is
/// the method proper; count splitting exists only for the rp_split ablation.
enum class SplitMode { time_period, obs_count };

/// One subsample's time range at a scale level: the half-open-left interval
/// (period*(k-1), period*k] for 1-based subsample index k. Intervals at one
/// level partition (0, T^1]; t = 0 belongs to the first interval.
struct IntervalAssignment {
    int level = 1;
    long subsample_index = 1; // 1-based k
    double lower = 0.0;       // exclusive (closed at 0 for k = 1)
    double upper = 0.0;       // inclusive

    bool contains(double t) const {
        if (subsample_index == 1 && t <= 0.0) return true;
        return t > lower && t <= upper;
    }
};

inline IntervalAssignment interval_at(const ScaleStack& stack, int level, long k) {
    double period = stack.period(level);
    return {level, k, period * static_cast<double>(k - 1), period * static_cast<double>(k)};
}

/// 0-based interval index for the half-open-left range (period*k, period*(k+1)].
/// t <= 0 is assigned to the first interval so admission-time observations
/// are never dropped.
inline long interval_index(double t, double period, long count) {
    if (t <= 0.0) return 0;
    long k = static_cast<long>(std::ceil(t / period)) - 1;
    // Repair floating-point drift so the predicate period*k < t <= period*(k+1)
    // holds exactly, including timestamps sitting on an interval boundary.
    while (k > 0 && period * static_cast<double>(k) >= t) --k;
    while (period * static_cast<double>(k + 1) < t) ++k;
    if (k < 0) k = 0;
    if (k >= count) k = count - 1;
    return k;
}

namespace detail {

struct Bucketed {
    // per (subsample, variable): observations in time order
    std::vector<std::vector<std::vector<ObservationTuple>>> cols; // [k][v]
    long P = 0, V = 0, L = 0;
};

inline Bucketed bucket_observations(const std::vector<ObservationTuple>& obs, long P, long V,
                                    double period, SplitMode mode) {
    Bucketed b;
    b.P = P;
    b.V = V;
    b.cols.assign(static_cast<std::size_t>(P),
                  std::vector<std::vector<ObservationTuple>>(static_cast<std::size_t>(V)));
    if (mode == SplitMode::time_period) {
        for (const auto& o : obs) {
            long k = interval_index(o.timestamp, period, P);
            b.cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(o.variable_id)]
                .push_back(o);
        }
        for (auto& sub : b.cols)
            for (auto& col : sub)
                std::sort(col.begin(), col.end(),
                          [](const ObservationTuple& x, const ObservationTuple& y) {
                              return x.timestamp < y.timestamp;
                          });
    } else {
        // obs_count: per variable, contiguous rank buckets; earlier buckets
        // take the extra observations when the count is not divisible by P.
        std::vector<std::vector<ObservationTuple>> per_var(static_cast<std::size_t>(V));
        for (const auto& o : obs) per_var[static_cast<std::size_t>(o.variable_id)].push_back(o);
        for (long v = 0; v < V; ++v) {
            auto& col = per_var[static_cast<std::size_t>(v)];
            std::sort(col.begin(), col.end(),
                      [](const ObservationTuple& x, const ObservationTuple& y) {
                          return x.timestamp < y.timestamp;
                      });
            long c = static_cast<long>(col.size());
            long base = c / P, extra = c % P;
            long r = 0;
            for (long k = 0; k < P; ++k) {
                long take = base + (k < extra ? 1 : 0);
                for (long j = 0; j < take; ++j, ++r)
                    b.cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(v)].push_back(
                        col[static_cast<std::size_t>(r)]);
            }
        }
    }
    for (long k = 0; k < P; ++k)
        for (long v = 0; v < V; ++v)
            b.L = std::max(b.L, static_cast<long>(
                                    b.cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(v)]
                                        .size()));
    return b;
}

} // namespace detail

/// Re-buckets a sample (given at level 1 or any coarser level) to
/// `target_level` of the stack. Observations keep their original timestamps;
/// per (subsample, variable) columns are re-packed and padded to the level's
/// L = max per-(subsample, variable) count within this sample.
inline AlignedSample split_to_level(const AlignedSample& src, const ScaleStack& stack,
                                    int target_level,
                                    SplitMode mode = SplitMode::time_period) {
    if (target_level < 1 || target_level > stack.levels())
        throw std::invalid_argument("split_to_level: level " + std::to_string(target_level) +
                                    " outside stack of " + std::to_string(stack.levels()));
    std::vector<ObservationTuple> obs = extract_observations(src);
    long P = stack.subsample_count(target_level);
    double period = stack.period(target_level);
    detail::Bucketed b =
        detail::bucket_observations(obs, P, src.num_variables, period, mode);

    AlignedSample out;
    out.scale_level = target_level;
    out.num_subsamples = P;
    out.max_len = b.L;
    out.num_variables = src.num_variables;
    out.sample_id = src.sample_id;
    out.values = Tensor({P, b.L, src.num_variables});
    out.mask = Tensor({P, b.L, src.num_variables});
    out.timestamps = Tensor({P, b.L, src.num_variables});
    for (long k = 0; k < P; ++k)
        for (long v = 0; v < src.num_variables; ++v) {
            const auto& col = b.cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(v)];
            for (long i = 0; i < static_cast<long>(col.size()); ++i) {
                long idx = out.at(k, i, v);
                out.values[idx] = col[static_cast<std::size_t>(i)].value;
                out.mask[idx] = 1.0;
                out.timestamps[idx] = col[static_cast<std::size_t>(i)].timestamp;
            }
        }
    return out;
}

/// The mask is split in exactly the same way as the values; exposed so the
/// conservation property can be checked on masks alone.
inline Tensor split_mask(const AlignedSample& src, const ScaleStack& stack, int target_level,
                         SplitMode mode = SplitMode::time_period) {
    return split_to_level(src, stack, target_level, mode).mask;
}

// ---------------------------------------------------------------------------
// Representation transport between adjacent levels (split-or-duplicate)
// ---------------------------------------------------------------------------

/// Row-level gather plan: index[dst_row] = src_row, or -1 for a zero fill.
struct TransportPlan {
    RepKind kind = RepKind::temporal;
    long src_rows = 0;
    long dst_rows = 0;
    std::vector<long> index;
};

namespace detail {

using KeyMap = std::map<std::pair<double, long>, std::pair<long, long>>; // (t,v) -> (k,i)

inline KeyMap position_map(const AlignedSample& a) {
    KeyMap m;
    for (long k = 0; k < a.num_subsamples; ++k)
        for (long i = 0; i < a.max_len; ++i)
            for (long v = 0; v < a.num_variables; ++v)
                if (a.mask_at(k, i, v) == 1.0)
                    m[{a.time_at(k, i, v), v}] = {k, i};
    return m;
}

} // namespace detail

/// Builds the gather plan that carries a level-n representation to the
/// geometry of level n+1.
///
///   temporal:    each target row takes the source row of its latest masked
///                observation (ties broken by lowest variable id); rows with
///                no observations zero-fill.
///   observation: exact per-(timestamp, variable) permutation plus zero fill.
///   variable:    each source block is duplicated P^{n+1}/P^n times in
///                interval order.
inline TransportPlan make_transport_plan(const AlignedSample& src, const AlignedSample& dst,
                                         RepKind kind) {
    if (src.num_variables != dst.num_variables)
        throw std::invalid_argument("transport: variable count mismatch");
    long V = src.num_variables;
    TransportPlan plan;
    plan.kind = kind;
    switch (kind) {
        case RepKind::variable: {
            long ratio = dst.num_subsamples / std::max<long>(src.num_subsamples, 1);
            if (ratio * src.num_subsamples != dst.num_subsamples || ratio < 1)
                throw std::invalid_argument(
                    "transport: subsample counts not an integer ratio (" +
                    std::to_string(src.num_subsamples) + " -> " +
                    std::to_string(dst.num_subsamples) + ")");
            plan.src_rows = src.num_subsamples * V;
            plan.dst_rows = dst.num_subsamples * V;
            plan.index.resize(static_cast<std::size_t>(plan.dst_rows));
            for (long k = 0; k < dst.num_subsamples; ++k)
                for (long v = 0; v < V; ++v)
                    plan.index[static_cast<std::size_t>(k * V + v)] = (k / ratio) * V + v;
            return plan;
        }
        case RepKind::observation: {
            detail::KeyMap srcmap = detail::position_map(src);
            plan.src_rows = src.num_subsamples * src.max_len * V;
            plan.dst_rows = dst.num_subsamples * dst.max_len * V;
            plan.index.assign(static_cast<std::size_t>(plan.dst_rows), -1);
            for (long k = 0; k < dst.num_subsamples; ++k)
                for (long i = 0; i < dst.max_len; ++i)
                    for (long v = 0; v < V; ++v) {
                        if (dst.mask_at(k, i, v) != 1.0) continue;
                        auto it = srcmap.find({dst.time_at(k, i, v), v});
                        if (it == srcmap.end())
                            throw std::logic_error(
                                "transport: observation missing at source level");
                        long si = (it->second.first * src.max_len + it->second.second) * V + v;
                        plan.index[static_cast<std::size_t>((k * dst.max_len + i) * V + v)] = si;
                    }
            return plan;
        }
        case RepKind::temporal: {
            detail::KeyMap srcmap = detail::position_map(src);
            plan.src_rows = src.num_subsamples * src.max_len;
            plan.dst_rows = dst.num_subsamples * dst.max_len;
            plan.index.assign(static_cast<std::size_t>(plan.dst_rows), -1);
            for (long k = 0; k < dst.num_subsamples; ++k)
                for (long i = 0; i < dst.max_len; ++i) {
                    // Representative key for the row: the row's latest masked
                    // observation; lowest variable id on ties.
                    bool found = false;
                    double best_t = 0.0;
                    long best_v = -1;
                    for (long v = 0; v < V; ++v) {
                        if (dst.mask_at(k, i, v) != 1.0) continue;
                        double tt = dst.time_at(k, i, v);
                        if (!found || tt > best_t) {
                            found = true;
                            best_t = tt;
                            best_v = v;
                        }
                    }
                    if (!found) continue;
                    auto it = srcmap.find({best_t, best_v});
                    if (it == srcmap.end())
                        throw std::logic_error("transport: observation missing at source level");
                    plan.index[static_cast<std::size_t>(k * dst.max_len + i)] =
                        it->second.first * src.max_len + it->second.second;
                }
            return plan;
        }
    }
    throw std::logic_error("transport: unknown kind");
}

inline Tensor apply_transport(const TransportPlan& plan, const Tensor& rows) {
    if (rows.rows() != plan.src_rows)
        throw std::invalid_argument("transport: representation rows " +
                                    std::to_string(rows.rows()) + " != plan source rows " +
                                    std::to_string(plan.src_rows));
    long D = rows.cols();
    Tensor out({plan.dst_rows, D});
    for (long r = 0; r < plan.dst_rows; ++r) {
        long s = plan.index[static_cast<std::size_t>(r)];
        if (s < 0) continue;
        for (long j = 0; j < D; ++j) out[r * D + j] = rows[s * D + j];
    }
    return out;
}

inline ad::Var apply_transport(const TransportPlan& plan, ad::Var rows) {
    if (rows.val().rows() != plan.src_rows)
        throw std::invalid_argument("transport: var rows " + std::to_string(rows.val().rows()) +
                                    " != plan source rows " + std::to_string(plan.src_rows));
    return ad::gather_rows(rows, plan.index);
}

/// Whole-representation transport: level n -> level n+1. `src`/`dst` are the
/// aligned grids at the two levels (the destination grid supplies the masks
/// that define the target geometry).
inline Representation transport_representation(const Representation& rep,
                                               const AlignedSample& src,
                                               const AlignedSample& dst) {
    if (rep.scale_level != src.scale_level)
        throw std::invalid_argument("transport: representation level " +
                                    std::to_string(rep.scale_level) +
                                    " does not match source grid level " +
                                    std::to_string(src.scale_level));
    rep.check();
    TransportPlan plan = make_transport_plan(src, dst, rep.kind);
    Representation out;
    out.kind = rep.kind;
    out.scale_level = dst.scale_level;
    out.hidden_dim = rep.hidden_dim;
    out.P = dst.num_subsamples;
    out.L = dst.max_len;
    out.V = dst.num_variables;
    out.data = apply_transport(plan, rep.data);
    return out;
}

/// Per-slot "any variable observed" mask, P*L x 1, used to gate temporal
/// representations where the grid mask carries a variable axis the
/// representation lacks.
inline Tensor slot_mask(const AlignedSample& a) {
    Tensor m({a.num_subsamples * a.max_len, 1});
    for (long k = 0; k < a.num_subsamples; ++k)
        for (long i = 0; i < a.max_len; ++i) {
            double any = 0.0;
            for (long v = 0; v < a.num_variables; ++v)
                if (a.mask_at(k, i, v) == 1.0) { any = 1.0; break; }
            m[k * a.max_len + i] = any;
        }
    return m;
}

} // namespace reimts
