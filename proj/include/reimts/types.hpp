#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "reimts/tensor.hpp"

namespace reimts {

/// One sparse measurement: (timestamp, value, variable id).
struct ObservationTuple {
    double timestamp = 0.0;
    double value = 0.0;
    long variable_id = 0;

    friend bool operator==(const ObservationTuple& a, const ObservationTuple& b) {
        return a.timestamp == b.timestamp && a.value == b.value &&
               a.variable_id == b.variable_id;
    }
    friend bool operator<(const ObservationTuple& a, const ObservationTuple& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.variable_id != b.variable_id) return a.variable_id < b.variable_id;
        return a.value < b.value;
    }
};

/// An unaligned sample: a bag of observation tuples over [0, total_span].
struct RawSample {
    std::vector<ObservationTuple> observations;
    double total_span = 0.0;
    long num_variables = 0;
    std::string sample_id;
};

inline void validate_raw_sample(const RawSample& s) {
    if (s.observations.empty())
        throw std::invalid_argument("sample '" + s.sample_id + "': no observations");
    if (s.total_span <= 0.0)
        throw std::invalid_argument("sample '" + s.sample_id + "': non-positive span");
    if (s.num_variables <= 0)
        throw std::invalid_argument("sample '" + s.sample_id + "': non-positive variable count");
    for (const auto& o : s.observations) {
        if (!(o.timestamp >= 0.0) || o.timestamp > s.total_span)
            throw std::invalid_argument("sample '" + s.sample_id + "': timestamp " +
                                        std::to_string(o.timestamp) + " outside [0, " +
                                        std::to_string(s.total_span) + "]");
        if (o.variable_id < 0 || o.variable_id >= s.num_variables)
            throw std::invalid_argument("sample '" + s.sample_id + "': variable id " +
                                        std::to_string(o.variable_id) + " outside [0, " +
                                        std::to_string(s.num_variables) + ")");
        if (!std::isfinite(o.value))
            throw std::invalid_argument("sample '" + s.sample_id + "': non-finite value");
    }
}

/// Zero-padded value/mask/timestamp grids. At level 1 the grids are
/// logically L x V (num_subsamples == 1); deeper levels carry a leading
/// subsample axis P, giving P x L x V. Per (subsample, variable) column the
/// real observations are time-sorted and packed in front of the padding;
/// padding slots hold value 0, mask 0, timestamp sentinel 0.
struct AlignedSample {
    int scale_level = 1;
    long num_subsamples = 1; // P
    long max_len = 0;        // L
    long num_variables = 0;  // V
    Tensor values;           // P*L*V flat, row-major (k, i, v)
    Tensor mask;
    Tensor timestamps;
    std::string sample_id;

    long at(long k, long i, long v) const {
        return (k * max_len + i) * num_variables + v;
    }
    double value(long k, long i, long v) const { return values[at(k, i, v)]; }
    double mask_at(long k, long i, long v) const { return mask[at(k, i, v)]; }
    double time_at(long k, long i, long v) const { return timestamps[at(k, i, v)]; }

    long mask_sum() const {
        double s = 0.0;
        for (long i = 0; i < mask.numel(); ++i) s += mask[i];
        return static_cast<long>(std::llround(s));
    }
};

/// The configured time periods [T^1, ..., T^N]. Construction enforces the
/// divisibility chain: each period divides the previous one by an integer
/// factor, so every subsample count P^n = T^1 / T^n is a whole number.
class ScaleStack {
public:
    explicit ScaleStack(std::vector<double> periods) : periods_(std::move(periods)) {
        if (periods_.empty()) throw std::invalid_argument("ScaleStack: no periods");
        counts_.reserve(periods_.size());
        for (std::size_t n = 0; n < periods_.size(); ++n) {
            double p = periods_[n];
            if (!(p > 0.0)) throw std::invalid_argument("ScaleStack: non-positive period");
            if (n > 0) {
                double prev = periods_[n - 1];
                if (!(p < prev))
                    throw std::invalid_argument("ScaleStack: periods must strictly decrease");
                double ratio = prev / p;
                if (!is_integer_ratio(ratio))
                    throw std::invalid_argument(
                        "ScaleStack: period " + std::to_string(p) +
                        " does not divide its predecessor " + std::to_string(prev));
            }
            double total_ratio = periods_[0] / p;
            if (!is_integer_ratio(total_ratio))
                throw std::invalid_argument("ScaleStack: period " + std::to_string(p) +
                                            " does not divide the total span");
            counts_.push_back(static_cast<long>(std::llround(total_ratio)));
        }
    }

    int levels() const { return static_cast<int>(periods_.size()); }
    double period(int level) const { return periods_.at(static_cast<std::size_t>(level - 1)); }
    long subsample_count(int level) const {
        return counts_.at(static_cast<std::size_t>(level - 1));
    }
    double total_span() const { return periods_.front(); }
    const std::vector<double>& periods() const { return periods_; }

private:
    static bool is_integer_ratio(double r) {
        double nearest = std::round(r);
        return nearest >= 1.0 && std::abs(r - nearest) <= 1e-9 * std::max(1.0, nearest);
    }

    std::vector<double> periods_;
    std::vector<long> counts_;
};

enum class RepKind { temporal, variable, observation };

inline const char* rep_kind_name(RepKind k) {
    switch (k) {
        case RepKind::temporal: return "temporal";
        case RepKind::variable: return "variable";
        case RepKind::observation: return "observation";
    }
    return "?";
}

/// A tagged multi-scale latent. Logical shape depends on kind:
///   temporal:    P x L x D
///   variable:    P x V x D
///   observation: P x L x V x D
/// Data is stored 2-D as (rows x D) where rows follow the logical order.
struct Representation {
    RepKind kind = RepKind::temporal;
    int scale_level = 1;
    long hidden_dim = 0;
    long P = 1, L = 0, V = 0;
    Tensor data; // rows x D

    long rows() const {
        switch (kind) {
            case RepKind::temporal: return P * L;
            case RepKind::variable: return P * V;
            case RepKind::observation: return P * L * V;
        }
        return 0;
    }

    void check() const {
        if (data.rows() != rows() || data.cols() != hidden_dim)
            throw std::logic_error(std::string("Representation: data ") + data.shape_str() +
                                   " does not match kind " + rep_kind_name(kind));
        if (!data.all_finite())
            throw std::runtime_error("Representation: non-finite entries");
    }
};

/// Forecast targets: per-variable packed (timestamp, truth) grids over the
/// horizon window, with a binary query mask. Truth is optional (absent when
/// serving pure predictions).
struct ForecastQuery {
    double horizon_span = 0.0;
    long max_len = 0; // L_Q
    long num_variables = 0;
    Tensor query_timestamps; // L_Q x V
    Tensor query_mask;       // L_Q x V
    Tensor truth_values;     // L_Q x V, zero where mask is 0
    bool has_truth = false;

    long at(long j, long v) const { return j * num_variables + v; }
    long query_count() const {
        double s = 0.0;
        for (long i = 0; i < query_mask.numel(); ++i) s += query_mask[i];
        return static_cast<long>(std::llround(s));
    }
};

inline void validate_query(const ForecastQuery& q, double lookback_span) {
    for (long j = 0; j < q.max_len; ++j)
        for (long v = 0; v < q.num_variables; ++v) {
            long i = q.at(j, v);
            if (q.query_mask[i] != 0.0 && q.query_mask[i] != 1.0)
                throw std::invalid_argument("query mask must be binary");
            if (q.query_mask[i] == 1.0) {
                double t = q.query_timestamps[i];
                if (!(t > lookback_span) || t > lookback_span + q.horizon_span)
                    throw std::invalid_argument(
                        "query timestamp " + std::to_string(t) + " outside (" +
                        std::to_string(lookback_span) + ", " +
                        std::to_string(lookback_span + q.horizon_span) + "]");
            } else if (q.has_truth && q.truth_values[i] != 0.0) {
                throw std::invalid_argument("query truth must be 0 where mask is 0");
            }
        }
}

/// Aligns a raw sample onto the level-1 padded grid: per variable, sort by
/// timestamp, pack to the front, pad to L = the largest per-variable count.
/// Duplicate (timestamp, variable) pairs are rejected — the data model reads
/// a sample as a set and silently merging duplicates would hide data bugs.
inline AlignedSample align_and_pad(const RawSample& sample) {
    validate_raw_sample(sample);

    long V = sample.num_variables;
    std::vector<std::vector<const ObservationTuple*>> per_var(static_cast<std::size_t>(V));
    for (const auto& o : sample.observations)
        per_var[static_cast<std::size_t>(o.variable_id)].push_back(&o);

    long L = 0;
    for (long v = 0; v < V; ++v) {
        auto& col = per_var[static_cast<std::size_t>(v)];
        std::sort(col.begin(), col.end(),
                  [](const ObservationTuple* a, const ObservationTuple* b) {
                      return a->timestamp < b->timestamp;
                  });
        for (std::size_t i = 1; i < col.size(); ++i)
            if (col[i]->timestamp == col[i - 1]->timestamp)
                throw std::invalid_argument(
                    "sample '" + sample.sample_id + "': duplicate observation at t=" +
                    std::to_string(col[i]->timestamp) + " for variable " + std::to_string(v));
        L = std::max(L, static_cast<long>(col.size()));
    }

    AlignedSample out;
    out.scale_level = 1;
    out.num_subsamples = 1;
    out.max_len = L;
    out.num_variables = V;
    out.sample_id = sample.sample_id;
    out.values = Tensor({L, V});
    out.mask = Tensor({L, V});
    out.timestamps = Tensor({L, V});
    for (long v = 0; v < V; ++v) {
        const auto& col = per_var[static_cast<std::size_t>(v)];
        for (long i = 0; i < static_cast<long>(col.size()); ++i) {
            long idx = out.at(0, i, v);
            out.values[idx] = col[static_cast<std::size_t>(i)]->value;
            out.mask[idx] = 1.0;
            out.timestamps[idx] = col[static_cast<std::size_t>(i)]->timestamp;
        }
    }
    return out;
}

/// Recovers the multiset of observation tuples present at mask=1 slots.
inline std::vector<ObservationTuple> extract_observations(const AlignedSample& a) {
    std::vector<ObservationTuple> out;
    for (long k = 0; k < a.num_subsamples; ++k)
        for (long i = 0; i < a.max_len; ++i)
            for (long v = 0; v < a.num_variables; ++v)
                if (a.mask_at(k, i, v) == 1.0)
                    out.push_back({a.time_at(k, i, v), a.value(k, i, v), v});
    return out;
}

} // namespace reimts
