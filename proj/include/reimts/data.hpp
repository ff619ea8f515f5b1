#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "reimts/tensor.hpp"
#include "reimts/types.hpp"

namespace reimts {

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

/// Controls for the synthetic IMTS generator. Observations arrive from an
/// inhomogeneous process whose rate decays by `decay_factor` across the
/// span (the dense-to-sparse pattern); values are a sum of two seasonal
/// components whose periods straddle scale levels, a shared cross-variable
/// component scaled by `coupling`, and Gaussian noise.
struct SyntheticSpec {
    long num_samples = 100;
    long num_variables = 8;
    double total_span = 48.0;   // lookback span T^1
    double horizon_span = 16.0; // forecast window beyond T^1
    double base_rate = 24.0;    // expected observations per variable over the full span
    double rate_spread = 1.0;   // per-variable rate multiplier range [1/spread, spread]
    double decay_factor = 1.0;  // rate(end) = rate(0) / decay_factor
    double period1 = 24.0;
    double period2 = 12.0;
    double amp1 = 1.0;
    double amp2 = 1.0;
    double coupling = 0.0;
    double noise = 0.1;
    long forecast_targets = 3; // earliest distinct horizon timestamps; 0 = all
    std::uint64_t seed = 2024;

    double full_span() const { return total_span + horizon_span; }

    void validate() const {
        if (num_samples <= 0) throw std::invalid_argument("spec: num_samples must be positive");
        if (num_variables <= 0) throw std::invalid_argument("spec: num_variables must be positive");
        if (!(total_span > 0) || !(horizon_span > 0))
            throw std::invalid_argument("spec: spans must be positive");
        if (!(base_rate > 0)) throw std::invalid_argument("spec: base_rate must be positive");
        if (!(rate_spread >= 1.0))
            throw std::invalid_argument("spec: rate_spread must be >= 1");
        if (!(decay_factor >= 1.0))
            throw std::invalid_argument("spec: decay_factor must be >= 1");
        if (!(period1 > 0) || !(period2 > 0))
            throw std::invalid_argument("spec: periods must be positive");
        if (noise < 0) throw std::invalid_argument("spec: noise must be non-negative");
    }
};

namespace detail {

inline double unit_from_hash(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double phase(std::uint64_t sample_seed, long variable, int component) {
    std::uint64_t h = splitmix64(sample_seed ^ splitmix64(
        static_cast<std::uint64_t>(variable) * 16 + static_cast<std::uint64_t>(component)));
    return 6.283185307179586 * unit_from_hash(h);
}

} // namespace detail

/// Closed-form noise-free signal for (sample, variable, t); the generator
/// adds coupling and noise on top of this per its spec. The coarse
/// component's phase varies per sample (it must be inferred from the
/// lookback window); the fine component's phase is fixed per variable.
inline double seasonal_value(const SyntheticSpec& spec, std::uint64_t sample_seed, long v,
                             double t) {
    double two_pi = 6.283185307179586;
    double coarse_phase = detail::phase(sample_seed, -2, 0) +
                          0.35 * std::sin(detail::phase(0x5EEDBA5Eu, v, 3));
    double fine_phase = detail::phase(0x5EEDBA5Eu, v, 1);
    return spec.amp1 * std::sin(two_pi * t / spec.period1 + coarse_phase) +
           spec.amp2 * std::sin(two_pi * t / spec.period2 + fine_phase);
}

inline double shared_component(const SyntheticSpec& spec, std::uint64_t sample_seed, double t) {
    double two_pi = 6.283185307179586;
    return std::sin(two_pi * t / spec.period1 + detail::phase(sample_seed, -1, 2));
}

/// Fixed per-variable sampling-rate multiplier in [1/spread, spread], so the
/// corpus mixes dense and sparse variables the way clinical data does. The
/// multipliers are normalized to mean 1 across the variable set, keeping
/// base_rate the expected per-variable count regardless of spread.
inline double variable_rate(const SyntheticSpec& spec, long v) {
    if (spec.rate_spread <= 1.0) return spec.base_rate;
    auto raw = [&](long w) {
        double uw = 2.0 * detail::unit_from_hash(splitmix64(
                              0xBA5EBA11u ^ splitmix64(static_cast<std::uint64_t>(w)))) -
                    1.0;
        return std::pow(spec.rate_spread, uw);
    };
    double mean = 0.0;
    for (long w = 0; w < spec.num_variables; ++w) mean += raw(w);
    mean /= static_cast<double>(spec.num_variables);
    return spec.base_rate * raw(v) / mean;
}

/// Full-span samples (lookback plus horizon observations in one tuple bag).
struct RawCorpus {
    std::vector<RawSample> samples; // total_span = lookback + horizon
    long num_variables = 0;
};

/// Deterministic per (spec.seed, sample index). A sample with an empty
/// lookback or an empty horizon is regenerated with an incremented sub-seed,
/// with bounded retries.
inline RawCorpus generate(const SyntheticSpec& spec) {
    spec.validate();
    RawCorpus corpus;
    corpus.num_variables = spec.num_variables;
    corpus.samples.reserve(static_cast<std::size_t>(spec.num_samples));
    double span = spec.full_span();
    for (long s = 0; s < spec.num_samples; ++s) {
        std::uint64_t sample_seed = derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(s));
        RawSample sample;
        bool ok = false;
        for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
            std::uint64_t attempt_seed = derive_seed(sample_seed, static_cast<std::uint64_t>(attempt));
            Rng rng(attempt_seed);
            sample = RawSample{};
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "s%06ld", s);
            sample.sample_id = idbuf;
            sample.num_variables = spec.num_variables;
            sample.total_span = span;
            for (long v = 0; v < spec.num_variables; ++v) {
                long candidates = rng.poisson(variable_rate(spec, v));
                std::vector<double> times;
                for (long c = 0; c < candidates; ++c) {
                    double t = rng.uniform(0.0, span);
                    double keep = std::pow(spec.decay_factor, -t / span);
                    if (rng.uniform(0.0, 1.0) <= keep) times.push_back(t);
                }
                std::sort(times.begin(), times.end());
                times.erase(std::unique(times.begin(), times.end()), times.end());
                for (double t : times) {
                    double value = seasonal_value(spec, attempt_seed, v, t) +
                                   spec.coupling * shared_component(spec, attempt_seed, t) +
                                   (spec.noise > 0 ? rng.normal(0.0, spec.noise) : 0.0);
                    sample.observations.push_back({t, value, v});
                }
            }
            bool has_lookback = false, has_horizon = false;
            for (const auto& o : sample.observations) {
                if (o.timestamp <= spec.total_span) has_lookback = true;
                else has_horizon = true;
            }
            ok = has_lookback && has_horizon;
        }
        if (!ok)
            throw std::runtime_error("generate: sample " + sample.sample_id +
                                     " stayed empty after bounded retries; raise base_rate");
        corpus.samples.push_back(std::move(sample));
    }
    return corpus;
}

/// Spec presets. physio_like targets Table-1-scale shapes (36 variables,
/// about 309 observations per 48h sample, hourly units, 36h lookback).
inline SyntheticSpec physio_like_spec(std::uint64_t seed, long num_samples = 200) {
    SyntheticSpec spec;
    spec.num_samples = num_samples;
    spec.num_variables = 36;
    spec.total_span = 36.0;
    spec.horizon_span = 12.0;
    double target_per_var = 308.6 / 36.0;
    spec.rate_spread = 2.0;
    spec.decay_factor = 3.0;
    spec.base_rate = target_per_var * std::log(spec.decay_factor) /
                     (1.0 - 1.0 / spec.decay_factor);
    spec.period1 = 18.0;
    spec.period2 = 9.0;
    spec.amp1 = 1.0;
    spec.amp2 = 0.6;
    spec.coupling = 0.3;
    spec.noise = 0.15;
    spec.seed = seed;
    return spec;
}

/// Two-scale benchmark: components at T^2 = 24 and T^3 = 12 of a 48h
/// lookback, mixed dense/sparse variables, dense-to-sparse arrivals — the
/// structure multi-scale models gain from.
inline SyntheticSpec two_scale_spec(std::uint64_t seed, long num_samples = 600) {
    SyntheticSpec spec;
    spec.num_samples = num_samples;
    spec.num_variables = 8;
    spec.total_span = 48.0;
    spec.horizon_span = 16.0;
    spec.base_rate = 28.0;
    spec.rate_spread = 3.0;
    spec.decay_factor = 2.0;
    spec.period1 = 24.0;
    spec.period2 = 12.0;
    spec.amp1 = 1.0;
    spec.amp2 = 0.8;
    spec.coupling = 0.25;
    spec.noise = 0.08;
    spec.seed = seed;
    return spec;
}

// ---------------------------------------------------------------------------
// Tuple file format
// ---------------------------------------------------------------------------

inline constexpr const char* kTupleHeader = "sample_id,timestamp,variable_id,value";

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, p);
}

inline double parse_double(const std::string& s, long line_no) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw std::runtime_error("tuple file line " + std::to_string(line_no) +
                                 ": bad number '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s, long line_no) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw std::runtime_error("tuple file line " + std::to_string(line_no) +
                                 ": bad integer '" + s + "'");
    return v;
}

} // namespace detail

/// One row per observation: sample_id,timestamp,variable_id,value with
/// timestamps and values at full round-trip precision.
inline void save_tuples(const RawCorpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_tuples: cannot open " + path);
    out << kTupleHeader << "\n";
    for (const auto& s : corpus.samples)
        for (const auto& o : s.observations)
            out << s.sample_id << ',' << detail::format_double(o.timestamp) << ','
                << o.variable_id << ',' << detail::format_double(o.value) << "\n";
    if (!out) throw std::runtime_error("save_tuples: write failed for " + path);
}

/// Rows need not be sorted; samples keep their first-appearance order.
inline RawCorpus load_tuples(const std::string& path, long num_variables, double full_span) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_tuples: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kTupleHeader)
        throw std::runtime_error("load_tuples: " + path + " missing header '" +
                                 kTupleHeader + "'");
    RawCorpus corpus;
    corpus.num_variables = num_variables;
    std::map<std::string, std::size_t> index;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::array<std::string, 4> fields;
        std::size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            std::size_t comma = f < 3 ? line.find(',', start) : std::string::npos;
            if (f < 3 && comma == std::string::npos)
                throw std::runtime_error("tuple file line " + std::to_string(line_no) +
                                         ": expected 4 comma-separated fields");
            fields[static_cast<std::size_t>(f)] =
                line.substr(start, comma == std::string::npos ? comma : comma - start);
            start = comma + 1;
        }
        if (fields[3].find(',') != std::string::npos)
            throw std::runtime_error("tuple file line " + std::to_string(line_no) +
                                     ": expected 4 comma-separated fields");
        ObservationTuple o;
        o.timestamp = detail::parse_double(fields[1], line_no);
        o.variable_id = detail::parse_long(fields[2], line_no);
        o.value = detail::parse_double(fields[3], line_no);
        if (o.variable_id < 0 || o.variable_id >= num_variables)
            throw std::runtime_error("tuple file line " + std::to_string(line_no) +
                                     ": unknown variable id " + std::to_string(o.variable_id));
        auto it = index.find(fields[0]);
        if (it == index.end()) {
            index[fields[0]] = corpus.samples.size();
            RawSample s;
            s.sample_id = fields[0];
            s.num_variables = num_variables;
            s.total_span = full_span;
            corpus.samples.push_back(std::move(s));
            it = index.find(fields[0]);
        }
        corpus.samples[it->second].observations.push_back(o);
    }
    if (corpus.samples.empty())
        throw std::runtime_error("load_tuples: " + path + " holds a header but no rows");
    return corpus;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::string name;
    std::string data_file; // tuple csv, relative to the manifest directory
    long num_variables = 0;
    double total_span = 0.0;   // lookback T^1
    double horizon_span = 0.0;
    std::string unit = "hours";
    long forecast_targets = 3;
    std::map<std::string, std::string> split; // sample_id -> train|val|test
    std::vector<double> norm_mean, norm_std;  // per variable, train split only
    bool has_norm = false;
};

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
    out << "name=" << m.name << "\n";
    out << "data_file=" << m.data_file << "\n";
    out << "num_variables=" << m.num_variables << "\n";
    out << "total_span=" << detail::format_double(m.total_span) << "\n";
    out << "horizon_span=" << detail::format_double(m.horizon_span) << "\n";
    out << "unit=" << m.unit << "\n";
    out << "forecast_targets=" << m.forecast_targets << "\n";
    for (const auto& [id, which] : m.split) out << "split." << id << "=" << which << "\n";
    if (m.has_norm)
        for (long v = 0; v < m.num_variables; ++v) {
            out << "norm." << v << ".mean="
                << detail::format_double(m.norm_mean[static_cast<std::size_t>(v)]) << "\n";
            out << "norm." << v << ".std="
                << detail::format_double(m.norm_std[static_cast<std::size_t>(v)]) << "\n";
        }
    if (!out) throw std::runtime_error("write_manifest: write failed for " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
    DatasetManifest m;
    std::map<long, double> means, stds;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected key=value");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "name") m.name = value;
        else if (key == "data_file") m.data_file = value;
        else if (key == "num_variables") m.num_variables = detail::parse_long(value, line_no);
        else if (key == "total_span") m.total_span = detail::parse_double(value, line_no);
        else if (key == "horizon_span") m.horizon_span = detail::parse_double(value, line_no);
        else if (key == "unit") m.unit = value;
        else if (key == "forecast_targets")
            m.forecast_targets = detail::parse_long(value, line_no);
        else if (key.rfind("split.", 0) == 0) {
            std::string which = value;
            if (which != "train" && which != "val" && which != "test")
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": split must be train|val|test");
            m.split[key.substr(6)] = which;
        } else if (key.rfind("norm.", 0) == 0) {
            std::size_t dot = key.find('.', 5);
            if (dot == std::string::npos)
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": bad norm key");
            long v = detail::parse_long(key.substr(5, dot - 5), line_no);
            std::string what = key.substr(dot + 1);
            if (what == "mean") means[v] = detail::parse_double(value, line_no);
            else if (what == "std") stds[v] = detail::parse_double(value, line_no);
            else
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": bad norm key");
        } else {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": unknown key '" + key + "'");
        }
    }
    if (m.num_variables <= 0)
        throw std::runtime_error("manifest " + path + ": num_variables missing");
    if (!means.empty()) {
        m.norm_mean.assign(static_cast<std::size_t>(m.num_variables), 0.0);
        m.norm_std.assign(static_cast<std::size_t>(m.num_variables), 1.0);
        for (auto& [v, mean] : means) m.norm_mean.at(static_cast<std::size_t>(v)) = mean;
        for (auto& [v, sd] : stds) m.norm_std.at(static_cast<std::size_t>(v)) = sd;
        m.has_norm = true;
    }
    return m;
}

/// 8:1:1 split by sample count (val and test take floor(n/10) each),
/// deterministic in the seed.
inline std::map<std::string, std::string> assign_splits(const RawCorpus& corpus,
                                                        std::uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(corpus.samples.size());
    for (const auto& s : corpus.samples) ids.push_back(s.sample_id);
    Rng rng(derive_seed(seed, 0x5011));
    rng.shuffle(ids);
    long n = static_cast<long>(ids.size());
    long n_val = n / 10, n_test = n / 10;
    std::map<std::string, std::string> split;
    for (long i = 0; i < n; ++i) {
        const std::string& id = ids[static_cast<std::size_t>(i)];
        if (i < n - n_val - n_test) split[id] = "train";
        else if (i < n - n_test) split[id] = "val";
        else split[id] = "test";
    }
    return split;
}

// ---------------------------------------------------------------------------
// Windowing and normalization
// ---------------------------------------------------------------------------

struct WindowedSample {
    RawSample lookback; // total_span = T^1
    ForecastQuery query;
    std::string sample_id;
};

/// Splits one full-span sample by time: observations with t <= lookback_span
/// stay in the lookback (closed boundary); later ones become forecast
/// material. Targets are the `targets` earliest distinct horizon timestamps
/// (0 keeps all); the query grid is per-variable packed like the lookback.
/// Timestamps are carried untouched. Returns false when either side is empty.
inline bool window_sample(const RawSample& full, double lookback_span, double horizon_span,
                          long targets, WindowedSample& out) {
    out.sample_id = full.sample_id;
    out.lookback = RawSample{};
    out.lookback.sample_id = full.sample_id;
    out.lookback.num_variables = full.num_variables;
    out.lookback.total_span = lookback_span;
    std::vector<ObservationTuple> horizon;
    for (const auto& o : full.observations) {
        if (o.timestamp <= lookback_span) out.lookback.observations.push_back(o);
        else if (o.timestamp <= lookback_span + horizon_span) horizon.push_back(o);
    }
    if (out.lookback.observations.empty() || horizon.empty()) return false;

    if (targets > 0) {
        std::set<double> distinct;
        for (const auto& o : horizon) distinct.insert(o.timestamp);
        std::vector<double> keep(distinct.begin(), distinct.end());
        if (static_cast<long>(keep.size()) > targets)
            keep.resize(static_cast<std::size_t>(targets));
        std::set<double> keep_set(keep.begin(), keep.end());
        std::vector<ObservationTuple> filtered;
        for (const auto& o : horizon)
            if (keep_set.count(o.timestamp)) filtered.push_back(o);
        horizon = std::move(filtered);
    }

    long V = full.num_variables;
    std::vector<std::vector<ObservationTuple>> per_var(static_cast<std::size_t>(V));
    for (const auto& o : horizon) per_var[static_cast<std::size_t>(o.variable_id)].push_back(o);
    long LQ = 0;
    for (auto& col : per_var) {
        std::sort(col.begin(), col.end(),
                  [](const ObservationTuple& a, const ObservationTuple& b) {
                      return a.timestamp < b.timestamp;
                  });
        LQ = std::max(LQ, static_cast<long>(col.size()));
    }
    ForecastQuery q;
    q.horizon_span = horizon_span;
    q.max_len = LQ;
    q.num_variables = V;
    q.query_timestamps = Tensor({LQ, V});
    q.query_mask = Tensor({LQ, V});
    q.truth_values = Tensor({LQ, V});
    q.has_truth = true;
    for (long v = 0; v < V; ++v) {
        const auto& col = per_var[static_cast<std::size_t>(v)];
        for (long j = 0; j < static_cast<long>(col.size()); ++j) {
            long i = q.at(j, v);
            q.query_timestamps[i] = col[static_cast<std::size_t>(j)].timestamp;
            q.query_mask[i] = 1.0;
            q.truth_values[i] = col[static_cast<std::size_t>(j)].value;
        }
    }
    out.query = std::move(q);
    return true;
}

/// Per-variable mean/std over the training split only. Variables with zero
/// variance get std clamped to 1; their ids are returned so callers can warn.
inline std::vector<long> compute_normalization(const RawCorpus& corpus, DatasetManifest& m) {
    m.norm_mean.assign(static_cast<std::size_t>(m.num_variables), 0.0);
    m.norm_std.assign(static_cast<std::size_t>(m.num_variables), 1.0);
    std::vector<double> sum(static_cast<std::size_t>(m.num_variables), 0.0);
    std::vector<double> sumsq(static_cast<std::size_t>(m.num_variables), 0.0);
    std::vector<long> count(static_cast<std::size_t>(m.num_variables), 0);
    for (const auto& s : corpus.samples) {
        auto it = m.split.find(s.sample_id);
        if (it == m.split.end() || it->second != "train") continue;
        for (const auto& o : s.observations) {
            auto v = static_cast<std::size_t>(o.variable_id);
            sum[v] += o.value;
            sumsq[v] += o.value * o.value;
            ++count[v];
        }
    }
    std::vector<long> clamped;
    for (long v = 0; v < m.num_variables; ++v) {
        auto vi = static_cast<std::size_t>(v);
        if (count[vi] == 0) {
            clamped.push_back(v);
            continue;
        }
        double mean = sum[vi] / static_cast<double>(count[vi]);
        double var = sumsq[vi] / static_cast<double>(count[vi]) - mean * mean;
        m.norm_mean[vi] = mean;
        if (var > 1e-24) m.norm_std[vi] = std::sqrt(var);
        else clamped.push_back(v);
    }
    m.has_norm = true;
    return clamped;
}

inline void normalize_windowed(WindowedSample& w, const DatasetManifest& m) {
    if (!m.has_norm) return;
    for (auto& o : w.lookback.observations) {
        auto v = static_cast<std::size_t>(o.variable_id);
        o.value = (o.value - m.norm_mean[v]) / m.norm_std[v];
    }
    ForecastQuery& q = w.query;
    for (long j = 0; j < q.max_len; ++j)
        for (long v = 0; v < q.num_variables; ++v) {
            long i = q.at(j, v);
            if (q.query_mask[i] == 1.0)
                q.truth_values[i] = (q.truth_values[i] - m.norm_mean[static_cast<std::size_t>(v)]) /
                                    m.norm_std[static_cast<std::size_t>(v)];
        }
}

inline double denormalize_value(const DatasetManifest& m, long variable, double value) {
    if (!m.has_norm) return value;
    return value * m.norm_std[static_cast<std::size_t>(variable)] +
           m.norm_mean[static_cast<std::size_t>(variable)];
}

// ---------------------------------------------------------------------------
// Prepared splits and batches
// ---------------------------------------------------------------------------

struct PreparedSample {
    AlignedSample aligned; // level 1, per-sample L
    ForecastQuery query;
    std::string sample_id;
};

struct SplitData {
    std::vector<PreparedSample> samples;
};

struct DatasetBundle {
    SplitData train, val, test;
    long dropped = 0; // samples with an empty lookback or horizon window
};

/// Windows, normalizes and aligns the corpus into per-split sample lists.
inline DatasetBundle prepare_dataset(const RawCorpus& corpus, const DatasetManifest& m) {
    DatasetBundle bundle;
    for (const auto& full : corpus.samples) {
        auto it = m.split.find(full.sample_id);
        if (it == m.split.end())
            throw std::runtime_error("prepare_dataset: sample " + full.sample_id +
                                     " has no split assignment");
        WindowedSample w;
        if (!window_sample(full, m.total_span, m.horizon_span, m.forecast_targets, w)) {
            ++bundle.dropped;
            continue;
        }
        normalize_windowed(w, m);
        PreparedSample prepared;
        prepared.aligned = align_and_pad(w.lookback);
        prepared.query = std::move(w.query);
        prepared.sample_id = full.sample_id;
        validate_query(prepared.query, m.total_span);
        SplitData& split = it->second == "train" ? bundle.train
                          : it->second == "val" ? bundle.val
                                                : bundle.test;
        split.samples.push_back(std::move(prepared));
    }
    return bundle;
}

/// Pads every sample's level-1 grids to the batch max L. Masks stay 0 on
/// padded rows, so downstream math is unchanged.
inline void pad_to_common_length(std::vector<PreparedSample>& batch) {
    long L = 0;
    for (const auto& s : batch) L = std::max(L, s.aligned.max_len);
    for (auto& s : batch) {
        if (s.aligned.max_len == L) continue;
        AlignedSample padded = s.aligned;
        padded.max_len = L;
        long V = s.aligned.num_variables;
        padded.values = Tensor({1, L, V});
        padded.mask = Tensor({1, L, V});
        padded.timestamps = Tensor({1, L, V});
        for (long i = 0; i < s.aligned.max_len; ++i)
            for (long v = 0; v < V; ++v) {
                padded.values[i * V + v] = s.aligned.value(0, i, v);
                padded.mask[i * V + v] = s.aligned.mask_at(0, i, v);
                padded.timestamps[i * V + v] = s.aligned.time_at(0, i, v);
            }
        s.aligned = std::move(padded);
    }
}

/// Fixed-composition batches with per-batch L padding.
inline std::vector<std::vector<PreparedSample>> make_padded_batches(const SplitData& split,
                                                                    long batch_size) {
    if (batch_size < 1) throw std::invalid_argument("make_padded_batches: batch_size >= 1");
    std::vector<std::vector<PreparedSample>> batches;
    for (std::size_t i = 0; i < split.samples.size(); i += static_cast<std::size_t>(batch_size)) {
        std::vector<PreparedSample> batch(
            split.samples.begin() + static_cast<long>(i),
            split.samples.begin() +
                static_cast<long>(std::min(i + static_cast<std::size_t>(batch_size),
                                           split.samples.size())));
        pad_to_common_length(batch);
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace reimts
