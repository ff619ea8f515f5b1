#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reimts/data.hpp"
#include "reimts/training.hpp"

namespace reimts {

inline constexpr const char* kResultsFormat = "reimts-results-1";

/// "2024..2028" (inclusive range) or "1,5,9" (list).
inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    auto range = text.find("..");
    if (range != std::string::npos) {
        std::uint64_t lo = std::stoull(text.substr(0, range));
        std::uint64_t hi = std::stoull(text.substr(range + 2));
        if (hi < lo) throw std::invalid_argument("seeds: range end before start");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw std::invalid_argument("seeds: nothing parsed from '" + text + "'");
    return seeds;
}

inline std::vector<double> parse_periods(const std::string& text) {
    std::vector<double> periods;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        periods.push_back(std::stod(item));
    }
    if (periods.empty())
        throw std::invalid_argument("levels: nothing parsed from '" + text + "'");
    return periods;
}

inline bool deterministic_mode() {
    const char* env = std::getenv("REIMTS_DETERMINISTIC");
    return env != nullptr && std::string(env) == "1";
}

inline std::string iso_timestamp() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

/// write-temp-then-rename so partially written results never surface
inline void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp);
        out << content;
        if (!out) throw std::runtime_error("atomic_write: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("atomic_write: rename to " + path + " failed");
}

// ---------------------------------------------------------------------------
// Dataset loading via manifest
// ---------------------------------------------------------------------------

struct LoadedDataset {
    DatasetManifest manifest;
    DatasetBundle bundle;
};

/// Raised for missing or malformed input files, so the CLI can exit with a
/// data-failure code distinct from runtime failures.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline LoadedDataset load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    try {
        DatasetManifest manifest = read_manifest(manifest_path);
        fs::path dir = fs::path(manifest_path).parent_path();
        fs::path data =
            manifest.data_file.empty() ? dir / "corpus.csv" : dir / manifest.data_file;
        RawCorpus corpus = load_tuples(data.string(), manifest.num_variables,
                                       manifest.total_span + manifest.horizon_span);
        LoadedDataset out{std::move(manifest), {}};
        out.bundle = prepare_dataset(corpus, out.manifest);
        return out;
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Runs and aggregation
// ---------------------------------------------------------------------------

struct RunOutcome {
    std::uint64_t seed = 0;
    Metrics test;
    double best_val = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
    bool early_stopped = false;
    double wall_seconds = 0.0;
    double seconds_per_iteration = 0.0;
    std::vector<EpochRecord> history;
};

/// One seeded training: init params from the seed, fit, evaluate on test.
inline RunOutcome run_single(const ReimtsConfig& cfg, const DatasetBundle& data,
                             TrainConfig tc, std::uint64_t seed,
                             ParamStore* best_params_out = nullptr) {
    tc.seed = seed;
    ParamStore init = make_model_params(cfg, seed);
    FitResult res = fit(cfg, std::move(init), data.train, data.val, tc);
    RunOutcome out;
    out.seed = seed;
    out.test = evaluate(cfg, res.best_params, data.test);
    out.best_val = res.best_val_loss;
    out.best_epoch = res.best_epoch;
    out.epochs_run = res.epochs_run;
    out.early_stopped = res.early_stopped;
    out.wall_seconds = res.wall_seconds_total;
    out.seconds_per_iteration = res.seconds_per_iteration;
    out.history = res.history;
    if (best_params_out) *best_params_out = res.best_params;
    return out;
}

struct Aggregate {
    double mse_mean = 0.0, mse_std = 0.0;
    double mae_mean = 0.0, mae_std = 0.0;
    double sec_per_iter_mean = 0.0;
    int runs = 0;
};

inline Aggregate aggregate(const std::vector<RunOutcome>& runs) {
    Aggregate a;
    a.runs = static_cast<int>(runs.size());
    if (runs.empty()) return a;
    for (const auto& r : runs) {
        a.mse_mean += r.test.mse;
        a.mae_mean += r.test.mae;
        a.sec_per_iter_mean += r.seconds_per_iteration;
    }
    a.mse_mean /= a.runs;
    a.mae_mean /= a.runs;
    a.sec_per_iter_mean /= a.runs;
    for (const auto& r : runs) {
        a.mse_std += (r.test.mse - a.mse_mean) * (r.test.mse - a.mse_mean);
        a.mae_std += (r.test.mae - a.mae_mean) * (r.test.mae - a.mae_mean);
    }
    a.mse_std = std::sqrt(a.mse_std / a.runs);
    a.mae_std = std::sqrt(a.mae_std / a.runs);
    return a;
}

// ---------------------------------------------------------------------------
// Results files (line-delimited JSON records)
// ---------------------------------------------------------------------------

inline nlohmann::json train_config_to_json(const TrainConfig& tc) {
    return nlohmann::json{{"learning_rate", tc.learning_rate},
                          {"max_epochs", tc.max_epochs},
                          {"patience", tc.patience},
                          {"batch_size", tc.batch_size},
                          {"lr_schedule", lr_schedule_name(tc.lr_schedule)},
                          {"gradient_clip", tc.gradient_clip}};
}

inline nlohmann::json run_to_json(const RunOutcome& r) {
    return nlohmann::json{
        {"record", "run"},
        {"seed", r.seed},
        {"metrics",
         {{"mse", r.test.mse},
          {"mse_x10", r.test.mse * 10.0},
          {"mae", r.test.mae},
          {"mae_x10", r.test.mae * 10.0},
          {"query_count", r.test.query_count}}},
        {"best_val", r.best_val},
        {"best_epoch", r.best_epoch},
        {"epochs_run", r.epochs_run},
        {"early_stopped", r.early_stopped},
        {"wall_seconds", r.wall_seconds},
        {"seconds_per_iteration", r.seconds_per_iteration}};
}

inline nlohmann::json summary_to_json(const Aggregate& a) {
    return nlohmann::json{{"record", "summary"},
                          {"runs", a.runs},
                          {"mse_mean", a.mse_mean},
                          {"mse_std", a.mse_std},
                          {"mse_x10_mean", a.mse_mean * 10.0},
                          {"mse_x10_std", a.mse_std * 10.0},
                          {"mae_mean", a.mae_mean},
                          {"mae_std", a.mae_std},
                          {"sec_per_iter_mean", a.sec_per_iter_mean}};
}

/// Every results file opens with a meta record embedding the exact command,
/// config, seeds and format version needed to rerun it.
inline nlohmann::json meta_record(const std::string& command,
                                  const std::vector<std::string>& argv,
                                  const ReimtsConfig& cfg, const TrainConfig& tc,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::string& manifest_path) {
    return nlohmann::json{{"record", "meta"},
                          {"format", kResultsFormat},
                          {"command", command},
                          {"argv", argv},
                          {"config", config_to_json(cfg)},
                          {"train", train_config_to_json(tc)},
                          {"seeds", seeds},
                          {"data", manifest_path},
                          {"deterministic", deterministic_mode()},
                          {"created_at", iso_timestamp()}};
}

inline std::string results_to_text(const nlohmann::json& meta,
                                   const std::vector<RunOutcome>& runs,
                                   const Aggregate& agg, bool with_history = true) {
    std::ostringstream os;
    os << meta.dump() << "\n";
    for (const auto& r : runs) {
        os << run_to_json(r).dump() << "\n";
        if (with_history)
            for (const auto& e : r.history)
                os << nlohmann::json{{"record", "epoch"},
                                     {"seed", r.seed},
                                     {"epoch", e.epoch},
                                     {"train_loss", e.train_loss},
                                     {"val_loss", e.val_loss},
                                     {"lr", e.lr}}
                          .dump()
                   << "\n";
    }
    os << summary_to_json(agg).dump() << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Multi-seed train, ablation table, sweeps
// ---------------------------------------------------------------------------

struct MultiRunResult {
    std::vector<RunOutcome> runs;
    Aggregate agg;
};

inline MultiRunResult run_seeds(const ReimtsConfig& cfg, const DatasetBundle& data,
                                const TrainConfig& tc,
                                const std::vector<std::uint64_t>& seeds) {
    MultiRunResult out;
    out.runs.reserve(seeds.size());
    for (std::uint64_t s : seeds) out.runs.push_back(run_single(cfg, data, tc, s));
    out.agg = aggregate(out.runs);
    return out;
}

struct SweepCombo {
    int levels = 2;
    double second_period = 0.0; // 0 for the single-level row
    std::vector<double> periods;
    MultiRunResult result;
};

/// Builds the period chain [T^1, p, p/2, ...] for a combo; throws via
/// ScaleStack when the chain is invalid for the dataset span.
inline std::vector<double> sweep_periods(double total_span, int levels, double second_period) {
    std::vector<double> periods{total_span};
    double p = second_period;
    for (int n = 1; n < levels; ++n) {
        periods.push_back(p);
        p /= 2.0;
    }
    ScaleStack check(periods);
    (void)check;
    return periods;
}

/// Cross product of level counts and second-level periods. Combos run in
/// parallel threads unless REIMTS_DETERMINISTIC=1 forces one-at-a-time
/// execution; each run is internally single-threaded either way.
inline std::vector<SweepCombo> run_sweep(const ReimtsConfig& base, const DatasetBundle& data,
                                         const TrainConfig& tc,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<int>& level_counts,
                                         const std::vector<double>& second_periods,
                                         double total_span) {
    std::vector<SweepCombo> combos;
    for (int levels : level_counts)
        for (double p : second_periods) {
            SweepCombo c;
            c.levels = levels;
            c.second_period = p;
            c.periods = sweep_periods(total_span, levels, p);
            combos.push_back(std::move(c));
        }

    auto work = [&](SweepCombo& combo) {
        ReimtsConfig cfg = base;
        cfg.periods = combo.periods;
        combo.result = run_seeds(cfg, data, tc, seeds);
    };

    if (deterministic_mode() || combos.size() <= 1) {
        for (auto& c : combos) work(c);
        return combos;
    }
    std::atomic<std::size_t> next{0};
    unsigned n_threads = std::min<unsigned>(std::thread::hardware_concurrency(),
                                            static_cast<unsigned>(combos.size()));
    if (n_threads == 0) n_threads = 1;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t)
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= combos.size()) return;
                work(combos[i]);
            }
        });
    for (auto& t : pool) t.join();
    return combos;
}

/// Table-style sweep report: one row per combo with mean +- std MSE and the
/// per-iteration timing column.
inline std::string sweep_report_text(const std::vector<SweepCombo>& combos) {
    std::ostringstream os;
    os << "levels  second_period  periods                 mse_mean  mse_std   "
          "mae_mean  sec/iter\n";
    for (const auto& c : combos) {
        char line[256];
        std::ostringstream ps;
        for (std::size_t i = 0; i < c.periods.size(); ++i)
            ps << (i ? "," : "") << c.periods[i];
        std::snprintf(line, sizeof(line), "%-7d %-14.6g %-23s %-9.5f %-9.5f %-9.5f %.4f\n",
                      c.levels, c.second_period, ps.str().c_str(), c.result.agg.mse_mean,
                      c.result.agg.mse_std, c.result.agg.mae_mean,
                      c.result.agg.sec_per_iter_mean);
        os << line;
    }
    return os.str();
}

/// Plot-ready series: one CSV per swept axis.
inline std::string sweep_series_csv(const std::vector<SweepCombo>& combos, bool by_levels) {
    std::ostringstream os;
    os << (by_levels ? "levels" : "second_period") << ",mse_mean,mse_std,mae_mean,mae_std\n";
    for (const auto& c : combos)
        os << (by_levels ? static_cast<double>(c.levels) : c.second_period) << ","
           << c.result.agg.mse_mean << "," << c.result.agg.mse_std << ","
           << c.result.agg.mae_mean << "," << c.result.agg.mae_std << "\n";
    return os.str();
}

} // namespace reimts
