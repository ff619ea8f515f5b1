// Command-line front door: generate synthetic corpora, train/evaluate the
// recursive multi-scale wrapper, run ablations and level/period sweeps.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 1 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "reimts/harness.hpp"

namespace fs = std::filesystem;
using namespace reimts;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct CommonTrainFlags {
    std::string data_manifest;
    std::string levels = "48,24";
    std::string backbone = "temporal";
    std::string decode_mode = "concat";
    std::string ablation = "full";
    std::string alpha_mode = "per_channel";
    long hidden_dim = 16;
    int num_layers = 1;
    std::string seeds = "2024..2028";
    double lr = 1e-3;
    long batch_size = 32;
    int max_epochs = 300;
    int patience = 10;
    std::string lr_schedule = "halve_after_3";
    double grad_clip = 0.0;
    std::string out_dir = "out";
    bool no_history = false;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f) {
    cmd->add_option("--data", f.data_manifest, "dataset manifest path")->required();
    cmd->add_option("--levels", f.levels, "comma-separated time periods, e.g. 48,24,12");
    cmd->add_option("--backbone", f.backbone, "temporal|variable|observation")
        ->check(CLI::IsMember({"temporal", "variable", "observation"}));
    cmd->add_option("--decode-mode", f.decode_mode, "concat|lowest")
        ->check(CLI::IsMember({"concat", "lowest"}));
    cmd->add_option("--ablation", f.ablation, "full|rp_sample|rp_split|rp_iarf|wo_iarf")
        ->check(CLI::IsMember({"full", "rp_sample", "rp_split", "rp_iarf", "wo_iarf"}));
    cmd->add_option("--alpha-mode", f.alpha_mode, "per_channel|per_position")
        ->check(CLI::IsMember({"per_channel", "per_position"}));
    cmd->add_option("--hidden-dim", f.hidden_dim, "hidden width D")->check(CLI::PositiveNumber);
    cmd->add_option("--num-layers", f.num_layers, "encoder layer count")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seeds", f.seeds, "seed list or range, e.g. 2024..2028 or 1,2,3");
    cmd->add_option("--lr", f.lr, "learning rate")->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch-size", f.batch_size, "")->check(CLI::PositiveNumber);
    cmd->add_option("--max-epochs", f.max_epochs, "")->check(CLI::PositiveNumber);
    cmd->add_option("--patience", f.patience, "early stopping patience")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--lr-schedule", f.lr_schedule, "halve_after_3|none")
        ->check(CLI::IsMember({"halve_after_3", "none"}));
    cmd->add_option("--grad-clip", f.grad_clip, "global-norm clip, 0 disables")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_flag("--no-history", f.no_history, "omit per-epoch records from results files");
}

ReimtsConfig model_config(const CommonTrainFlags& f, long num_variables) {
    ReimtsConfig cfg;
    cfg.periods = parse_periods(f.levels);
    cfg.backbone.kind = rep_kind_from_name(f.backbone);
    cfg.backbone.hidden_dim = f.hidden_dim;
    cfg.backbone.num_layers = f.num_layers;
    cfg.decode_mode =
        f.decode_mode == "concat" ? DecodeMode::concat_all_levels : DecodeMode::lowest_level_only;
    cfg.ablation = ablation_from_name(f.ablation);
    cfg.alpha_mode =
        f.alpha_mode == "per_channel" ? AlphaMode::per_channel : AlphaMode::per_position;
    cfg.num_variables = num_variables;
    ScaleStack validate(cfg.periods);
    (void)validate;
    return cfg;
}

TrainConfig train_config(const CommonTrainFlags& f, bool patience_given) {
    TrainConfig tc;
    tc.learning_rate = f.lr;
    tc.max_epochs = f.max_epochs;
    tc.patience = f.patience;
    // default patience follows a shortened run unless set explicitly
    if (!patience_given && tc.patience >= tc.max_epochs) tc.patience = tc.max_epochs - 1;
    tc.batch_size = f.batch_size;
    tc.lr_schedule = f.lr_schedule == "none" ? LrSchedule::none : LrSchedule::halve_after_3;
    tc.gradient_clip = f.grad_clip;
    tc.validate();
    return tc;
}

std::vector<std::string> argv_vector(int argc, char** argv) {
    std::vector<std::string> v;
    for (int i = 0; i < argc; ++i) v.emplace_back(argv[i]);
    return v;
}

void print_summary(const Aggregate& a) {
    std::printf("summary: MSE %.5f +- %.5f (x10: %.4f +- %.4f), MAE %.5f +- %.5f, %d runs\n",
                a.mse_mean, a.mse_std, a.mse_mean * 10.0, a.mse_std * 10.0, a.mae_mean,
                a.mae_std, a.runs);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"recursive multi-scale wrapper for irregular multivariate time series"};
    app.require_subcommand(1);
    std::vector<std::string> argv_echo = argv_vector(argc, argv);

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "create a synthetic corpus + manifest");
    std::string gen_preset = "two-scale";
    std::string gen_out = "corpus";
    std::string gen_name;
    std::uint64_t gen_seed = 2024;
    SyntheticSpec gen_spec; // explicit flags override the preset
    long gen_samples = -1, gen_vars = -1, gen_targets = -1;
    double gen_span = -1, gen_horizon = -1, gen_rate = -1, gen_decay = -1;
    double gen_p1 = -1, gen_p2 = -1, gen_amp1 = -1e30, gen_amp2 = -1e30;
    double gen_coupling = -1e30, gen_noise = -1;
    gen->add_option("--preset", gen_preset, "physio-like|two-scale")
        ->check(CLI::IsMember({"physio-like", "two-scale"}));
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--name", gen_name, "dataset name (defaults to the preset)");
    gen->add_option("--num-samples", gen_samples, "")->check(CLI::PositiveNumber);
    gen->add_option("--num-variables", gen_vars, "")->check(CLI::PositiveNumber);
    gen->add_option("--total-span", gen_span, "lookback span T^1")->check(CLI::PositiveNumber);
    gen->add_option("--horizon-span", gen_horizon, "")->check(CLI::PositiveNumber);
    gen->add_option("--base-rate", gen_rate, "expected obs per variable over the span")
        ->check(CLI::PositiveNumber);
    gen->add_option("--decay", gen_decay, "dense-to-sparse factor, >= 1");
    gen->add_option("--period1", gen_p1, "first seasonal period")->check(CLI::PositiveNumber);
    gen->add_option("--period2", gen_p2, "second seasonal period")->check(CLI::PositiveNumber);
    gen->add_option("--amp1", gen_amp1, "");
    gen->add_option("--amp2", gen_amp2, "");
    gen->add_option("--coupling", gen_coupling, "cross-variable coupling coefficient");
    gen->add_option("--noise", gen_noise, "observation noise sigma")
        ->check(CLI::NonNegativeNumber);
    gen->add_option("--targets", gen_targets, "forecast targets (earliest distinct times; 0=all)");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train across seeds and report mean +- std");
    CommonTrainFlags train_flags;
    add_train_flags(train_cmd, train_flags);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint json")->required();
    eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
    eval_cmd->add_option("--split", eval_split, "train|val|test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval_cmd->add_option("--out", eval_out, "optional output directory for eval.jsonl");

    // ---- ablate ----
    auto* ablate_cmd = app.add_subcommand("ablate", "run ablation variants side by side");
    CommonTrainFlags ablate_flags;
    add_train_flags(ablate_cmd, ablate_flags);
    std::string ablate_list = "full,rp_sample,rp_split,rp_iarf,wo_iarf";
    ablate_cmd->add_option("--ablations", ablate_list, "comma list of variants to run");

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "cross-product sweep of levels and periods");
    CommonTrainFlags sweep_flags;
    add_train_flags(sweep_cmd, sweep_flags);
    std::string sweep_levels = "2,3,4";
    std::string sweep_periods; // default: half span
    sweep_cmd->add_option("--sweep-levels", sweep_levels, "level counts, e.g. 2,3,4");
    sweep_cmd->add_option("--sweep-periods", sweep_periods,
                          "second-level periods, e.g. 24,16,12 (default: half the span)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            SyntheticSpec spec = gen_preset == "physio-like" ? physio_like_spec(gen_seed)
                                                             : two_scale_spec(gen_seed);
            spec.seed = gen_seed;
            if (gen_samples > 0) spec.num_samples = gen_samples;
            if (gen_vars > 0) spec.num_variables = gen_vars;
            if (gen_span > 0) spec.total_span = gen_span;
            if (gen_horizon > 0) spec.horizon_span = gen_horizon;
            if (gen_rate > 0) spec.base_rate = gen_rate;
            if (gen_decay > 0) spec.decay_factor = gen_decay;
            if (gen_p1 > 0) spec.period1 = gen_p1;
            if (gen_p2 > 0) spec.period2 = gen_p2;
            if (gen_amp1 > -1e29) spec.amp1 = gen_amp1;
            if (gen_amp2 > -1e29) spec.amp2 = gen_amp2;
            if (gen_coupling > -1e29) spec.coupling = gen_coupling;
            if (gen_noise >= 0) spec.noise = gen_noise;
            if (gen_targets >= 0) spec.forecast_targets = gen_targets;
            spec.validate();

            RawCorpus corpus = generate(spec);
            DatasetManifest manifest;
            manifest.name = gen_name.empty() ? gen_preset : gen_name;
            manifest.data_file = "corpus.csv";
            manifest.num_variables = spec.num_variables;
            manifest.total_span = spec.total_span;
            manifest.horizon_span = spec.horizon_span;
            manifest.unit = "hours";
            manifest.forecast_targets = spec.forecast_targets;
            manifest.split = assign_splits(corpus, spec.seed);
            auto clamped = compute_normalization(corpus, manifest);
            for (long v : clamped)
                std::fprintf(stderr,
                             "warning: variable %ld has zero training variance; std clamped "
                             "to 1\n",
                             v);

            fs::create_directories(gen_out);
            save_tuples(corpus, (fs::path(gen_out) / "corpus.csv").string());
            write_manifest(manifest, (fs::path(gen_out) / "manifest.txt").string());
            double total_obs = 0;
            for (const auto& s : corpus.samples)
                total_obs += static_cast<double>(s.observations.size());
            std::printf("generated %ld samples, V=%ld, avg %.1f obs/sample -> %s\n",
                        spec.num_samples, spec.num_variables,
                        total_obs / static_cast<double>(spec.num_samples), gen_out.c_str());
            return 0;
        }

        if (train_cmd->parsed()) {
            TrainConfig tc = train_config(train_flags, train_cmd->count("--patience") > 0);
            ScaleStack levels_check(parse_periods(train_flags.levels));
            (void)levels_check;
            LoadedDataset ds = load_dataset(train_flags.data_manifest);
            ReimtsConfig cfg = model_config(train_flags, ds.manifest.num_variables);
            auto seeds = parse_seeds(train_flags.seeds);
            fs::create_directories(train_flags.out_dir);

            std::vector<RunOutcome> runs;
            for (std::uint64_t seed : seeds) {
                ParamStore best;
                RunOutcome run = run_single(cfg, ds.bundle, tc, seed, &best);
                std::printf("seed %llu: test MSE %.5f MAE %.5f (%d epochs, best %d)\n",
                            static_cast<unsigned long long>(seed), run.test.mse, run.test.mae,
                            run.epochs_run, run.best_epoch);
                save_checkpoint((fs::path(train_flags.out_dir) /
                                 ("ckpt_seed" + std::to_string(seed) + ".json"))
                                    .string(),
                                cfg, best);
                runs.push_back(std::move(run));
            }
            Aggregate agg = aggregate(runs);
            nlohmann::json meta =
                meta_record("train", argv_echo, cfg, tc, seeds, train_flags.data_manifest);
            atomic_write((fs::path(train_flags.out_dir) / "results.jsonl").string(),
                         results_to_text(meta, runs, agg, !train_flags.no_history));
            print_summary(agg);
            return 0;
        }

        if (eval_cmd->parsed()) {
            Checkpoint ck;
            try {
                ck = load_checkpoint(eval_ckpt);
            } catch (const std::exception& e) {
                throw DataError(e.what());
            }
            LoadedDataset ds = load_dataset(eval_data);
            const SplitData& split = eval_split == "train" ? ds.bundle.train
                                     : eval_split == "val" ? ds.bundle.val
                                                           : ds.bundle.test;
            Metrics m = evaluate(ck.config, ck.params, split);
            std::printf("%s split: MSE %.5f (x10: %.4f), MAE %.5f (x10: %.4f), %ld queries\n",
                        eval_split.c_str(), m.mse, m.mse * 10.0, m.mae, m.mae * 10.0,
                        m.query_count);
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                nlohmann::json rec{{"record", "eval"},
                                   {"checkpoint", eval_ckpt},
                                   {"data", eval_data},
                                   {"split", eval_split},
                                   {"mse", m.mse},
                                   {"mse_x10", m.mse * 10.0},
                                   {"mae", m.mae},
                                   {"mae_x10", m.mae * 10.0},
                                   {"query_count", m.query_count},
                                   {"created_at", iso_timestamp()}};
                atomic_write((fs::path(eval_out) / "eval.jsonl").string(), rec.dump() + "\n");
            }
            return 0;
        }

        if (ablate_cmd->parsed()) {
            TrainConfig tc = train_config(ablate_flags, ablate_cmd->count("--patience") > 0);
            LoadedDataset ds = load_dataset(ablate_flags.data_manifest);
            auto seeds = parse_seeds(ablate_flags.seeds);
            fs::create_directories(ablate_flags.out_dir);

            std::vector<std::string> variants;
            {
                std::stringstream ss(ablate_list);
                std::string item;
                while (std::getline(ss, item, ','))
                    if (!item.empty()) variants.push_back(item);
            }
            std::ostringstream table;
            table << "ablation   mse_mean  mse_std   mae_mean  sec/iter\n";
            for (const std::string& variant : variants) {
                CommonTrainFlags vf = ablate_flags;
                vf.ablation = variant;
                ReimtsConfig cfg = model_config(vf, ds.manifest.num_variables);
                MultiRunResult res = run_seeds(cfg, ds.bundle, tc, seeds);
                char line[160];
                std::snprintf(line, sizeof(line), "%-10s %-9.5f %-9.5f %-9.5f %.4f\n",
                              variant.c_str(), res.agg.mse_mean, res.agg.mse_std,
                              res.agg.mae_mean, res.agg.sec_per_iter_mean);
                table << line;
                std::printf("%s", line);
                nlohmann::json meta = meta_record("ablate", argv_echo, cfg, tc, seeds,
                                                  ablate_flags.data_manifest);
                atomic_write((fs::path(ablate_flags.out_dir) /
                              ("results_" + variant + ".jsonl"))
                                 .string(),
                             results_to_text(meta, res.runs, res.agg, !ablate_flags.no_history));
            }
            atomic_write((fs::path(ablate_flags.out_dir) / "ablate_report.txt").string(),
                         table.str());
            return 0;
        }

        if (sweep_cmd->parsed()) {
            TrainConfig tc = train_config(sweep_flags, sweep_cmd->count("--patience") > 0);
            LoadedDataset ds = load_dataset(sweep_flags.data_manifest);
            auto seeds = parse_seeds(sweep_flags.seeds);
            fs::create_directories(sweep_flags.out_dir);

            std::vector<int> levels;
            {
                std::stringstream ss(sweep_levels);
                std::string item;
                while (std::getline(ss, item, ','))
                    if (!item.empty()) levels.push_back(std::stoi(item));
            }
            std::vector<double> periods;
            if (sweep_periods.empty()) periods = {ds.manifest.total_span / 2.0};
            else periods = parse_periods(sweep_periods);

            ReimtsConfig base = model_config(sweep_flags, ds.manifest.num_variables);
            auto combos = run_sweep(base, ds.bundle, tc, seeds, levels, periods,
                                    ds.manifest.total_span);

            std::string report = sweep_report_text(combos);
            std::printf("%s", report.c_str());
            atomic_write((fs::path(sweep_flags.out_dir) / "sweep_report.txt").string(), report);
            atomic_write((fs::path(sweep_flags.out_dir) / "series_levels.csv").string(),
                         sweep_series_csv(combos, true));
            atomic_write((fs::path(sweep_flags.out_dir) / "series_periods.csv").string(),
                         sweep_series_csv(combos, false));
            std::ostringstream runs_out;
            for (const auto& combo : combos) {
                ReimtsConfig cfg = base;
                cfg.periods = combo.periods;
                nlohmann::json meta =
                    meta_record("sweep", argv_echo, cfg, tc, seeds, sweep_flags.data_manifest);
                meta["sweep_levels"] = combo.levels;
                meta["sweep_second_period"] = combo.second_period;
                runs_out << meta.dump() << "\n";
                for (const auto& r : combo.result.runs) runs_out << run_to_json(r).dump() << "\n";
                runs_out << summary_to_json(combo.result.agg).dump() << "\n";
            }
            atomic_write((fs::path(sweep_flags.out_dir) / "sweep_runs.jsonl").string(),
                         runs_out.str());
            return 0;
        }
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const std::invalid_argument& e) {
        // invalid flag combination discovered during config assembly
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
