#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "reimts/harness.hpp"

using namespace reimts;
namespace fs = std::filesystem;

TEST(Harness, ParseSeeds) {
    EXPECT_EQ(parse_seeds("2024..2028"),
              (std::vector<std::uint64_t>{2024, 2025, 2026, 2027, 2028}));
    EXPECT_EQ(parse_seeds("1,5,9"), (std::vector<std::uint64_t>{1, 5, 9}));
    EXPECT_EQ(parse_seeds("7"), (std::vector<std::uint64_t>{7}));
    EXPECT_THROW(parse_seeds("9..7"), std::invalid_argument);
    EXPECT_THROW(parse_seeds(""), std::invalid_argument);
}

TEST(Harness, ParsePeriods) {
    EXPECT_EQ(parse_periods("48,24,12"), (std::vector<double>{48.0, 24.0, 12.0}));
    EXPECT_THROW(parse_periods(""), std::invalid_argument);
}

TEST(Harness, SweepPeriodChain) {
    EXPECT_EQ(sweep_periods(48.0, 3, 24.0), (std::vector<double>{48.0, 24.0, 12.0}));
    EXPECT_EQ(sweep_periods(48.0, 2, 16.0), (std::vector<double>{48.0, 16.0}));
    EXPECT_EQ(sweep_periods(48.0, 1, 24.0), (std::vector<double>{48.0}));
    EXPECT_THROW(sweep_periods(48.0, 2, 20.0), std::invalid_argument); // 20 !| 48
}

TEST(Harness, AtomicWriteLeavesNoTemp) {
    fs::path dir = fs::temp_directory_path() / "reimts_harness_test";
    fs::create_directories(dir);
    fs::path target = dir / "out.txt";
    atomic_write(target.string(), "hello\n");
    EXPECT_TRUE(fs::exists(target));
    EXPECT_FALSE(fs::exists(target.string() + ".tmp"));
    std::ifstream in(target);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(content, "hello\n");
    fs::remove_all(dir);
}

TEST(Harness, AggregateMeanStd) {
    std::vector<RunOutcome> runs(2);
    runs[0].test = {1.0, 0.5, 10};
    runs[1].test = {3.0, 1.5, 10};
    Aggregate a = aggregate(runs);
    EXPECT_DOUBLE_EQ(a.mse_mean, 2.0);
    EXPECT_DOUBLE_EQ(a.mse_std, 1.0);
    EXPECT_DOUBLE_EQ(a.mae_mean, 1.0);
    EXPECT_EQ(a.runs, 2);
}

TEST(Harness, ResultsFileIsSelfReproducing) {
    // meta record embeds command, argv, config, seeds and format version
    ReimtsConfig cfg;
    cfg.periods = {48.0, 24.0};
    cfg.num_variables = 4;
    TrainConfig tc;
    nlohmann::json meta = meta_record("train", {"reimts", "train", "--levels", "48,24"}, cfg, tc,
                                      {2024, 2025}, "manifest.txt");
    EXPECT_EQ(meta.at("format"), kResultsFormat);
    EXPECT_EQ(meta.at("command"), "train");
    EXPECT_EQ(meta.at("argv").size(), 4u);
    EXPECT_EQ(meta.at("seeds"), (std::vector<std::uint64_t>{2024, 2025}));
    EXPECT_EQ(meta.at("config").at("periods"), (std::vector<double>{48.0, 24.0}));
    EXPECT_EQ(meta.at("train").at("max_epochs"), 300);
    EXPECT_TRUE(meta.contains("created_at"));
    ReimtsConfig round = config_from_json(meta.at("config"));
    EXPECT_EQ(round.periods, cfg.periods);
}

TEST(Harness, DeterministicModeEnvVar) {
    ::unsetenv("REIMTS_DETERMINISTIC");
    EXPECT_FALSE(deterministic_mode());
    ::setenv("REIMTS_DETERMINISTIC", "1", 1);
    EXPECT_TRUE(deterministic_mode());
    ::setenv("REIMTS_DETERMINISTIC", "0", 1);
    EXPECT_FALSE(deterministic_mode());
    ::unsetenv("REIMTS_DETERMINISTIC");
}

TEST(Harness, LoadDatasetWrapsErrors) {
    EXPECT_THROW(load_dataset("/nonexistent/manifest.txt"), DataError);
}

#ifdef REIMTS_CLI_PATH

namespace {
int cli(const std::string& args, const std::string& log) {
    std::string cmd = std::string("'") + REIMTS_CLI_PATH + "' " + args + " > " + log + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}
} // namespace

TEST(Cli, ExitCodes) {
    fs::path dir = fs::temp_directory_path() / "reimts_cli_codes";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string log = (dir / "log.txt").string();
    // usage errors
    EXPECT_EQ(cli("definitely-not-a-command", log), 2);
    EXPECT_EQ(cli("generate --num-variables 0 --out " + (dir / "x").string(), log), 2);
    EXPECT_EQ(cli("train --data " + (dir / "m.txt").string() + " --max-epochs 5 --patience 9 --out " +
                      (dir / "x").string(),
                  log),
              2); // patience >= max_epochs given explicitly
    // data error
    EXPECT_EQ(cli("train --data " + (dir / "missing.txt").string() + " --out " +
                      (dir / "x").string(),
                  log),
              3);
    fs::remove_all(dir);
}

TEST(Cli, GenerateIsByteIdentical) {
    fs::path dir = fs::temp_directory_path() / "reimts_cli_gen";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string log = (dir / "log.txt").string();
    std::string flags = "generate --preset two-scale --seed 7 --num-samples 20 --out ";
    ASSERT_EQ(cli(flags + (dir / "a").string(), log), 0);
    ASSERT_EQ(cli(flags + (dir / "b").string(), log), 0);
    EXPECT_EQ(slurp(dir / "a" / "corpus.csv"), slurp(dir / "b" / "corpus.csv"));
    EXPECT_EQ(slurp(dir / "a" / "manifest.txt"), slurp(dir / "b" / "manifest.txt"));
    fs::remove_all(dir);
}

#endif // REIMTS_CLI_PATH
