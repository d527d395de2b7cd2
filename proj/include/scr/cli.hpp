/**
 * @file cli.hpp
 * @brief Subcommand implementations behind the `scr` tool: train, backtest, sweep-beta,
 * verify-theory, report and synth-tape.
 */
#pragma once

#include "scr/config.hpp"
#include "scr/harness.hpp"
#include "scr/theory.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scr::cli
{
    inline constexpr int kExitOk = 0;
    inline constexpr int kExitFailure = 1;
    inline constexpr int kExitConfig = 2;
    inline constexpr int kExitViolation = 3;

    struct CommandOptions
    {
        std::filesystem::path out; // empty: the config's out
        std::optional<std::uint64_t> seed; // replaces the config's seed list
        std::size_t jobs = 1;
    };

    /// Applies --seed and --out overrides.
    RunConfig apply_overrides(RunConfig cfg, const CommandOptions &opt);

    /**
     * Trains every configured strategy for every universe and seed, backtests each on the test
     * segment and writes run directories, summary.csv, the resolved config and a manifest.
     */
    std::vector<BacktestResult> cmd_train(const RunConfig &cfg, const CommandOptions &opt);

    /// Re-runs the deterministic backtest from saved checkpoints on "train", "valid" or "test".
    std::vector<BacktestResult> cmd_backtest(const RunConfig &cfg, const CommandOptions &opt, const std::string &segment);

    struct SweepRow
    {
        double beta = 0.0;
        std::string group;
        std::optional<metrics::Quartiles> sharpe;
        std::size_t runs = 0;
    };

    std::vector<double> default_sweep_grid(); // 0, 0.25, 0.5, 0.75, 1

    /// Full-variant training per beta; one row per (beta, universe group), grid order first.
    std::vector<SweepRow> cmd_sweep_beta(const RunConfig &cfg, const std::vector<double> &grid, const CommandOptions &opt);

    /// Randomized bound suite; writes theory_report.json under `out`.
    theory::SuiteReport cmd_verify_theory(std::uint64_t seed, std::size_t models, const std::filesystem::path &out);

    /// Aggregates the run directories below `dir` into table and plot-data CSVs under `out`.
    void cmd_report(const std::filesystem::path &dir, const std::filesystem::path &out);

    /// Writes the synthetic tape of a seed (tape.csv) and its regime path (regimes.csv).
    void cmd_synth_tape(const RunConfig &cfg, std::uint64_t seed, const std::filesystem::path &out);

    /// Mean and 1.96 std / sqrt(n) half-width of each column position across series (truncated to the shortest).
    struct Band
    {
        std::vector<double> mean;
        std::vector<double> half_width;
        std::size_t n = 0;
    };
    Band confidence_band(const std::vector<std::vector<double>> &series);

    /// Running mean: out[k] = mean(x[0..k]).
    std::vector<double> cumulative_mean(const std::vector<double> &x);
}
