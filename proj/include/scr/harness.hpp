/**
 * @file harness.hpp
 * @brief Experiment plumbing: data preparation per (universe, seed), strategy training, deterministic
 * backtests and the per-run output files.
 */
#pragma once

#include "scr/agent.hpp"
#include "scr/config.hpp"
#include "scr/metrics.hpp"
#include "scr/scenario.hpp"
#include "scr/tape.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace scr::cli
{
    /// Loads or generates the tape for a run seed, with macro standardization fitted on the train rows.
    struct SourceData
    {
        tape::ReturnTape tape;
        tape::SplitIndices split;
        std::vector<std::size_t> regime_path; // synthetic tapes only
        std::vector<bool> anomaly_day;
    };

    SourceData load_source(const RunConfig &cfg, std::uint64_t seed);

    /// Universes of the config; the implicit default holds every asset.
    std::vector<tape::Universe> resolve_universes(const RunConfig &cfg, const tape::ReturnTape &tape);

    /// One universe of one seed: restricted tape and the train-fitted SCR replay.
    struct UniverseData
    {
        tape::Universe universe;
        std::uint64_t seed = 0;
        tape::ReturnTape tape;
        tape::SplitIndices split;
        scenario::ScrRun run;
        Vec train_mean; // mean return row over the train segment
    };

    UniverseData prepare_universe(const RunConfig &cfg, const SourceData &source, const tape::Universe &universe,
                                  std::uint64_t seed);

    /// Trained RL state carried from train to backtest.
    struct TrainedModel
    {
        agent::TrainConfig config;
        agent::GaussianPolicy policy;
        std::vector<agent::IterationStats> history;
        nlohmann::json checkpoint;
    };

    TrainedModel train_model(const RunConfig &cfg, const UniverseData &data, const std::string &strategy);
    TrainedModel train_model(const RunConfig &cfg, const UniverseData &data, const agent::TrainConfig &train);

    /// Checkpoint file content: trainer checkpoint plus the residual trace.
    nlohmann::json model_to_json(const TrainedModel &m);
    TrainedModel model_from_json(const nlohmann::json &j);

    struct BacktestResult
    {
        std::string strategy;
        std::string universe;
        tape::UniverseCategory category = tape::UniverseCategory::General;
        std::uint64_t seed = 0;
        std::vector<std::size_t> days; // decision days
        std::vector<double> returns;   // realized net returns, day t to t+1
        std::vector<double> scen_scores;
        std::vector<Vec> weights;
        std::vector<double> resid_trace; // training residuals (RL only)
        metrics::MetricsReport report;
    };

    /**
     * Deterministic rollout over decision days [seg.begin, seg.end - 1): the actor mean for RL
     * strategies, the allocator otherwise, each projected onto the constraint set against the held
     * weights. Scenario scores use the strategy's own return model (see README).
     */
    BacktestResult backtest(const RunConfig &cfg, const UniverseData &data, const std::string &strategy,
                            const TrainedModel *model, tape::Segment seg);

    /// Directory of one run below the output root.
    std::filesystem::path run_dir(const std::filesystem::path &root, const std::string &strategy,
                                  const std::string &universe, std::uint64_t seed);
    /// File-system safe form of a strategy name ("1/N" becomes "1_N").
    std::string safe_name(const std::string &name);

    void write_train_stats(const std::filesystem::path &file, const std::vector<agent::IterationStats> &history);
    /// metrics.csv, daily.csv (returns, scores, wealth) and weights.csv.
    void write_backtest(const std::filesystem::path &dir, const BacktestResult &r, const tape::ReturnTape &tape);
    BacktestResult read_backtest(const std::filesystem::path &dir);

    void write_text(const std::filesystem::path &file, const std::string &text);
    std::string read_text(const std::filesystem::path &file);

    /// Runs tasks 0..n-1 on up to `jobs` threads; the first exception is rethrown after all finish.
    void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)> &task);
}
