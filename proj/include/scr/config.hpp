/**
 * @file config.hpp
 * @brief Run configuration (strict JSON schema with line-precise errors) and run manifests.
 */
#pragma once

#include "scr/agent.hpp"
#include "scr/baselines.hpp"
#include "scr/env.hpp"
#include "scr/scenario.hpp"
#include "scr/tape.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scr::cli
{
    /// Either a CSV path (with its schema) or a synthetic generator spec.
    struct TapeSource
    {
        std::string path;
        tape::LoadSchema schema;
        std::optional<tape::SyntheticTapeConfig> synthetic;
        bool synthetic_seed_fixed = false; // otherwise the generator seed derives from the run seed
    };

    /// Chronological split by dates or by fractions of the tape.
    struct SplitConfig
    {
        std::optional<tape::SplitSpec> dates;
        double train_fraction = 0.6;
        double valid_fraction = 0.1;

        tape::SplitIndices resolve(const tape::ReturnTape &tape) const;
    };

    struct RunConfig
    {
        TapeSource tape;
        std::vector<tape::Universe> universes; // empty: one universe holding every asset
        SplitConfig split;
        scenario::ScrConfig scr;
        env::EnvParams env;
        env::RewardParams reward; // eta, lambda_rho, lambda_conc, cost_rate mirror env
        agent::TrainConfig agent;
        baselines::AllocatorSpec allocator;
        std::vector<std::string> strategies{"scr_ppo_full"};
        std::vector<std::uint64_t> seeds{0};
        std::string out = "runs";

        /// Canonical form; keys are emitted sorted.
        nlohmann::json to_json() const;
    };

    /// Parses and validates; `source` names the input in error messages (file:line: message).
    RunConfig parse_run_config(std::string_view text, const std::string &source = "<config>");
    RunConfig load_run_config(const std::string &path);
    RunConfig run_config_from_json(const nlohmann::json &j);

    /// SHA-256 of the canonical JSON; stable under key reordering.
    std::string config_hash(const RunConfig &cfg);
    std::string sha256_hex(std::string_view data);

    std::vector<std::string> strategy_names();
    bool is_rl_strategy(const std::string &name);
    /// Training configuration of an RL strategy for one seed, derived from the agent section.
    agent::TrainConfig strategy_train_config(const RunConfig &cfg, const std::string &strategy, std::uint64_t seed);

    struct RunManifest
    {
        std::string config_hash;
        std::string code_version;
        std::string command;
        std::vector<std::uint64_t> seeds;
        std::string started;
        std::string finished;
        std::vector<std::string> files; // relative to the manifest's directory, sorted

        nlohmann::json to_json() const;
    };

    /// UTC ISO-8601 timestamp.
    std::string utc_timestamp();
    /// Lists every regular file under `dir` (relative, sorted), excluding `exclude`.
    std::vector<std::string> list_files(const std::string &dir, const std::string &exclude = "manifest.json");
}
