#include "scr/cli.hpp"

#include "CLI11.hpp"

#include <spdlog/spdlog.h>

#include <iostream>
#include <sstream>

namespace
{
    std::vector<double> parse_grid(const std::string &text)
    {
        std::vector<double> grid;
        std::stringstream ss(text);
        std::string cell;
        while (std::getline(ss, cell, ','))
        {
            std::size_t used = 0;
            double v = 0.0;
            try
            {
                v = std::stod(cell, &used);
            }
            catch (const std::exception &)
            {
                used = 0;
            }
            if (used == 0 || used != cell.size())
                throw scr::ConfigError("invalid beta grid entry '" + cell + "'");
            grid.push_back(v);
        }
        return grid;
    }
}

int main(int argc, char **argv)
{
    using namespace scr::cli;

    CLI::App app{"Scenario-context rollout portfolio rebalancing: training, backtests, sweeps and bound checks"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool trace = false;
    std::size_t jobs = 1;
    std::string segment = "test";
    std::string grid_text;
    std::size_t theory_models = 100;
    std::string report_dir;

    auto common = [&](CLI::App *cmd, bool needs_config)
    {
        auto *opt = cmd->add_option("--config", config_path, "run configuration (JSON)");
        if (needs_config)
            opt->required();
        cmd->add_option("--seed", seed, "single seed replacing the configured list (root seed for verify-theory)");
        cmd->add_option("--out", out, "output directory (defaults to the config's out)");
        cmd->add_flag("--trace", trace, "verbose logging");
        cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    };

    auto *train = app.add_subcommand("train", "train the configured strategies and backtest them on the test segment");
    common(train, true);
    auto *bt = app.add_subcommand("backtest", "deterministic backtest from saved checkpoints");
    common(bt, true);
    bt->add_option("--segment", segment, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
    auto *sweep = app.add_subcommand("sweep-beta", "median Sharpe per counterfactual weight and universe group");
    common(sweep, true);
    sweep->add_option("--grid", grid_text, "comma-separated beta values (default 0,0.25,0.5,0.75,1)");
    auto *verify = app.add_subcommand("verify-theory", "randomized finite-model bound suite");
    common(verify, false);
    verify->add_option("--seeds", theory_models, "number of randomized models")->check(CLI::PositiveNumber);
    auto *report = app.add_subcommand("report", "aggregate run directories into table and plot-data CSVs");
    common(report, false);
    report->add_option("--dir", report_dir, "experiment directory")->required();
    auto *synth = app.add_subcommand("synth-tape", "write the synthetic tape of a config");
    common(synth, true);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    spdlog::set_level(trace ? spdlog::level::debug : spdlog::level::info);
    spdlog::set_pattern("[%l] %v");

    try
    {
        CommandOptions opt;
        opt.out = out;
        opt.jobs = jobs;
        if (app.get_subcommands().front()->count("--seed") > 0)
            opt.seed = seed;

        if (app.got_subcommand(verify))
        {
            const auto rep = cmd_verify_theory(seed, theory_models, out.empty() ? "theory" : out);
            std::cout << "verify-theory: " << rep.models.size() << " models, " << rep.violations << " violations\n";
            return rep.pass ? kExitOk : kExitViolation;
        }
        if (app.got_subcommand(report))
        {
            cmd_report(report_dir, out.empty() ? std::filesystem::path(report_dir) / "report" : std::filesystem::path(out));
            return kExitOk;
        }

        const RunConfig cfg = load_run_config(config_path);
        if (app.got_subcommand(train))
        {
            const auto results = cmd_train(cfg, opt);
            std::cout << "trained " << results.size() << " runs into " << apply_overrides(cfg, opt).out << "\n";
        }
        else if (app.got_subcommand(bt))
        {
            const auto results = cmd_backtest(cfg, opt, segment);
            std::cout << "backtested " << results.size() << " runs on " << segment << "\n";
        }
        else if (app.got_subcommand(sweep))
        {
            const auto grid = grid_text.empty() ? default_sweep_grid() : parse_grid(grid_text);
            const auto rows = cmd_sweep_beta(cfg, grid, opt);
            std::cout << "sweep-beta: " << rows.size() << " rows\n";
        }
        else if (app.got_subcommand(synth))
        {
            const auto dir = out.empty() ? std::filesystem::path(cfg.out) : std::filesystem::path(out);
            cmd_synth_tape(cfg, opt.seed.value_or(cfg.seeds.front()), dir);
            std::cout << "wrote " << (dir / "tape.csv").string() << "\n";
        }
        return kExitOk;
    }
    catch (const scr::ConfigError &e)
    {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    catch (const scr::BoundViolation &e)
    {
        std::cerr << "bound violation: " << e.what() << "\n";
        return kExitViolation;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
