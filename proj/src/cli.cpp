#include "scr/cli.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace scr::cli
{
    namespace fs = std::filesystem;

    namespace
    {
        void write_manifest(const fs::path &root, const std::string &hash, const std::string &command,
                            const std::vector<std::uint64_t> &seeds, const std::string &started)
        {
            RunManifest m;
            m.config_hash = hash;
            m.code_version = SCR_VERSION;
            m.command = command;
            m.seeds = seeds;
            m.started = started;
            m.finished = utc_timestamp();
            m.files = list_files(root.string());
            write_text(root / "manifest.json", m.to_json().dump(2) + "\n");
        }

        struct Task
        {
            std::uint64_t seed;
            std::size_t universe; // index into the configured universes; 0 for the implicit one
        };

        std::vector<Task> make_tasks(const RunConfig &cfg)
        {
            std::vector<Task> tasks;
            const std::size_t nu = std::max<std::size_t>(1, cfg.universes.size());
            for (const auto seed : cfg.seeds)
            {
                for (std::size_t u = 0; u < nu; ++u)
                    tasks.push_back({seed, u});
            }
            return tasks;
        }

        UniverseData prepare_task(const RunConfig &cfg, const Task &task)
        {
            const SourceData source = load_source(cfg, task.seed);
            const auto universes = resolve_universes(cfg, source.tape);
            return prepare_universe(cfg, source, universes.at(task.universe), task.seed);
        }

        std::vector<std::string> strategy_order(const std::set<std::string> &present)
        {
            std::vector<std::string> out;
            for (const auto &s : strategy_names())
            {
                if (present.contains(s))
                    out.push_back(s);
            }
            for (const auto &s : present)
            {
                if (std::find(out.begin(), out.end(), s) == out.end())
                    out.push_back(s);
            }
            return out;
        }

        std::string summary_csv(const std::vector<BacktestResult> &results)
        {
            std::set<std::string> present;
            for (const auto &r : results)
                present.insert(r.strategy);
            std::vector<metrics::SummaryRow> rows;
            for (const auto &s : strategy_order(present))
            {
                std::vector<metrics::MetricsReport> reports;
                for (const auto &r : results)
                {
                    if (r.strategy == s)
                        reports.push_back(r.report);
                }
                rows.push_back(metrics::summarize(s, reports));
            }
            std::ostringstream out;
            metrics::write_summary_csv(out, rows);
            return out.str();
        }

        tape::Segment parse_segment(const tape::SplitIndices &split, const std::string &name)
        {
            if (name == "train")
                return split.train;
            if (name == "valid")
                return split.valid;
            if (name == "test")
                return split.test;
            throw ConfigError("unknown segment '" + name + "' (expected train, valid or test)");
        }

        std::string beta_label(double beta)
        {
            return fmt::format("{:g}", beta);
        }
    }

    RunConfig apply_overrides(RunConfig cfg, const CommandOptions &opt)
    {
        if (opt.seed)
            cfg.seeds = {*opt.seed};
        if (!opt.out.empty())
            cfg.out = opt.out.string();
        return cfg;
    }

    std::vector<BacktestResult> cmd_train(const RunConfig &config, const CommandOptions &opt)
    {
        const RunConfig cfg = apply_overrides(config, opt);
        const fs::path root = cfg.out;
        const std::string started = utc_timestamp();
        fs::create_directories(root);
        write_text(root / "config.json", cfg.to_json().dump(2) + "\n");

        const auto tasks = make_tasks(cfg);
        std::vector<std::vector<BacktestResult>> per_task(tasks.size());
        parallel_for(tasks.size(), opt.jobs, [&](std::size_t i)
                     {
            const auto data = prepare_task(cfg, tasks[i]);
            for (const auto &strategy : cfg.strategies)
            {
                const fs::path dir = run_dir(root, strategy, data.universe.name, data.seed);
                fs::create_directories(dir);
                std::optional<TrainedModel> model;
                if (is_rl_strategy(strategy))
                {
                    spdlog::info("train {} universe={} seed={}", strategy, data.universe.name, data.seed);
                    model = train_model(cfg, data, strategy);
                    write_text(dir / "checkpoint.json", model_to_json(*model).dump() + "\n");
                    write_train_stats(dir / "train_stats.csv", model->history);
                }
                auto result = backtest(cfg, data, strategy, model ? &*model : nullptr, data.split.test);
                write_backtest(dir, result, data.tape);
                per_task[i].push_back(std::move(result));
            } });

        std::vector<BacktestResult> results;
        for (auto &v : per_task)
            for (auto &r : v)
                results.push_back(std::move(r));
        write_text(root / "summary.csv", summary_csv(results));
        write_manifest(root, config_hash(cfg), "train", cfg.seeds, started);
        return results;
    }

    std::vector<BacktestResult> cmd_backtest(const RunConfig &config, const CommandOptions &opt, const std::string &segment)
    {
        const RunConfig cfg = apply_overrides(config, opt);
        const fs::path root = cfg.out;
        const std::string started = utc_timestamp();
        const auto tasks = make_tasks(cfg);
        std::vector<std::vector<BacktestResult>> per_task(tasks.size());
        parallel_for(tasks.size(), opt.jobs, [&](std::size_t i)
                     {
            const auto data = prepare_task(cfg, tasks[i]);
            const auto seg = parse_segment(data.split, segment);
            for (const auto &strategy : cfg.strategies)
            {
                const fs::path dir = run_dir(root, strategy, data.universe.name, data.seed);
                std::optional<TrainedModel> model;
                if (is_rl_strategy(strategy))
                {
                    const auto file = dir / "checkpoint.json";
                    if (!fs::exists(file))
                        throw Error("missing checkpoint '" + file.string() + "'; run train first");
                    model = model_from_json(nlohmann::json::parse(read_text(file)));
                }
                auto result = backtest(cfg, data, strategy, model ? &*model : nullptr, seg);
                write_backtest(dir / ("backtest_" + segment), result, data.tape);
                per_task[i].push_back(std::move(result));
            } });

        std::vector<BacktestResult> results;
        for (auto &v : per_task)
            for (auto &r : v)
                results.push_back(std::move(r));
        write_text(root / ("backtest_" + segment + "_summary.csv"), summary_csv(results));
        write_manifest(root, config_hash(cfg), "backtest", cfg.seeds, started);
        return results;
    }

    std::vector<double> default_sweep_grid()
    {
        return {0.0, 0.25, 0.5, 0.75, 1.0};
    }

    std::vector<SweepRow> cmd_sweep_beta(const RunConfig &config, const std::vector<double> &grid, const CommandOptions &opt)
    {
        if (grid.empty())
            throw ConfigError("the beta grid is empty");
        for (double b : grid)
        {
            if (!(b >= 0.0 && b <= 1.0))
                throw ConfigError(fmt::format("beta {} lies outside [0, 1]", b));
        }
        const RunConfig cfg = apply_overrides(config, opt);
        const fs::path root = cfg.out;
        const std::string started = utc_timestamp();
        fs::create_directories(root);
        write_text(root / "config.json", cfg.to_json().dump(2) + "\n");

        const std::string strategy = "scr_ppo_full";
        const auto tasks = make_tasks(cfg);
        // per task: one result per beta, grid order
        std::vector<std::vector<BacktestResult>> per_task(tasks.size());
        parallel_for(tasks.size(), opt.jobs, [&](std::size_t i)
                     {
            const auto data = prepare_task(cfg, tasks[i]);
            for (double beta : grid)
            {
                auto train = strategy_train_config(cfg, strategy, data.seed);
                train.beta_cf = beta;
                spdlog::info("sweep beta={} universe={} seed={}", beta, data.universe.name, data.seed);
                const auto model = train_model(cfg, data, train);
                const fs::path dir = run_dir(root / ("beta_" + beta_label(beta)), strategy, data.universe.name, data.seed);
                write_text(dir / "checkpoint.json", model_to_json(model).dump() + "\n");
                write_train_stats(dir / "train_stats.csv", model.history);
                auto result = backtest(cfg, data, strategy, &model, data.split.test);
                result.strategy = fmt::format("{}[beta={}]", strategy, beta_label(beta));
                write_backtest(dir, result, data.tape);
                per_task[i].push_back(std::move(result));
            } });

        std::vector<std::string> groups;
        for (const auto &v : per_task)
        {
            const auto g = tape::to_string(v.front().category);
            if (std::find(groups.begin(), groups.end(), g) == groups.end())
                groups.push_back(g);
        }

        std::vector<SweepRow> rows;
        std::ostringstream runs_csv;
        runs_csv << "beta,group,universe,seed,sharpe\n";
        for (std::size_t b = 0; b < grid.size(); ++b)
        {
            for (const auto &g : groups)
            {
                std::vector<double> sharpes;
                SweepRow row;
                row.beta = grid[b];
                row.group = g;
                for (std::size_t i = 0; i < tasks.size(); ++i)
                {
                    const auto &r = per_task[i][b];
                    if (tape::to_string(r.category) != g)
                        continue;
                    ++row.runs;
                    runs_csv << beta_label(grid[b]) << ',' << g << ',' << r.universe << ',' << r.seed << ','
                             << metrics::format_number(r.report.sharpe) << '\n';
                    if (r.report.sharpe)
                        sharpes.push_back(*r.report.sharpe);
                }
                if (!sharpes.empty())
                    row.sharpe = metrics::quartiles(sharpes);
                rows.push_back(row);
            }
        }

        std::ostringstream out;
        out << "beta,group,sharpe_median,sharpe_q1,sharpe_q3,runs\n";
        for (const auto &r : rows)
        {
            out << beta_label(r.beta) << ',' << r.group;
            if (r.sharpe)
                out << ',' << metrics::format_number(r.sharpe->median) << ',' << metrics::format_number(r.sharpe->q1)
                    << ',' << metrics::format_number(r.sharpe->q3);
            else
                out << ",NA,NA,NA";
            out << ',' << r.runs << '\n';
        }
        write_text(root / "sweep_beta.csv", out.str());
        write_text(root / "sweep_runs.csv", runs_csv.str());

        std::ostringstream best;
        best << "group,best_beta,sharpe_median,interior\n";
        const double lo = *std::min_element(grid.begin(), grid.end());
        const double hi = *std::max_element(grid.begin(), grid.end());
        for (const auto &g : groups)
        {
            const SweepRow *arg = nullptr;
            for (const auto &r : rows)
            {
                if (r.group == g && r.sharpe && (!arg || r.sharpe->median > arg->sharpe->median))
                    arg = &r;
            }
            if (arg)
                best << g << ',' << beta_label(arg->beta) << ',' << metrics::format_number(arg->sharpe->median) << ','
                     << (arg->beta > lo && arg->beta < hi ? "true" : "false") << '\n';
            else
                best << g << ",NA,NA,false\n";
        }
        write_text(root / "sweep_best.csv", best.str());
        write_manifest(root, config_hash(cfg), "sweep-beta", cfg.seeds, started);
        return rows;
    }

    theory::SuiteReport cmd_verify_theory(std::uint64_t seed, std::size_t models, const fs::path &out)
    {
        if (models == 0)
            throw ConfigError("--seeds must be >= 1");
        const std::string started = utc_timestamp();
        auto report = theory::verify_theory(seed, models);
        fs::create_directories(out);
        auto j = report.to_json();
        j["root_seed"] = seed;
        write_text(out / "theory_report.json", j.dump(2) + "\n");
        const nlohmann::json key{{"command", "verify-theory"}, {"seed", seed}, {"models", models}};
        write_manifest(out, sha256_hex(key.dump()), "verify-theory", {seed}, started);
        return report;
    }

    Band confidence_band(const std::vector<std::vector<double>> &series)
    {
        Band b;
        b.n = series.size();
        if (series.empty())
            return b;
        std::size_t len = series.front().size();
        for (const auto &s : series)
            len = std::min(len, s.size());
        for (std::size_t k = 0; k < len; ++k)
        {
            std::vector<double> col;
            for (const auto &s : series)
                col.push_back(s[k]);
            b.mean.push_back(mean_of(col));
            b.half_width.push_back(col.size() > 1 ? 1.96 * stddev_of(col) / std::sqrt(static_cast<double>(col.size())) : 0.0);
        }
        return b;
    }

    std::vector<double> cumulative_mean(const std::vector<double> &x)
    {
        std::vector<double> out;
        out.reserve(x.size());
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
        {
            s += x[i];
            out.push_back(s / static_cast<double>(i + 1));
        }
        return out;
    }

    void cmd_report(const fs::path &dir, const fs::path &out)
    {
        if (!fs::is_directory(dir))
            throw ConfigError("report directory '" + dir.string() + "' does not exist");
        const std::string started = utc_timestamp();
        std::vector<fs::path> run_dirs;
        for (const auto &e : fs::recursive_directory_iterator(dir))
        {
            if (e.is_regular_file() && e.path().filename() == "run.json" &&
                e.path().parent_path().filename().string().rfind("seed_", 0) == 0)
                run_dirs.push_back(e.path().parent_path());
        }
        std::sort(run_dirs.begin(), run_dirs.end());
        std::vector<BacktestResult> runs;
        for (const auto &d : run_dirs)
            runs.push_back(read_backtest(d));
        if (runs.empty())
            throw DataError("no runs found below '" + dir.string() + "'");
        std::sort(runs.begin(), runs.end(), [](const BacktestResult &a, const BacktestResult &b)
                  { return std::tie(a.strategy, a.universe, a.seed) < std::tie(b.strategy, b.universe, b.seed); });

        fs::create_directories(out);
        write_text(out / "results.csv", summary_csv(runs));
        std::set<std::string> categories;
        for (const auto &r : runs)
            categories.insert(tape::to_string(r.category));
        for (const auto &c : categories)
        {
            std::vector<BacktestResult> subset;
            for (const auto &r : runs)
            {
                if (tape::to_string(r.category) == c)
                    subset.push_back(r);
            }
            write_text(out / ("results_" + c + ".csv"), summary_csv(subset));
        }

        std::map<std::pair<std::string, std::string>, std::vector<const BacktestResult *>> by_key;
        for (const auto &r : runs)
            by_key[{r.strategy, r.universe}].push_back(&r);

        std::ostringstream gap_csv, resid_csv;
        gap_csv << "strategy,universe,step,j_scen_mean,j_scen_lo,j_scen_hi,j_real_mean,j_real_lo,j_real_hi,seeds\n";
        resid_csv << "strategy,universe,iteration,progress,resid_mean,resid_lo,resid_hi,seeds\n";
        for (const auto &[key, group] : by_key)
        {
            std::vector<std::vector<double>> scen, real, resid;
            for (const auto *r : group)
            {
                scen.push_back(cumulative_mean(r->scen_scores));
                real.push_back(cumulative_mean(r->returns));
                if (!r->resid_trace.empty())
                    resid.push_back(r->resid_trace);
            }
            const Band bs = confidence_band(scen), br = confidence_band(real);
            for (std::size_t k = 0; k < bs.mean.size(); ++k)
            {
                gap_csv << key.first << ',' << key.second << ',' << k;
                for (double v : {bs.mean[k], bs.mean[k] - bs.half_width[k], bs.mean[k] + bs.half_width[k], br.mean[k],
                                 br.mean[k] - br.half_width[k], br.mean[k] + br.half_width[k]})
                    gap_csv << ',' << metrics::format_number(v);
                gap_csv << ',' << bs.n << '\n';
            }
            if (resid.empty())
                continue;
            const Band bres = confidence_band(resid);
            const std::size_t K = bres.mean.size();
            for (std::size_t k = 0; k < K; ++k)
            {
                const double progress = K > 1 ? static_cast<double>(k) / static_cast<double>(K - 1) : 0.0;
                resid_csv << key.first << ',' << key.second << ',' << k << ',' << metrics::format_number(progress);
                for (double v : {bres.mean[k], bres.mean[k] - bres.half_width[k], bres.mean[k] + bres.half_width[k]})
                    resid_csv << ',' << metrics::format_number(v);
                resid_csv << ',' << bres.n << '\n';
            }
        }
        write_text(out / "gap_curves.csv", gap_csv.str());
        write_text(out / "residual_curves.csv", resid_csv.str());

        std::set<std::uint64_t> seeds;
        for (const auto &r : runs)
            seeds.insert(r.seed);
        std::string listing;
        for (const auto &d : run_dirs)
            listing += fs::relative(d, dir).generic_string() + "\n";
        write_manifest(out, sha256_hex(listing), "report", std::vector<std::uint64_t>(seeds.begin(), seeds.end()), started);
    }

    void cmd_synth_tape(const RunConfig &cfg, std::uint64_t seed, const fs::path &out)
    {
        if (!cfg.tape.synthetic)
            throw ConfigError("synth-tape needs a config with a tape.synthetic section");
        const std::string started = utc_timestamp();
        auto syn = *cfg.tape.synthetic;
        if (!cfg.tape.synthetic_seed_fixed)
            syn.seed = substream_seed(seed, "tape");
        const auto generated = tape::generate_synthetic_tape(syn);
        fs::create_directories(out);
        tape::write_tape_csv(generated.tape, (out / "tape.csv").string());
        std::ostringstream reg;
        reg << "date,regime,anomaly\n";
        for (std::size_t t = 0; t < generated.tape.days(); ++t)
            reg << tape::format_date(generated.tape.dates[t]) << ',' << generated.regime_path[t] << ','
                << (generated.anomaly_day[t] ? 1 : 0) << '\n';
        write_text(out / "regimes.csv", reg.str());
        write_manifest(out, config_hash(cfg), "synth-tape", {seed}, started);
    }
}
