#include "scr/harness.hpp"

#include "scr/baselines.hpp"
#include "scr/env.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace scr::cli
{
    namespace fs = std::filesystem;

    SourceData load_source(const RunConfig &cfg, std::uint64_t seed)
    {
        SourceData out;
        if (cfg.tape.synthetic)
        {
            auto syn = *cfg.tape.synthetic;
            if (!cfg.tape.synthetic_seed_fixed)
                syn.seed = substream_seed(seed, "tape");
            auto generated = tape::generate_synthetic_tape(syn);
            out.tape = std::move(generated.tape);
            out.regime_path = std::move(generated.regime_path);
            out.anomaly_day = std::move(generated.anomaly_day);
        }
        else
        {
            out.tape = tape::load_tape(cfg.tape.path, cfg.tape.schema);
        }
        out.split = cfg.split.resolve(out.tape);
        tape::standardize_macro(out.tape, out.split.train.end);
        return out;
    }

    std::vector<tape::Universe> resolve_universes(const RunConfig &cfg, const tape::ReturnTape &tape)
    {
        if (!cfg.universes.empty())
            return cfg.universes;
        return {tape::Universe{"all", tape.asset_ids, tape::UniverseCategory::General}};
    }

    UniverseData prepare_universe(const RunConfig &cfg, const SourceData &source, const tape::Universe &universe,
                                  std::uint64_t seed)
    {
        UniverseData d;
        d.universe = universe;
        d.seed = seed;
        d.tape = tape::select_universe(source.tape, universe);
        d.split = source.split;
        const auto pipeline = scenario::ScrPipeline::fit(d.tape, d.split.train.end, cfg.scr, seed);
        d.run = pipeline.run(d.tape);
        // return rows realized inside the train segment
        const auto rows = static_cast<Eigen::Index>(d.split.train.end - 1);
        d.train_mean = d.tape.returns.topRows(rows).colwise().mean().transpose();
        return d;
    }

    TrainedModel train_model(const RunConfig &cfg, const UniverseData &data, const std::string &strategy)
    {
        return train_model(cfg, data, strategy_train_config(cfg, strategy, data.seed));
    }

    TrainedModel train_model(const RunConfig &cfg, const UniverseData &data, const agent::TrainConfig &train)
    {
        TrainedModel m;
        m.config = train;
        agent::Trainer trainer(data.tape, data.run, cfg.env, m.config, data.split.train.begin, data.split.train.end);
        m.history = trainer.train();
        m.policy = trainer.policy();
        m.checkpoint = trainer.checkpoint();
        return m;
    }

    namespace
    {
        nlohmann::json stats_to_json(const agent::IterationStats &s)
        {
            return {{"iteration", s.iteration},
                    {"mean_reward", s.mean_reward},
                    {"mean_realized", s.mean_realized},
                    {"mean_turnover", s.mean_turnover},
                    {"resid_l2", s.resid_l2},
                    {"actor_loss", s.update.actor_loss},
                    {"critic_loss", s.update.critic_loss},
                    {"entropy", s.update.entropy},
                    {"approx_kl", s.update.approx_kl},
                    {"clip_fraction", s.update.clip_fraction},
                    {"actor_grad_norm", s.update.actor_grad_norm},
                    {"critic_grad_norm", s.update.critic_grad_norm}};
        }

        agent::IterationStats stats_from_json(const nlohmann::json &j)
        {
            agent::IterationStats s;
            s.iteration = j.at("iteration").get<std::size_t>();
            s.mean_reward = j.at("mean_reward").get<double>();
            s.mean_realized = j.at("mean_realized").get<double>();
            s.mean_turnover = j.at("mean_turnover").get<double>();
            s.resid_l2 = j.at("resid_l2").get<double>();
            s.update.actor_loss = j.at("actor_loss").get<double>();
            s.update.critic_loss = j.at("critic_loss").get<double>();
            s.update.entropy = j.at("entropy").get<double>();
            s.update.approx_kl = j.at("approx_kl").get<double>();
            s.update.clip_fraction = j.at("clip_fraction").get<double>();
            s.update.actor_grad_norm = j.at("actor_grad_norm").get<double>();
            s.update.critic_grad_norm = j.at("critic_grad_norm").get<double>();
            return s;
        }

        std::vector<std::string> split_line(const std::string &line)
        {
            std::vector<std::string> out;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ','))
                out.push_back(cell);
            if (!line.empty() && line.back() == ',')
                out.emplace_back();
            return out;
        }

        std::optional<double> parse_number(const std::string &s)
        {
            if (s == "NA")
                return std::nullopt;
            return std::stod(s);
        }

        Vec classical_weights(const RunConfig &cfg, const std::string &strategy, const tape::ReturnTape &tape,
                              std::size_t t)
        {
            const auto &c = cfg.env.constraints;
            const std::size_t n = tape.assets();
            baselines::AllocatorSpec spec = cfg.allocator;
            spec.kind = strategy == "1/N" ? baselines::AllocatorKind::EqualWeight : baselines::parse_allocator(strategy);
            if (spec.kind != baselines::AllocatorKind::EqualWeight)
            {
                // early days use the history available so far
                spec.lookback = std::min(spec.lookback, t);
                if (spec.lookback < n + 2)
                    spec.kind = baselines::AllocatorKind::EqualWeight;
            }
            return baselines::allocate(spec, tape, t, c);
        }
    }

    nlohmann::json model_to_json(const TrainedModel &m)
    {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto &s : m.history)
            hist.push_back(stats_to_json(s));
        return {{"trainer", m.checkpoint}, {"history", hist}};
    }

    TrainedModel model_from_json(const nlohmann::json &j)
    {
        TrainedModel m;
        m.checkpoint = j.at("trainer");
        m.config = agent::TrainConfig::from_json(m.checkpoint.at("config"));
        agent::from_json(m.checkpoint.at("policy"), m.policy);
        for (const auto &s : j.at("history"))
            m.history.push_back(stats_from_json(s));
        return m;
    }

    BacktestResult backtest(const RunConfig &cfg, const UniverseData &data, const std::string &strategy,
                            const TrainedModel *model, tape::Segment seg)
    {
        const bool rl = is_rl_strategy(strategy);
        if (rl && model == nullptr)
            throw Error("strategy '" + strategy + "' needs a trained model");
        if (seg.end > data.tape.days() || seg.size() < 2)
            throw DataError("backtest segment needs at least two days inside the tape");

        const std::size_t N = data.tape.assets();
        const auto &c = cfg.env.constraints;
        c.validate(N);

        BacktestResult r;
        r.strategy = strategy;
        r.universe = data.universe.name;
        r.category = data.universe.category;
        r.seed = data.seed;

        std::optional<agent::FeatureBuilder> features;
        agent::RewardSource source = agent::RewardSource::Scenario;
        std::size_t boot_window = 0;
        if (rl)
        {
            features.emplace(data.run, model->config.scenario_features);
            source = model->config.reward_source;
            boot_window = model->config.bootstrap_window;
            for (const auto &s : model->history)
                r.resid_trace.push_back(s.resid_l2);
        }

        Vec w_prev = Vec::Constant(static_cast<Eigen::Index>(N), 1.0 / static_cast<double>(N));
        env::State phi;
        if (rl)
            phi = env::initial_state(seg.begin, features->exogenous(seg.begin), N);

        for (std::size_t t = seg.begin; t + 1 < seg.end; ++t)
        {
            Vec w;
            if (rl)
                w = agent::policy_weights(model->policy, features->features(phi), phi.h.w_prev, c);
            else
                w = env::project(classical_weights(cfg, strategy, data.tape, t), w_prev, c);

            const Vec x = data.tape.returns.row(static_cast<Eigen::Index>(t)).transpose();
            const double ret = env::net_return(w, x, w_prev, cfg.env.cost_rate);

            Vec model_mean;
            const auto &day = data.run.days[t];
            if (rl && source == agent::RewardSource::Realized)
                model_mean = data.train_mean;
            else if (rl && source == agent::RewardSource::Bootstrap && t >= boot_window)
                model_mean = data.tape.returns.middleRows(static_cast<Eigen::Index>(t - boot_window),
                                                          static_cast<Eigen::Index>(boot_window))
                                 .colwise()
                                 .mean()
                                 .transpose();
            else if (day.valid)
                model_mean = day.dist.mean();
            else
                model_mean = data.train_mean;

            r.days.push_back(t);
            r.returns.push_back(ret);
            r.scen_scores.push_back(w.dot(model_mean));
            r.weights.push_back(w);

            if (rl)
                phi = env::upd(phi, w, x, features->exogenous(t + 1), cfg.env);
            w_prev = w;
        }

        r.report = metrics::evaluate(r.returns, r.weights);
        r.report.gap_final = metrics::gap_final(r.scen_scores, r.returns);
        if (!r.resid_trace.empty())
            r.report.resid_auc = metrics::resid_auc(r.resid_trace);
        return r;
    }

    std::string safe_name(const std::string &name)
    {
        std::string out = name;
        for (auto &ch : out)
        {
            if (ch == '/' || ch == '\\' || ch == ' ')
                ch = '_';
        }
        return out;
    }

    fs::path run_dir(const fs::path &root, const std::string &strategy, const std::string &universe, std::uint64_t seed)
    {
        return root / safe_name(strategy) / safe_name(universe) / ("seed_" + std::to_string(seed));
    }

    void write_text(const fs::path &file, const std::string &text)
    {
        if (file.has_parent_path())
            fs::create_directories(file.parent_path());
        std::ofstream out(file, std::ios::binary);
        if (!out)
            throw Error("cannot write '" + file.string() + "'");
        out << text;
        if (!out)
            throw Error("write failed for '" + file.string() + "'");
    }

    std::string read_text(const fs::path &file)
    {
        std::ifstream in(file, std::ios::binary);
        if (!in)
            throw Error("cannot read '" + file.string() + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    void write_train_stats(const fs::path &file, const std::vector<agent::IterationStats> &history)
    {
        std::ostringstream out;
        out << "iteration,mean_reward,mean_realized,mean_turnover,resid_l2,actor_loss,critic_loss,entropy,approx_kl,"
               "clip_fraction,actor_grad_norm,critic_grad_norm\n";
        for (const auto &s : history)
        {
            out << s.iteration;
            for (double v : {s.mean_reward, s.mean_realized, s.mean_turnover, s.resid_l2, s.update.actor_loss,
                             s.update.critic_loss, s.update.entropy, s.update.approx_kl, s.update.clip_fraction,
                             s.update.actor_grad_norm, s.update.critic_grad_norm})
                out << ',' << metrics::format_number(v);
            out << '\n';
        }
        write_text(file, out.str());
    }

    void write_backtest(const fs::path &dir, const BacktestResult &r, const tape::ReturnTape &tape)
    {
        {
            std::ostringstream out;
            out << "metric,value\n";
            for (const auto &name : metrics::metric_names())
                out << name << ',' << metrics::format_number(metrics::metric_value(r.report, name)) << '\n';
            write_text(dir / "metrics.csv", out.str());
        }
        const auto wealth = metrics::wealth_curve(r.returns);
        {
            std::ostringstream out;
            out << "t,date,realized,scen_score,wealth\n";
            for (std::size_t i = 0; i < r.days.size(); ++i)
            {
                out << r.days[i] << ',' << tape::format_date(tape.dates[r.days[i] + 1]) << ','
                    << metrics::format_number(r.returns[i]) << ',' << metrics::format_number(r.scen_scores[i]) << ','
                    << metrics::format_number(wealth[i + 1]) << '\n';
            }
            write_text(dir / "daily.csv", out.str());
        }
        {
            std::ostringstream out;
            out << "date,wealth\n";
            if (!r.days.empty())
                out << tape::format_date(tape.dates[r.days.front()]) << ',' << metrics::format_number(wealth[0]) << '\n';
            for (std::size_t i = 0; i < r.days.size(); ++i)
                out << tape::format_date(tape.dates[r.days[i] + 1]) << ',' << metrics::format_number(wealth[i + 1]) << '\n';
            write_text(dir / "wealth.csv", out.str());
        }
        {
            std::ostringstream out;
            out << "t,date";
            for (const auto &id : tape.asset_ids)
                out << ',' << id;
            out << '\n';
            for (std::size_t i = 0; i < r.days.size(); ++i)
            {
                out << r.days[i] << ',' << tape::format_date(tape.dates[r.days[i]]);
                for (Eigen::Index j = 0; j < r.weights[i].size(); ++j)
                    out << ',' << metrics::format_number(r.weights[i](j));
                out << '\n';
            }
            write_text(dir / "weights.csv", out.str());
        }
        nlohmann::json info{{"strategy", r.strategy},
                            {"universe", r.universe},
                            {"category", tape::to_string(r.category)},
                            {"seed", r.seed},
                            {"resid_l2", r.resid_trace}};
        write_text(dir / "run.json", info.dump(2) + "\n");
    }

    BacktestResult read_backtest(const fs::path &dir)
    {
        BacktestResult r;
        const auto info = nlohmann::json::parse(read_text(dir / "run.json"));
        r.strategy = info.at("strategy").get<std::string>();
        r.universe = info.at("universe").get<std::string>();
        r.category = tape::parse_category(info.at("category").get<std::string>());
        r.seed = info.at("seed").get<std::uint64_t>();
        r.resid_trace = info.at("resid_l2").get<std::vector<double>>();

        std::istringstream daily(read_text(dir / "daily.csv"));
        std::string line;
        std::getline(daily, line);
        while (std::getline(daily, line))
        {
            if (line.empty())
                continue;
            const auto cells = split_line(line);
            if (cells.size() != 5)
                throw DataError("malformed daily.csv row in " + dir.string());
            r.days.push_back(static_cast<std::size_t>(std::stoull(cells[0])));
            r.returns.push_back(std::stod(cells[2]));
            r.scen_scores.push_back(std::stod(cells[3]));
        }

        std::istringstream met(read_text(dir / "metrics.csv"));
        std::getline(met, line);
        while (std::getline(met, line))
        {
            if (line.empty())
                continue;
            const auto cells = split_line(line);
            if (cells.size() != 2)
                throw DataError("malformed metrics.csv row in " + dir.string());
            const auto v = parse_number(cells[1]);
            if (cells[0] == "sharpe")
                r.report.sharpe = v;
            else if (cells[0] == "calmar")
                r.report.calmar = v;
            else if (cells[0] == "ann_vol")
                r.report.ann_vol = v.value_or(0.0);
            else if (cells[0] == "max_dd")
                r.report.max_dd = v.value_or(0.0);
            else if (cells[0] == "turnover")
                r.report.turnover = v.value_or(0.0);
            else if (cells[0] == "gap_final")
                r.report.gap_final = v;
            else if (cells[0] == "resid_auc")
                r.report.resid_auc = v;
        }
        return r;
    }

    void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)> &task)
    {
        std::vector<std::exception_ptr> errors(n);
        std::atomic<std::size_t> next{0};
        auto worker = [&]
        {
            for (std::size_t i = next++; i < n; i = next++)
            {
                try
                {
                    task(i);
                }
                catch (...)
                {
                    errors[i] = std::current_exception();
                }
            }
        };
        const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n));
        if (threads == 1)
            worker();
        else
        {
            std::vector<std::jthread> pool;
            for (std::size_t k = 0; k < threads; ++k)
                pool.emplace_back(worker);
        }
        for (const auto &e : errors)
        {
            if (e)
                std::rethrow_exception(e);
        }
    }
}
