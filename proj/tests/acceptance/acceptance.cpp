// Acceptance checks: one PASS/FAIL line per criterion.
// usage: acceptance <source-dir> <work-dir> [criterion ...]

#include "scr/cli.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <string_view>

using namespace scr;
namespace fs = std::filesystem;

namespace
{
    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    using Clock = std::chrono::steady_clock;

    double seconds_since(Clock::time_point t0)
    {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }

    Vec random_vec(Rng &rng, Eigen::Index n, double scale)
    {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v(i) = scale * standard_normal(rng);
        return v;
    }

    Mat random_mat(Rng &rng, Eigen::Index r, Eigen::Index c, double scale)
    {
        Mat m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m(i) = scale * standard_normal(rng);
        return m;
    }

    double rel_error(double a, double b)
    {
        return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
    }

    double median(std::vector<double> v)
    {
        return metrics::quartiles(v).median;
    }

    const theory::SuiteReport &theory_suite(double &elapsed)
    {
        static double seconds = 0.0;
        static const theory::SuiteReport report = []
        {
            const auto t0 = Clock::now();
            auto r = theory::verify_theory(0, 100);
            seconds = seconds_since(t0);
            return r;
        }();
        elapsed = seconds;
        return report;
    }

    Outcome lemma_identity()
    {
        double elapsed = 0.0;
        const auto &suite = theory_suite(elapsed);
        double worst = 0.0;
        for (const auto &m : suite.models)
            worst = std::max(worst, m.lemma_residual);
        const bool ok = suite.models.size() == 100 && worst < 1e-12 && elapsed < 10.0;
        return {ok, fmt::format("100 models, max residual {:.3g}, suite {:.2f}s", worst, elapsed)};
    }

    Outcome gap_and_bias_bounds()
    {
        double elapsed = 0.0;
        const auto &suite = theory_suite(elapsed);
        std::size_t gap = 0, bias = 0, contraction = 0;
        double worst_ratio = 0.0;
        for (const auto &m : suite.models)
        {
            gap += m.gap.pass && m.gap_scen_value.pass ? 0 : 1;
            bias += m.bias.pass ? 0 : 1;
            contraction += m.contraction_pass ? 0 : 1;
            worst_ratio = std::max({worst_ratio, m.gap.ratio(), m.bias.ratio()});
        }
        const bool ok = gap == 0 && bias == 0 && contraction == 0 && elapsed < 60.0;
        return {ok, fmt::format("gap violations {}, bias violations {}, contraction failures {}, max lhs/rhs {:.3f}", gap,
                                bias, contraction, worst_ratio)};
    }

    Outcome mixing_bound()
    {
        double elapsed = 0.0;
        const auto &suite = theory_suite(elapsed);
        std::size_t violations = 0, misses = 0, pooled_misses = 0;
        for (const auto &m : suite.models)
        {
            violations += m.mixing.violations;
            misses += m.mixing.argmin_misses;
            pooled_misses += std::abs(m.mixing.rhs_argmin_pooled - m.mixing.beta_star_pooled) <= 0.1 + 1e-12 ? 0 : 1;
            pooled_misses += m.mixing.betas.size() == 11 ? 0 : 1;
        }
        const bool ok = violations == 0 && misses == 0 && pooled_misses == 0 && elapsed < 120.0;
        return {ok, fmt::format("11-point grid, MSE > RHS in {} cases, argmin misses {} (pooled {})", violations, misses,
                                pooled_misses)};
    }

    tape::SyntheticTapeConfig small_tape(std::uint64_t seed, std::size_t days, std::size_t assets)
    {
        tape::SyntheticTapeConfig cfg;
        cfg.n_assets = assets;
        cfg.n_days = days;
        cfg.seed = seed;
        cfg.extra_macro = 1;
        const auto n = static_cast<Eigen::Index>(assets);
        const Mat cov = Mat::Identity(n, n) * 1e-4;
        cfg.regimes.push_back({Vec::Constant(n, 0.001), cov, 30.0});
        cfg.regimes.push_back({Vec::Constant(n, -0.002), cov * 2.0, 15.0});
        return cfg;
    }

    agent::TrainConfig quick_train(std::uint64_t seed)
    {
        agent::TrainConfig c;
        c.seed = seed;
        c.hidden = 8;
        c.samples = 8;
        c.iterations = 3;
        c.ppo.epochs = 2;
        c.ppo.minibatch = 64;
        return c;
    }

    bool same_stats(const agent::IterationStats &a, const agent::IterationStats &b)
    {
        return a.mean_reward == b.mean_reward && a.mean_realized == b.mean_realized && a.resid_l2 == b.resid_l2 &&
               a.mean_turnover == b.mean_turnover && a.update.actor_loss == b.update.actor_loss &&
               a.update.critic_loss == b.update.critic_loss && a.update.entropy == b.update.entropy &&
               a.update.approx_kl == b.update.approx_kl && a.update.clip_fraction == b.update.clip_fraction;
    }

    Outcome target_degeneracies()
    {
        const auto synth = tape::generate_synthetic_tape(small_tape(31, 400, 4));
        const auto pipe = scenario::ScrPipeline::fit(synth.tape, 260, {}, 7);
        const auto run = pipe.run(synth.tape);
        const env::EnvParams env;
        const auto grid = baselines::baseline_rl_configs(quick_train(5));
        const auto pick = [&](const std::string &name)
        {
            return *std::find_if(grid.begin(), grid.end(), [&](const auto &c) { return c.name == name; });
        };

        auto full = pick("scr_ppo_full");
        full.beta_cf = 0.0;
        agent::Trainer a(synth.tape, run, env, full, 0, 260);
        agent::Trainer b(synth.tape, run, env, pick("scr_ppo_nocf"), 0, 260);
        a.train();
        b.train();
        bool identical = a.history().size() == b.history().size() && a.policy().params() == b.policy().params() &&
                         a.critic().net.params() == b.critic().net.params();
        for (std::size_t i = 0; identical && i < a.history().size(); ++i)
            identical = same_stats(a.history()[i], b.history()[i]);
        for (std::size_t i = 0; identical && i < a.last_rollout().size(); ++i)
        {
            const auto &x = a.last_rollout()[i];
            const auto &y = b.last_rollout()[i];
            identical = x.reward == y.reward && x.target == y.target && x.weights == y.weights && x.advantage == y.advantage;
        }

        auto one = pick("scr_ppo_full");
        one.beta_cf = 1.0;
        agent::Trainer c(synth.tape, run, env, one, 0, 260);
        double worst = 0.0;
        std::size_t logged = 0;
        for (std::size_t it = 0; it < one.iterations; ++it)
        {
            c.iterate();
            for (const auto &r : c.last_rollout())
            {
                const double y = r.reward + one.delta * r.value_cf;
                worst = std::max(worst, std::abs(r.target - y) / std::max(1.0, std::abs(y)));
                ++logged;
            }
        }
        const bool ok = identical && worst <= 4.0 * std::numeric_limits<double>::epsilon();
        return {ok, fmt::format("beta=0 vs NoCF bit-identical: {}; beta=1 max target error {:.3g} over {} records",
                                identical ? "yes" : "no", worst, logged)};
    }

    Outcome oracle_equivalences()
    {
        Rng rng(2024);
        // GAE against the direct sum
        double gae_err = 0.0;
        for (int trial = 0; trial < 40; ++trial)
        {
            const Eigen::Index T = 1 + trial * 3;
            const Vec r = random_vec(rng, T, 1.0);
            const Vec v = random_vec(rng, T + 1, 1.0);
            const double delta = 0.5 + 0.49 * uniform01(rng);
            const double lambda = uniform01(rng);
            const Vec a = agent::gae(r, v, delta, lambda);
            for (Eigen::Index t = 0; t < T; ++t)
            {
                double s = 0.0;
                for (Eigen::Index l = 0; t + l < T; ++l)
                    s += std::pow(delta * lambda, static_cast<double>(l)) * (r(t + l) + delta * v(t + l + 1) - v(t + l));
                gae_err = std::max(gae_err, std::abs(a(t) - s));
            }
        }

        // drawdown against the double loop
        double dd_err = 0.0;
        for (int trial = 0; trial < 40; ++trial)
        {
            std::vector<double> x(static_cast<std::size_t>(5 + trial * 7));
            for (auto &v : x)
                v = 0.03 * standard_normal(rng);
            std::vector<double> w{1.0};
            for (double v : x)
                w.push_back(w.back() * (1.0 + v));
            double dd = 0.0;
            for (std::size_t j = 0; j < w.size(); ++j)
            {
                for (std::size_t i = 0; i <= j; ++i)
                    dd = std::max(dd, 1.0 - w[j] / w[i]);
            }
            dd_err = std::max(dd_err, std::abs(metrics::max_drawdown(x) - dd));
        }

        // minimum variance against the closed form on interior instances
        double gmv_err = 0.0;
        for (int trial = 0; trial < 20; ++trial)
        {
            const Mat A = random_mat(rng, 5, 5, 1.0);
            const Mat S = A * A.transpose() + Mat::Identity(5, 5);
            const Vec x = S.ldlt().solve(Vec::Ones(5));
            const Vec closed = x / x.sum();
            gmv_err = std::max(gmv_err, (baselines::min_variance(S, -10.0, 10.0) - closed).cwiseAbs().maxCoeff());
        }

        // two-asset projection against a 1e-3 grid
        double proj_err = 0.0;
        for (int trial = 0; trial < 200; ++trial)
        {
            const double lo = trial % 3 == 0 ? 0.1 : 0.0;
            const double hi = trial % 2 == 0 ? 0.8 : 1.0;
            const Vec a = random_vec(rng, 2, 2.0);
            Vec best(2);
            double best_d = std::numeric_limits<double>::infinity();
            for (int i = 0; i <= 1000; ++i)
            {
                Vec w(2);
                w << i * 1e-3, 1.0 - i * 1e-3;
                if (w(0) < lo - 1e-12 || w(0) > hi + 1e-12 || w(1) < lo - 1e-12 || w(1) > hi + 1e-12)
                    continue;
                const double d = (w - a).squaredNorm();
                if (d < best_d)
                {
                    best_d = d;
                    best = w;
                }
            }
            proj_err = std::max(proj_err, (env::project_box_simplex(a, lo, hi) - best).lpNorm<Eigen::Infinity>());
        }

        // network gradients against central differences
        const auto policy = agent::make_policy(5, 3, 7, -1.0, rng);
        const auto critic = agent::make_critic(5, 7, rng);
        agent::Batch batch;
        batch.features = random_mat(rng, 12, 5, 1.0);
        batch.actions = random_mat(rng, 12, 3, 0.3);
        batch.log_prob_old = Vec(12);
        for (Eigen::Index i = 0; i < 12; ++i)
        {
            const Vec mu = policy.mean.forward(batch.features.row(i)).row(0).transpose();
            batch.log_prob_old(i) =
                agent::gaussian_log_prob(batch.actions.row(i).transpose(), mu, policy.log_std) + 0.05 * standard_normal(rng);
        }
        batch.advantages = random_vec(rng, 12, 1.0);
        batch.targets = random_vec(rng, 12, 1.0);
        std::vector<std::size_t> idx(12);
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = i;
        agent::PpoConfig ppo;
        ppo.clip = 0.5;
        ppo.entropy_coef = 0.01;
        const double h = 1e-6;
        double grad_err = 0.0;
        Vec g;
        agent::actor_loss(policy, batch, idx, ppo, &g);
        const Vec p0 = policy.params();
        for (Eigen::Index k = 0; k < p0.size(); ++k)
        {
            auto plus = policy, minus = policy;
            Vec pp = p0, pm = p0;
            pp(k) += h;
            pm(k) -= h;
            plus.set_params(pp);
            minus.set_params(pm);
            const double fd =
                (agent::actor_loss(plus, batch, idx, ppo, nullptr) - agent::actor_loss(minus, batch, idx, ppo, nullptr)) / (2 * h);
            grad_err = std::max(grad_err, rel_error(fd, g(k)));
        }
        Vec gc;
        agent::critic_loss(critic, batch.features, batch.targets, idx, &gc);
        const Vec c0 = critic.net.params();
        for (Eigen::Index k = 0; k < c0.size(); ++k)
        {
            auto plus = critic, minus = critic;
            Vec pp = c0, pm = c0;
            pp(k) += h;
            pm(k) -= h;
            plus.net.set_params(pp);
            minus.net.set_params(pm);
            const double fd = (agent::critic_loss(plus, batch.features, batch.targets, idx, nullptr) -
                               agent::critic_loss(minus, batch.features, batch.targets, idx, nullptr)) /
                              (2 * h);
            grad_err = std::max(grad_err, rel_error(fd, gc(k)));
        }

        const bool ok = gae_err <= 1e-10 && dd_err <= 1e-12 && gmv_err <= 1e-3 && proj_err <= 1e-3 && grad_err <= 1e-4;
        return {ok, fmt::format("gae {:.2g}, max_dd {:.2g}, gmv {:.2g}, projection {:.2g}, gradients {:.2g} (rel)", gae_err,
                                dd_err, gmv_err, proj_err, grad_err)};
    }

    Outcome leak_probes()
    {
        tape::SyntheticTapeConfig cfg = small_tape(8, 420, 4);
        cfg.anomalies.push_back({250, 5, 4.0, 0.0});
        const auto synth = tape::generate_synthetic_tape(cfg);
        const auto &tape = synth.tape;
        scenario::ScrConfig scr;
        scr.k = 8;
        const auto pipe = scenario::ScrPipeline::fit(tape, 240, scr, 11);
        const auto clean = pipe.run(tape);
        const env::EnvParams env;
        std::size_t compared = 0, mismatches = 0;
        std::map<std::string, std::size_t> failed_parts;
        const auto expect = [&](bool same, const char *what)
        {
            ++compared;
            mismatches += same ? 0 : 1;
            if (!same)
                ++failed_parts[what];
        };

        for (std::size_t t0 : {150u, 260u, 330u})
        {
            auto bad = tape;
            const auto keep = static_cast<Eigen::Index>(t0 + 1);
            bad.prices.bottomRows(bad.prices.rows() - keep).setConstant(1e6);
            bad.returns = tape::simple_returns(bad.prices);
            bad.macro.bottomRows(bad.macro.rows() - keep).setConstant(1e6);
            const auto run = pipe.run(bad);
            for (std::size_t t = 0; t <= t0; ++t)
            {
                const auto &a = clean.days[t];
                const auto &b = run.days[t];
                expect(a.shock == b.shock && a.context.g == b.context.g && a.valid == b.valid, "shock/gate");
                expect(a.chi == b.chi, "chi");
                if (a.has_descriptor)
                    expect(a.psi.head(a.macro_z.size()) == b.psi.head(b.macro_z.size()) &&
                           a.psi.tail(a.vol.size()) == b.psi.tail(b.vol.size()),
                           "psi");
                if (a.valid)
                    expect(a.dist.sources == b.dist.sources && a.dist.atoms == b.dist.atoms, "retrieval");
            }

            // training rollouts on the poisoned tape agree through t0
            for (auto source : {agent::RewardSource::Scenario, agent::RewardSource::Realized})
            {
                auto tc = quick_train(6);
                tc.reward_source = source;
                tc.iterations = 1;
                agent::Trainer ref(tape, clean, env, tc, 0, 420);
                agent::Trainer probe(bad, run, env, tc, 0, 420);
                ref.iterate();
                probe.iterate();
                for (std::size_t i = 0; i < ref.last_rollout().size(); ++i)
                {
                    const auto &x = ref.last_rollout()[i];
                    const auto &y = probe.last_rollout()[i];
                    if (x.t + 1 > t0)
                        break;
                    expect(x.features == y.features && x.weights == y.weights && x.reward == y.reward &&
                           x.realized == y.realized && x.value_next == y.value_next && x.value_cf == y.value_cf &&
                           x.target == y.target,
                           "training");
                }
            }
        }
        std::string parts;
        for (const auto &[what, n] : failed_parts)
            parts += fmt::format(" {}={}", what, n);
        return {mismatches == 0 && compared > 0, fmt::format("{} comparisons, {} mismatches{}", compared, mismatches, parts)};
    }

    Outcome shock_discovery()
    {
        const std::vector<std::size_t> starts{700, 850};
        const std::size_t train_end = 600, length = 5;
        std::size_t flagged = 0, anomaly_days = 0, false_pos = 0, normal_days = 0;
        std::size_t worst_block = length;
        for (std::uint64_t seed = 0; seed < 20; ++seed)
        {
            tape::SyntheticTapeConfig cfg;
            cfg.n_assets = 10;
            cfg.n_days = 1000;
            cfg.seed = seed;
            cfg.extra_macro = 2;
            cfg.macro_noise = 0.3;
            const Mat cov = Mat::Constant(10, 10, 0.3e-4) + Mat::Identity(10, 10) * 0.7e-4;
            cfg.regimes.push_back({Vec::Constant(10, 0.0005), cov, 40.0});
            cfg.regimes.push_back({Vec::Constant(10, -0.0005), cov, 40.0});
            for (auto s : starts)
                cfg.anomalies.push_back({s, length, 3.0, 0.0});
            auto synth = tape::generate_synthetic_tape(cfg);
            tape::standardize_macro(synth.tape, train_end);
            const auto pipe = scenario::ScrPipeline::fit(synth.tape, train_end, {}, seed);
            const auto run = pipe.run(synth.tape);
            for (auto s : starts)
            {
                std::size_t hits = 0;
                for (std::size_t t = s; t < s + length; ++t)
                    hits += run.days[t].shock ? 1 : 0;
                flagged += hits;
                anomaly_days += length;
                worst_block = std::min(worst_block, hits);
            }
            for (std::size_t t = train_end; t < synth.tape.returns.rows(); ++t)
            {
                if (synth.anomaly_day[t] || !run.days[t].has_descriptor)
                    continue;
                ++normal_days;
                false_pos += run.days[t].shock ? 1 : 0;
            }
        }
        const double recall = static_cast<double>(flagged) / static_cast<double>(anomaly_days);
        const double fpr = static_cast<double>(false_pos) / static_cast<double>(normal_days);
        return {recall >= 0.8 && fpr <= 0.02,
                fmt::format("20 seeds, recall {:.3f} (worst block {}/5), false-positive rate {:.4f} over {} normal days", recall,
                            worst_block, fpr, normal_days)};
    }

    std::map<std::string, std::vector<double>> collect(const std::vector<cli::BacktestResult> &runs,
                                                        std::optional<double> metrics::MetricsReport::*field)
    {
        std::map<std::string, std::vector<double>> out;
        for (const auto &r : runs)
        {
            if (const auto v = r.report.*field)
                out[r.strategy].push_back(*v);
        }
        return out;
    }

    Outcome directional_benchmark(const fs::path &source, const fs::path &work)
    {
        const auto t0 = Clock::now();
        auto cfg = cli::load_run_config((source / "configs" / "benchmark.json").string());
        cfg.strategies = {"1/N", "ppo_replay", "scr_ppo_nocf", "scr_ppo_full"};
        cli::CommandOptions opt;
        opt.out = work / "benchmark";
        const auto runs = cli::cmd_train(cfg, opt);
        const double elapsed = seconds_since(t0);

        const auto sharpe = collect(runs, &metrics::MetricsReport::sharpe);
        const auto gap = collect(runs, &metrics::MetricsReport::gap_final);
        const auto auc = collect(runs, &metrics::MetricsReport::resid_auc);
        std::map<std::string, std::vector<double>> dd;
        for (const auto &r : runs)
            dd[r.strategy].push_back(r.report.max_dd);
        const auto med = [](const std::map<std::string, std::vector<double>> &m, const std::string &k)
        { return m.contains(k) && !m.at(k).empty() ? median(m.at(k)) : std::nan(""); };

        const double s_full = med(sharpe, "scr_ppo_full"), s_rep = med(sharpe, "ppo_replay");
        const double d_full = med(dd, "scr_ppo_full"), d_rep = med(dd, "ppo_replay");
        const double g_full = med(gap, "scr_ppo_full"), g_rep = med(gap, "ppo_replay");
        const double a_full = med(auc, "scr_ppo_full"), a_nocf = med(auc, "scr_ppo_nocf");
        const bool c_sharpe = s_full > s_rep, c_dd = d_full < d_rep, c_gap = g_full < g_rep, c_auc = a_full < a_nocf;
        const auto mark = [](bool b) { return b ? "ok" : "no"; };
        return {c_sharpe && c_dd && c_gap && c_auc && elapsed < 1800.0,
                fmt::format("{} seeds; Sharpe Full {:.3f} vs Replay {:.3f} [{}]; MaxDD {:.3f} vs {:.3f} [{}]; Gap {:.3g} vs {:.3g} [{}]; "
                            "Resid-AUC Full {:.4g} vs NoCF {:.4g} [{}]; {:.0f}s",
                            cfg.seeds.size(), s_full, s_rep, mark(c_sharpe), d_full, d_rep, mark(c_dd), g_full, g_rep,
                            mark(c_gap), a_full, a_nocf, mark(c_auc), elapsed)};
    }

    Outcome beta_sweep(const fs::path &source, const fs::path &work)
    {
        const auto t0 = Clock::now();
        const auto cfg = cli::load_run_config((source / "configs" / "benchmark.json").string());
        cli::CommandOptions opt;
        opt.out = work / "sweep";
        const auto grid = cli::default_sweep_grid();
        const auto rows = cli::cmd_sweep_beta(cfg, grid, opt);
        const auto csv = cli::read_text(opt.out / "sweep_beta.csv");
        const auto best = cli::read_text(opt.out / "sweep_best.csv");
        const bool shaped = rows.size() == grid.size() &&
                            csv.rfind("beta,group,sharpe_median,sharpe_q1,sharpe_q3,runs\n", 0) == 0 &&
                            static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == grid.size() + 1;
        std::string medians;
        for (const auto &r : rows)
            medians += fmt::format(" {:g}:{}", r.beta, r.sharpe ? fmt::format("{:.3f}", r.sharpe->median) : "NA");
        std::string best_line = best.substr(best.find('\n') + 1);
        if (!best_line.empty() && best_line.back() == '\n')
            best_line.pop_back();
        return {shaped, fmt::format("median Sharpe by beta{}; best (group,beta,sharpe,interior) {}; {:.0f}s", medians,
                                    best_line, seconds_since(t0))};
    }

    std::map<std::string, std::string> stats_files(const fs::path &root)
    {
        std::map<std::string, std::string> out;
        for (const auto &e : fs::recursive_directory_iterator(root))
        {
            const auto ext = e.path().extension();
            if (e.is_regular_file() && (ext == ".csv" || e.path().filename() == "theory_report.json" ||
                                        e.path().filename() == "checkpoint.json"))
                out[fs::relative(e.path(), root).generic_string()] = cli::read_text(e.path());
        }
        return out;
    }

    Outcome determinism(const fs::path &work)
    {
        const std::string text = R"({
  "tape": {"synthetic": {"n_assets": 4, "n_days": 420, "extra_macro": 1,
    "regimes": [{"mean": 0.0008, "vol": 0.01, "correlation": 0.2, "expected_duration": 40},
                {"mean": -0.002, "vol": 0.02, "correlation": 0.6, "expected_duration": 15}]}},
  "scr": {"samples": 16},
  "agent": {"iterations": 3, "hidden": 8, "epochs": 2, "minibatch": 64},
  "strategy": ["1/N", "gmv_lw", "ppo_replay", "scr_ppo_full"],
  "seeds": [3]
})";
        const auto cfg = cli::parse_run_config(text, "determinism");
        std::vector<std::map<std::string, std::string>> trees;
        for (int rep = 0; rep < 2; ++rep)
        {
            const fs::path root = work / fmt::format("determinism_{}", rep);
            fs::remove_all(root);
            cli::CommandOptions opt;
            opt.out = root / "runs";
            cli::cmd_train(cfg, opt);
            cli::cmd_backtest(cfg, opt, "valid");
            opt.out = root / "sweep";
            cli::cmd_sweep_beta(cfg, {0.0, 0.5}, opt);
            cli::cmd_report(root / "runs", root / "report");
            cli::cmd_synth_tape(cfg, 3, root / "tape");
            cli::cmd_verify_theory(0, 10, root / "theory");
            trees.push_back(stats_files(root));
        }
        std::size_t differing = 0;
        for (const auto &[name, body] : trees[0])
            differing += trees[1].contains(name) && trees[1].at(name) == body ? 0 : 1;
        const bool ok = differing == 0 && trees[0].size() == trees[1].size() && !trees[0].empty();
        return {ok, fmt::format("{} output files compared across two runs of every subcommand, {} differ", trees[0].size(),
                                differing)};
    }
}

int main(int argc, char **argv)
{
    if (argc < 3)
    {
        std::cerr << "usage: acceptance <source-dir> <work-dir> [--report-only] [criterion ...]\n";
        return 2;
    }
    spdlog::set_level(spdlog::level::warn);
    const fs::path source = argv[1];
    const fs::path work = argv[2];
    fs::create_directories(work);
    // --report-only: FAIL lines are printed but only errors change the exit code
    bool report_only = false;
    std::set<int> only;
    for (int i = 3; i < argc; ++i)
    {
        if (std::string_view(argv[i]) == "--report-only")
            report_only = true;
        else
            only.insert(std::stoi(argv[i]));
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"lemma identity on randomized finite models", lemma_identity},
        {"one-step gap and fixed-point bias bounds, contraction", gap_and_bias_bounds},
        {"mixing MSE bound and argmin location", mixing_bound},
        {"counterfactual-weight degeneracies", target_degeneracies},
        {"oracle equivalences", oracle_equivalences},
        {"leak-safety probes", leak_probes},
        {"shock discovery on synthetic tapes", shock_discovery},
        {"directional benchmark ordering", [&] { return directional_benchmark(source, work); }},
        {"beta sweep table", [&] { return beta_sweep(source, work); }},
        {"byte-identical reruns", [&] { return determinism(work); }},
    };

    int failed = 0;
    int errors = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i)
    {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(id))
            continue;
        Outcome o;
        try
        {
            o = criteria[i].second();
        }
        catch (const std::exception &e)
        {
            o = {false, std::string("exception: ") + e.what()};
            ++errors;
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " -- " << o.detail
                  << std::endl;
    }
    return (report_only ? errors : failed) == 0 ? 0 : 1;
}
