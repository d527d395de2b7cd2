#include "scr/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scr::scenario
{
    namespace
    {
        Vec row_vec(const Mat &m, std::size_t r)
        {
            return m.row(static_cast<Eigen::Index>(r)).transpose();
        }

        /// Centered ridge of Y on X: returns (intercept, slopes) with slopes = (Xc'Xc + mu I)^-1 Xc'Yc.
        std::pair<Vec, Mat> centered_ridge(const Mat &X, const Mat &Y, double mu)
        {
            const Vec xbar = X.colwise().mean().transpose();
            const Vec ybar = Y.colwise().mean().transpose();
            const Mat Xc = X.rowwise() - xbar.transpose();
            const Mat Yc = Y.rowwise() - ybar.transpose();
            Mat gram = Xc.transpose() * Xc;
            gram.diagonal().array() += mu;
            Eigen::LDLT<Mat> ldlt(gram);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
            {
                throw DataError("ridge design is rank deficient");
            }
            Mat slopes = ldlt.solve(Xc.transpose() * Yc);
            Vec intercept = ybar - slopes.transpose() * xbar;
            return {std::move(intercept), std::move(slopes)};
        }
    }

    RidgeFit fit_macro_to_return(const tape::ReturnTape &tape, std::size_t u, std::size_t window, double ridge)
    {
        if (window < 2 || u < window || u >= tape.days())
        {
            throw DataError("macro-to-return fit needs u >= window >= 2 inside the tape");
        }
        if (!(ridge > 0.0))
        {
            throw ConfigError("ridge penalty must be positive");
        }
        const auto W = static_cast<Eigen::Index>(window);
        const auto first = static_cast<Eigen::Index>(u - window);
        // day d's macro explains the return realized from d to d+1, i.e. returns row d
        const Mat X = tape.macro.middleRows(first, W);
        const Mat Y = tape.returns.middleRows(first, W);
        auto [intercept, slopes] = centered_ridge(X, Y, ridge);
        RidgeFit fit;
        fit.residuals = Y - ((X * slopes).rowwise() + intercept.transpose());
        fit.intercept = std::move(intercept);
        fit.slopes = std::move(slopes);
        return fit;
    }

    Vec macro_scenario_return(const tape::ReturnTape &tape, std::size_t u, const LibraryConfig &cfg)
    {
        const RidgeFit fit = fit_macro_to_return(tape, u, cfg.fit_window, cfg.ridge);
        Vec pred = fit.intercept + fit.slopes.transpose() * row_vec(tape.macro, u);
        Rng rng = make_rng(cfg.seed, "library", u);
        const std::size_t pick = uniform_index(rng, cfg.fit_window);
        return pred + row_vec(fit.residuals, pick);
    }

    ScenarioLibrary ScenarioLibrary::build(const tape::ReturnTape &tape, const std::vector<Vec> &descriptors,
                                           std::size_t first_u, std::size_t last_u, const LibraryConfig &cfg)
    {
        if (descriptors.size() < std::min(last_u, tape.days()))
        {
            throw DataError("descriptor list shorter than the library range");
        }
        ScenarioLibrary lib;
        last_u = std::min(last_u, tape.days());
        for (std::size_t u = std::max(first_u, cfg.fit_window); u < last_u; ++u)
        {
            if (descriptors[u].size() == 0)
            {
                continue;
            }
            lib.append({u, descriptors[u], macro_scenario_return(tape, u, cfg)});
        }
        return lib;
    }

    void ScenarioLibrary::append(LibraryEntry entry)
    {
        if (!entries_.empty() && entry.u <= entries_.back().u)
        {
            throw DataError("library entries must be appended in increasing u");
        }
        entries_.push_back(std::move(entry));
    }

    Vec ScenarioDistribution::mean() const
    {
        if (empty())
        {
            throw DataError("empty scenario distribution");
        }
        return atoms.colwise().mean().transpose();
    }

    double ScenarioDistribution::dispersion() const
    {
        const Vec m = mean();
        return (atoms.rowwise() - m.transpose()).rowwise().squaredNorm().mean();
    }

    ScenarioDistribution retrieve(const ScenarioLibrary &library, const Vec &psi, std::size_t t, std::size_t k)
    {
        if (k < 1)
        {
            throw ConfigError("retrieval needs k >= 1");
        }
        const auto &entries = library.entries();
        std::vector<std::pair<double, std::size_t>> cand; // (squared distance, entry index)
        for (std::size_t i = 0; i < entries.size() && entries[i].u < t; ++i)
        {
            cand.emplace_back((entries[i].psi - psi).squaredNorm(), i);
        }
        if (cand.empty())
        {
            throw DataError("no library entries before day " + std::to_string(t));
        }
        const std::size_t take = std::min(k, cand.size());
        // entry index order equals u order, so pair ordering breaks ties toward smaller u
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
        ScenarioDistribution dist;
        dist.atoms.resize(static_cast<Eigen::Index>(take), entries.front().r_tilde.size());
        for (std::size_t j = 0; j < take; ++j)
        {
            const auto &e = entries[cand[j].second];
            dist.atoms.row(static_cast<Eigen::Index>(j)) = e.r_tilde.transpose();
            dist.sources.push_back(e.u);
        }
        return dist;
    }

    Mat sample_scenarios(const ScenarioDistribution &dist, std::size_t S, Rng &rng)
    {
        if (S < 1)
        {
            throw ConfigError("need at least one scenario sample");
        }
        if (dist.empty())
        {
            throw DataError("cannot sample from an empty scenario distribution");
        }
        Mat out(static_cast<Eigen::Index>(S), dist.atoms.cols());
        for (std::size_t s = 0; s < S; ++s)
        {
            out.row(static_cast<Eigen::Index>(s)) = dist.atoms.row(static_cast<Eigen::Index>(uniform_index(rng, dist.size())));
        }
        return out;
    }

    Vec scenario_mean(const Mat &samples)
    {
        if (samples.rows() < 1)
        {
            throw DataError("scenario mean of an empty sample");
        }
        return samples.colwise().mean().transpose();
    }

    MacroVar::MacroVar(Vec intercept, Mat transition, MahalanobisForm stress)
        : intercept_(std::move(intercept)), transition_(std::move(transition)), stress_(std::move(stress))
    {
    }

    MacroVar MacroVar::fit(const Mat &macro, std::size_t end, double ridge)
    {
        end = std::min(end, static_cast<std::size_t>(macro.rows()));
        if (end < 3)
        {
            throw DataError("macro VAR needs at least three training rows");
        }
        const auto n = static_cast<Eigen::Index>(end);
        const Mat X = macro.topRows(n - 1);
        const Mat Y = macro.middleRows(1, n - 1);
        // slopes maps x -> y row-wise, so the transition is its transpose
        auto [intercept, slopes] = centered_ridge(X, Y, ridge * static_cast<double>(n - 1));
        const Mat rows = macro.topRows(n);
        const Vec mean = rows.colwise().mean().transpose();
        const Mat centered = rows.rowwise() - mean.transpose();
        const Mat cov = centered.transpose() * centered / static_cast<double>(n - 1);
        return MacroVar(std::move(intercept), slopes.transpose(), MahalanobisForm(mean, cov, 1e-6));
    }

    Vec channel_impulse(const Vec &chi, const std::vector<Vec> &signatures, Eigen::Index macro_dim)
    {
        Vec impulse = Vec::Zero(macro_dim);
        for (Eigen::Index c = 0; c < chi.size(); ++c)
        {
            if (chi(c) != 0.0)
            {
                impulse += chi(c) * signatures.at(static_cast<std::size_t>(c));
            }
        }
        return impulse;
    }

    double severity(const Vec &impulse, const Vec &macro_state, const MacroVar &var, std::size_t horizon)
    {
        Vec x = macro_state + impulse;
        double v = var.stress(x);
        for (std::size_t h = 0; h < horizon; ++h)
        {
            x = var.step(x);
            v = std::max(v, var.stress(x));
        }
        return v;
    }

    RegimeContext regime_context(double v, const std::vector<double> &history, const GateParams &p)
    {
        RegimeContext rc;
        rc.v = v;
        if (history.empty())
        {
            rc.q = p.eps;
        }
        else
        {
            const std::size_t n = std::min(history.size(), p.window);
            rc.q = quantile_linear(std::vector<double>(history.end() - static_cast<std::ptrdiff_t>(n), history.end()), p.quantile);
        }
        rc.g = std::clamp(1.0 - p.alpha * v / (rc.q + p.eps), p.g_min, 1.0);
        return rc;
    }

    Vec trailing_volatility(const tape::ReturnTape &tape, std::size_t t, std::size_t window)
    {
        if (window < 2 || t < window || t >= tape.days())
        {
            throw DataError("trailing volatility needs t >= window >= 2");
        }
        const Mat block = tape.returns.middleRows(static_cast<Eigen::Index>(t - window), static_cast<Eigen::Index>(window));
        const Vec m = block.colwise().mean().transpose();
        return ((block.rowwise() - m.transpose()).colwise().squaredNorm().transpose() / static_cast<double>(window - 1)).cwiseSqrt();
    }

    Vec trailing_mean_return(const tape::ReturnTape &tape, std::size_t t, std::size_t window)
    {
        const std::size_t n = std::min(window, t);
        if (n == 0)
        {
            return Vec::Zero(static_cast<Eigen::Index>(tape.assets()));
        }
        return tape.returns.middleRows(static_cast<Eigen::Index>(t - n), static_cast<Eigen::Index>(n)).colwise().mean().transpose();
    }

    void ScrConfig::validate() const
    {
        if (!(q_shock > 0.0 && q_shock <= 1.0))
            throw ConfigError("q_shock must lie in (0, 1]");
        if (lambda_sq && !(*lambda_sq > 0.0))
            throw ConfigError("lambda_sq must be positive");
        if (chi_lookback < 1)
            throw ConfigError("chi_lookback must be >= 1");
        if (vol_window < 2)
            throw ConfigError("vol_window must be >= 2");
        if (fit_window < 2)
            throw ConfigError("fit_window must be >= 2");
        if (!(ridge > 0.0))
            throw ConfigError("ridge must be positive");
        if (k < 1 || samples < 1)
            throw ConfigError("k and samples must be >= 1");
        if (gate.window < 1 || !(gate.quantile >= 0.0 && gate.quantile <= 1.0))
            throw ConfigError("gate window must be >= 1 and quantile in [0, 1]");
        if (!(gate.alpha >= 0.0) || !(gate.g_min >= 0.0 && gate.g_min <= 1.0) || !(gate.eps > 0.0))
            throw ConfigError("gate needs alpha >= 0, g_min in [0, 1], eps > 0");
        if (embedding.window < 1 || embedding.dim < 1)
            throw ConfigError("embedding window and dim must be >= 1");
    }

    ScrPipeline ScrPipeline::fit(const tape::ReturnTape &tape, std::size_t train_end, const ScrConfig &cfg,
                                 std::uint64_t seed)
    {
        cfg.validate();
        train_end = std::min(train_end, tape.days());
        const std::size_t need = std::max({cfg.embedding.window, cfg.vol_window, cfg.fit_window}) + 2;
        if (train_end < need + 2)
        {
            throw DataError("training segment too short for the SCR windows (need " + std::to_string(need + 2) + " days)");
        }
        ScrPipeline p;
        p.cfg_ = cfg;
        p.seed_ = seed;
        p.train_end_ = train_end;
        p.embedder_ = regime::RegimeEmbedder::fit(tape, cfg.embedding.window, train_end, cfg.embedding);

        std::vector<Vec> train_u;
        for (std::size_t t = cfg.embedding.window; t < train_end; ++t)
            train_u.push_back(p.embedder_.embed(tape, t));
        p.detector_ = regime::ShockDetector::fit(train_u, cfg.q_shock);

        if (cfg.lambda_sq)
        {
            p.lambda_sq_ = *cfg.lambda_sq;
        }
        else
        {
            std::vector<Vec> shocks;
            for (const auto &u : train_u)
                if (p.detector_.is_shock(u))
                    shocks.push_back(u);
            // with fewer than two train shocks the rule falls back to all train embeddings
            p.lambda_sq_ = regime::default_lambda_sq(shocks.size() >= 2 ? shocks : train_u);
            if (!(p.lambda_sq_ > 0.0))
            {
                p.lambda_sq_ = 1e-12;
            }
        }

        regime::ShockLedger replay(p.lambda_sq_);
        for (std::size_t t = cfg.embedding.window; t < train_end; ++t)
        {
            const Vec &u = train_u[t - cfg.embedding.window];
            if (p.detector_.is_shock(u))
                replay.assign(u, t, tape.dates[t], row_vec(tape.macro, t), row_vec(tape.returns, t - 1), tape.asset_ids);
        }
        p.channel_capacity_ = replay.size();

        p.var_ = MacroVar::fit(tape.macro, train_end, cfg.var_ridge);

        Mat vols(static_cast<Eigen::Index>(train_end - cfg.vol_window), static_cast<Eigen::Index>(tape.assets()));
        for (std::size_t t = cfg.vol_window; t < train_end; ++t)
            vols.row(static_cast<Eigen::Index>(t - cfg.vol_window)) = trailing_volatility(tape, t, cfg.vol_window).transpose();
        p.vol_scaler_ = ColumnScaler::fit(vols);
        return p;
    }

    std::size_t ScrPipeline::first_descriptor_day() const
    {
        return cfg_.vol_window;
    }

    Vec ScrPipeline::descriptor(const Vec &macro_z, const Vec &chi, const Vec &vol) const
    {
        Vec psi(macro_z.size() + chi.size() + vol.size());
        psi << macro_z, chi, vol_scaler_.apply(vol);
        return psi;
    }

    ScrRun ScrPipeline::run(const tape::ReturnTape &tape) const
    {
        const std::size_t T = tape.days();
        const auto M = static_cast<Eigen::Index>(tape.macro_dim());
        ScrRun out{std::vector<DayContext>(T), regime::ShockLedger(lambda_sq_), ScenarioLibrary{}};
        auto &ledger = out.ledger;
        ledger.set_capacity(channel_capacity_);

        // Pass 1: ledger, activations and severities, strictly in date order.
        std::vector<std::vector<int>> active(T);
        std::vector<double> sev(T, 0.0);
        for (std::size_t t = 0; t < T; ++t)
        {
            auto &day = out.days[t];
            day.day = t;
            day.macro_z = row_vec(tape.macro, t);
            if (t == train_end_)
            {
                ledger.freeze();
            }
            if (t >= cfg_.embedding.window)
            {
                const Vec u = embedder_.embed(tape, t);
                day.shock = detector_.is_shock(u);
                if (day.shock)
                {
                    day.channel = ledger.assign(u, t, tape.dates[t], day.macro_z, row_vec(tape.returns, t - 1), tape.asset_ids);
                }
            }
            const Vec chi = ledger.activation(t, cfg_.chi_lookback).chi;
            std::vector<Vec> signatures;
            for (const auto &c : ledger.channels())
                signatures.push_back(c.macro_signature);
            for (Eigen::Index c = 0; c < chi.size(); ++c)
                if (chi(c) != 0.0)
                    active[t].push_back(static_cast<int>(c));
            sev[t] = severity(channel_impulse(chi, signatures, M), day.macro_z, var_, cfg_.horizon);
        }

        // Pass 2: descriptors over the fitted channel capacity, library, retrieval and gate.
        const auto C = static_cast<Eigen::Index>(channel_capacity_);
        std::vector<Vec> psi(T);
        for (std::size_t t = 0; t < T; ++t)
        {
            auto &day = out.days[t];
            day.chi = Vec::Zero(C);
            for (int c : active[t])
                day.chi(c) = 1.0;
            day.trailing_mean = trailing_mean_return(tape, t, cfg_.vol_window);
            if (t >= first_descriptor_day())
            {
                day.vol = trailing_volatility(tape, t, cfg_.vol_window);
                day.psi = descriptor(day.macro_z, day.chi, day.vol);
                day.has_descriptor = true;
                psi[t] = day.psi;
            }
        }
        out.library = ScenarioLibrary::build(tape, psi, 0, T, LibraryConfig{cfg_.fit_window, cfg_.ridge, seed_});

        std::size_t next_entry = 0;
        const auto &entries = out.library.entries();
        for (std::size_t t = 0; t < T; ++t)
        {
            auto &day = out.days[t];
            const std::size_t lo = t > cfg_.gate.window ? t - cfg_.gate.window : 0;
            day.context = regime_context(sev[t], std::vector<double>(sev.begin() + static_cast<std::ptrdiff_t>(lo), sev.begin() + static_cast<std::ptrdiff_t>(t)), cfg_.gate);
            while (next_entry < entries.size() && entries[next_entry].u < t)
                ++next_entry;
            if (day.has_descriptor && next_entry > 0)
            {
                day.dist = retrieve(out.library, day.psi, t, cfg_.k);
                day.valid = true;
            }
        }
        return out;
    }
}
