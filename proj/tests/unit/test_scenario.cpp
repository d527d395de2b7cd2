#include "doctest.h"

#include "scr/scenario.hpp"

#include <cmath>
#include <limits>

using namespace scr;
using namespace scr::scenario;

namespace
{
    tape::ReturnTape constant_tape(double c, std::size_t days)
    {
        tape::SyntheticTapeConfig cfg;
        cfg.n_assets = 3;
        cfg.n_days = days;
        cfg.macro_noise = 0.0;
        cfg.regimes.push_back({Vec::Constant(3, c), Mat::Zero(3, 3), 10.0});
        return tape::generate_synthetic_tape(cfg).tape;
    }

    tape::SyntheticTapeConfig regime_tape(std::uint64_t seed, std::size_t days)
    {
        tape::SyntheticTapeConfig cfg;
        cfg.n_assets = 4;
        cfg.n_days = days;
        cfg.seed = seed;
        cfg.extra_macro = 1;
        const Mat cov = Mat::Identity(4, 4) * 1e-4;
        cfg.regimes.push_back({Vec::Constant(4, 0.001), cov, 30.0});
        cfg.regimes.push_back({Vec::Constant(4, -0.002), cov * 2.0, 15.0});
        cfg.anomalies.push_back({250, 5, 4.0, 0.0});
        return cfg;
    }

    ScenarioLibrary library_of(const std::vector<std::pair<std::size_t, Vec>> &psi_u)
    {
        ScenarioLibrary lib;
        for (const auto &[u, psi] : psi_u)
            lib.append({u, psi, Vec::Constant(2, static_cast<double>(u))});
        return lib;
    }

    Vec v2(double a, double b)
    {
        Vec v(2);
        v << a, b;
        return v;
    }
}

TEST_CASE("degenerate regression reproduces a constant return")
{
    const auto tape = constant_tape(0.002, 120);
    const std::vector<Vec> psi(tape.days(), Vec::Zero(1));
    const auto lib = ScenarioLibrary::build(tape, psi, 0, tape.days(), {60, 1e-2, 3});
    REQUIRE(lib.size() == 60);
    for (const auto &e : lib.entries())
        CHECK((e.r_tilde.array() - 0.002).abs().maxCoeff() < 1e-12);
}

TEST_CASE("library entries are unbiased for the window mean when returns ignore macro")
{
    tape::SyntheticTapeConfig cfg;
    cfg.n_assets = 2;
    cfg.n_days = 1200;
    cfg.seed = 17;
    cfg.extra_macro = 2;
    cfg.regimes.push_back({Vec::Zero(2), Mat::Identity(2, 2) * 1e-4, 1e9});
    const auto tape = tape::generate_synthetic_tape(cfg).tape;
    const LibraryConfig lc{60, 1e-2, 5};
    std::vector<double> diff;
    for (std::size_t u = 60; u < 1060; ++u)
    {
        const Vec r = macro_scenario_return(tape, u, lc);
        const double window_mean = tape.returns.middleRows(static_cast<Eigen::Index>(u - 60), 60).col(0).mean();
        diff.push_back(r(0) - window_mean);
    }
    const double se = stddev_of(diff) / std::sqrt(static_cast<double>(diff.size()));
    CHECK(std::abs(mean_of(diff)) < 3.0 * se);
}

TEST_CASE("library build is deterministic and reads only the past")
{
    const auto tape = tape::generate_synthetic_tape(regime_tape(2, 200)).tape;
    const std::vector<Vec> psi(tape.days(), Vec::Ones(2));
    const LibraryConfig lc{60, 1e-2, 9};
    const auto a = ScenarioLibrary::build(tape, psi, 0, 200, lc);
    const auto b = ScenarioLibrary::build(tape, psi, 0, 200, lc);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.entries()[i].r_tilde == b.entries()[i].r_tilde);

    // poison everything after u = 100: entry 100 is unchanged
    auto poisoned = tape;
    poisoned.returns.bottomRows(poisoned.returns.rows() - 100).setConstant(std::numeric_limits<double>::quiet_NaN());
    poisoned.macro.bottomRows(poisoned.macro.rows() - 101).setConstant(std::numeric_limits<double>::quiet_NaN());
    CHECK(macro_scenario_return(poisoned, 100, lc) == macro_scenario_return(tape, 100, lc));
    CHECK_THROWS_AS(macro_scenario_return(tape, 59, lc), DataError);
}

TEST_CASE("retrieval: exact match, saturation and ties")
{
    const auto lib = library_of({{1, v2(0, 0)}, {2, v2(1, 0)}, {3, v2(-1, 0)}, {4, v2(5, 5)}});
    auto d = retrieve(lib, v2(5, 5), 10, 1);
    REQUIRE(d.size() == 1);
    CHECK(d.sources[0] == 4);

    d = retrieve(lib, v2(0, 0), 10, 99);
    CHECK(d.size() == 4);

    // (1,0) and (-1,0) are equidistant from the origin; the earlier u comes first
    d = retrieve(lib, v2(0, 0.0), 10, 2);
    CHECK(d.sources == std::vector<std::size_t>{1, 2});
    d = retrieve(library_of({{1, v2(0, 0)}, {2, v2(-1, 0)}, {3, v2(1, 0)}}), v2(0, 0), 10, 2);
    CHECK(d.sources == std::vector<std::size_t>{1, 2});

    // only u < t is eligible
    d = retrieve(lib, v2(5, 5), 4, 1);
    CHECK(d.sources[0] != 4);
    CHECK_THROWS_AS(retrieve(lib, v2(0, 0), 1, 3), DataError);
}

TEST_CASE("retrieval never reads entries with u >= t")
{
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ScenarioLibrary lib;
    for (std::size_t u = 0; u < 50; ++u)
    {
        const bool future = u >= 30;
        lib.append({u, future ? Vec::Constant(2, nan) : v2(static_cast<double>(u), 0), future ? Vec::Constant(2, nan) : Vec::Ones(2)});
    }
    for (std::size_t k : {1u, 5u, 40u})
    {
        const auto d = retrieve(lib, v2(100, 0), 30, k);
        CHECK(all_finite(d.atoms));
        for (auto u : d.sources)
            CHECK(u < 30);
    }
}

TEST_CASE("scenario sampling")
{
    ScenarioDistribution one;
    one.atoms = v2(0.1, -0.2).transpose();
    Rng rng(1);
    const Mat s = sample_scenarios(one, 16, rng);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        CHECK(s.row(i) == one.atoms.row(0));

    ScenarioDistribution five;
    five.atoms.resize(5, 1);
    for (Eigen::Index i = 0; i < 5; ++i)
        five.atoms(i, 0) = static_cast<double>(i);
    Rng r1(7), r2(7);
    const Mat big = sample_scenarios(five, 100000, r1);
    for (int a = 0; a < 5; ++a)
    {
        const double freq = (big.col(0).array() == static_cast<double>(a)).cast<double>().mean();
        CHECK(std::abs(freq - 0.2) < 0.01);
    }
    CHECK(sample_scenarios(five, 100000, r2) == big);

    // law of large numbers: |sample mean - exact mean| < 3 sigma / sqrt(S)
    const double exact = five.mean()(0);
    const double sigma = std::sqrt(five.dispersion());
    CHECK(std::abs(scenario_mean(big)(0) - exact) < 3.0 * sigma / std::sqrt(100000.0));
    CHECK_THROWS_AS(sample_scenarios(five, 0, r1), ConfigError);
}

TEST_CASE("scenario mean")
{
    Mat s(2, 2);
    s << 1, 0, 0, 1;
    CHECK(scenario_mean(s) == v2(0.5, 0.5));
    const Mat copies = v2(0.3, 0.7).transpose().replicate(9, 1);
    CHECK((scenario_mean(copies) - v2(0.3, 0.7)).norm() < 1e-15);

    // enumerating every atom once recovers the exact mixture mean
    ScenarioDistribution d;
    d.atoms.resize(3, 2);
    d.atoms << 1, 2, 3, 4, 5, 9;
    Vec oracle = Vec::Zero(2);
    for (Eigen::Index i = 0; i < 3; ++i)
        oracle += d.atoms.row(i).transpose() / 3.0;
    CHECK((scenario_mean(d.atoms) - oracle).norm() < 1e-15);
    CHECK((d.mean() - oracle).norm() < 1e-15);
}

TEST_CASE("severity under a zero-mean stationary VAR")
{
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial)
    {
        const Eigen::Index M = 3;
        Mat A(M, M), L(M, M);
        Vec b(M);
        for (Eigen::Index i = 0; i < M; ++i)
        {
            b(i) = standard_normal(rng);
            for (Eigen::Index j = 0; j < M; ++j)
            {
                A(i, j) = standard_normal(rng);
                L(i, j) = standard_normal(rng);
            }
        }
        A *= 0.9 / Eigen::EigenSolver<Mat>(A).eigenvalues().cwiseAbs().maxCoeff();
        const Mat cov = L * L.transpose() + Mat::Identity(M, M);
        const MacroVar var(Vec::Zero(M), A, MahalanobisForm(Vec::Zero(M), cov, 0.0));
        const Vec mean = Vec::Zero(M);

        CHECK(severity(Vec::Zero(M), mean, var, 5) == 0.0);
        const double v1 = severity(b, mean, var, 5);
        const double v2x = severity(2.0 * b, mean, var, 5);
        CHECK(v1 >= 0.0);
        CHECK(v2x >= v1);
        CHECK(severity(b, mean, var, 5) == v1);
    }
}

TEST_CASE("channel impulse")
{
    const std::vector<Vec> sig{v2(1, 0), v2(0, 2), v2(3, 3)};
    Vec chi(3);
    chi << 1, 0, 1;
    CHECK(channel_impulse(chi, sig, 2) == v2(4, 3));
    CHECK(channel_impulse(Vec::Zero(3), sig, 2) == Vec::Zero(2));
}

TEST_CASE("regime context gate")
{
    const GateParams p;
    const std::vector<double> hist{1.0, 2.0, 3.0, 4.0, 5.0};
    const double q = quantile_linear(hist, 0.9);
    CHECK(regime_context(0.0, hist, p).g == 1.0);
    CHECK(regime_context(1e300, hist, p).g == p.g_min);
    const auto rc = regime_context(q, hist, p);
    CHECK(rc.q == q);
    CHECK(rc.g == std::clamp(1.0 - 0.5 * q / (q + 1e-8), 0.2, 1.0));
    CHECK(rc.g == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(regime_context(1.0, {}, p).q == p.eps);

    // only the trailing L_g values count
    GateParams short_window = p;
    short_window.window = 2;
    CHECK(regime_context(1.0, hist, short_window).q == doctest::Approx(quantile_linear({4.0, 5.0}, 0.9)));

    double prev = 1.0;
    for (double v = 0.0; v < 20.0; v += 0.25)
    {
        const double g = regime_context(v, hist, p).g;
        CHECK(g >= p.g_min);
        CHECK(g <= 1.0);
        CHECK(g <= prev);
        prev = g;
    }
}

TEST_CASE("pipeline outputs through t are unchanged by poisoned future rows")
{
    const auto synth = tape::generate_synthetic_tape(regime_tape(4, 400));
    const auto &tape = synth.tape;
    ScrConfig cfg;
    cfg.k = 8;
    const auto pipe = ScrPipeline::fit(tape, 240, cfg, 11);
    const auto clean = pipe.run(tape);

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
            CHECK(a.shock == b.shock);
            CHECK(a.context.g == b.context.g);
            CHECK(a.context.v == b.context.v);
            CHECK(a.valid == b.valid);
            CHECK(a.chi == b.chi);
            if (a.has_descriptor)
            {
                CHECK(a.psi.head(a.macro_z.size()) == b.psi.head(b.macro_z.size()));
                CHECK(a.psi.tail(a.vol.size()) == b.psi.tail(b.vol.size()));
            }
            if (a.valid)
            {
                CHECK(a.dist.sources == b.dist.sources);
                CHECK(a.dist.atoms == b.dist.atoms);
            }
        }
    }
}

TEST_CASE("pipeline: gate range, descriptor layout and determinism")
{
    const auto synth = tape::generate_synthetic_tape(regime_tape(8, 400));
    ScrConfig cfg;
    cfg.k = 8;
    const auto pipe = ScrPipeline::fit(synth.tape, 240, cfg, 5);
    const auto a = pipe.run(synth.tape);
    const auto b = pipe.run(synth.tape);
    std::size_t valid = 0;
    for (std::size_t t = 0; t < synth.tape.days(); ++t)
    {
        const auto &d = a.days[t];
        CHECK(d.context.g >= cfg.gate.g_min);
        CHECK(d.context.g <= 1.0);
        CHECK(d.context.v >= 0.0);
        if (d.has_descriptor)
        {
            CHECK(d.psi.size() == static_cast<Eigen::Index>(synth.tape.macro_dim() + a.ledger.size() + synth.tape.assets()));
            CHECK(all_finite(d.psi));
        }
        if (d.valid)
        {
            ++valid;
            CHECK(d.dist.size() <= cfg.k);
            for (auto u : d.dist.sources)
                CHECK(u < t);
            CHECK(d.dist.atoms == b.days[t].dist.atoms);
        }
    }
    CHECK(valid > 300);
    CHECK(a.ledger.to_json(synth.tape.macro_ids) == b.ledger.to_json(synth.tape.macro_ids));
    // the injected block is flagged
    std::size_t flagged = 0;
    for (std::size_t t = 250; t < 255; ++t)
        flagged += a.days[t].shock ? 1 : 0;
    CHECK(flagged >= 4);
}
