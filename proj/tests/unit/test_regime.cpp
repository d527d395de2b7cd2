#include "doctest.h"

#include "scr/regime.hpp"
#include "scr/rng.hpp"

#include <cmath>

using namespace scr;
using namespace scr::regime;

namespace
{
    tape::SyntheticTapeConfig two_regime(std::uint64_t seed, std::size_t days)
    {
        tape::SyntheticTapeConfig cfg;
        cfg.n_assets = 4;
        cfg.n_days = days;
        cfg.seed = seed;
        const Mat cov = Mat::Identity(4, 4) * 1e-4;
        cfg.regimes.push_back({Vec::Constant(4, 0.002), cov, 40.0});
        cfg.regimes.push_back({Vec::Constant(4, -0.002), cov * 4.0, 40.0});
        return cfg;
    }

    const tape::Date d0 = tape::parse_date("2020-01-01");
    const std::vector<std::string> ids{"A", "B"};

    std::optional<int> add(ShockLedger &l, const Vec &u, std::size_t day)
    {
        return l.assign(u, day, d0 + std::chrono::days{static_cast<int>(day)}, Vec::Zero(1), Vec::Zero(2), ids);
    }
}

TEST_CASE("identical rows give identical embeddings")
{
    tape::SyntheticTapeConfig cfg;
    cfg.n_assets = 3;
    cfg.n_days = 60;
    cfg.macro_noise = 0.0;
    cfg.regimes.push_back({Vec::Constant(3, 0.001), Mat::Zero(3, 3), 10.0});
    const auto tape = tape::generate_synthetic_tape(cfg).tape;
    const auto e = RegimeEmbedder::fit(tape, 0, 40, {5, 2});
    const Vec first = e.embed(tape, 5);
    for (std::size_t t = 6; t < tape.days(); ++t)
        CHECK((e.embed(tape, t) - first).norm() < 1e-12);
    CHECK_THROWS_AS(e.embed(tape, 4), DataError);
}

TEST_CASE("full-dimension embedding is a rotation of the projection input")
{
    const auto tape = tape::generate_synthetic_tape(two_regime(3, 300)).tape;
    const std::size_t F = 4 + tape.macro_dim();
    const auto e = RegimeEmbedder::fit(tape, 0, 200, {5, F});
    double worst = 0.0;
    for (std::size_t a = 5; a < 300; a += 7)
    {
        for (std::size_t b = a + 3; b < 300; b += 11)
        {
            const double raw = (e.projection_input(tape, a) - e.projection_input(tape, b)).norm();
            const double emb = (e.embed(tape, a) - e.embed(tape, b)).norm();
            worst = std::max(worst, std::abs(raw - emb));
        }
    }
    CHECK(worst < 1e-9);
    CHECK((e.basis().transpose() * e.basis() - Mat::Identity(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(F))).norm() < 1e-9);
}

TEST_CASE("two regimes separate in embedding space")
{
    const auto synth = tape::generate_synthetic_tape(two_regime(5, 800));
    const auto e = RegimeEmbedder::fit(synth.tape, 0, 500, {5, 3});
    std::vector<Vec> u;
    std::vector<std::size_t> lab;
    for (std::size_t t = 10; t < 800; t += 3)
    {
        // days whose whole window shares one regime
        bool pure = true;
        for (std::size_t d = t - 5; d <= t; ++d)
            pure = pure && synth.regime_path[d] == synth.regime_path[t];
        if (pure)
        {
            u.push_back(e.embed(synth.tape, t));
            lab.push_back(synth.regime_path[t]);
        }
    }
    double within = 0.0, between = 0.0;
    std::size_t nw = 0, nb = 0;
    for (std::size_t i = 0; i < u.size(); ++i)
    {
        for (std::size_t j = i + 1; j < u.size(); ++j)
        {
            const double d = (u[i] - u[j]).norm();
            if (lab[i] == lab[j])
            {
                within += d;
                ++nw;
            }
            else
            {
                between += d;
                ++nb;
            }
        }
    }
    REQUIRE(nw > 0);
    REQUIRE(nb > 0);
    CHECK(between / static_cast<double>(nb) > within / static_cast<double>(nw));
}

TEST_CASE("chi-square quantile and Mahalanobis shock test")
{
    CHECK(chi_square_quantile(2, 0.99) == doctest::Approx(9.21034037).epsilon(1e-8));
    CHECK(std::isinf(chi_square_quantile(2, 1.0)));

    const Vec mu = Vec::Zero(2);
    const ShockDetector det(mu, Mat::Identity(2, 2), 0.99);
    CHECK_FALSE(det.is_shock(mu));
    CHECK(det.score(mu) == 0.0);
    Vec far(2);
    far << 10.0, 0.0;
    // identity is regularized by 1e-6 * trace/k
    CHECK(det.score(far) == doctest::Approx(100.0 / (1.0 + 1e-6)).epsilon(1e-12));
    CHECK(det.is_shock(far));

    const ShockDetector never(mu, Mat::Identity(2, 2), 1.0);
    CHECK_FALSE(never.is_shock(far * 1e6));
}

TEST_CASE("ledger: base case, fixed point and threshold boundary")
{
    ShockLedger l(1.0);
    Vec u(2);
    u << 0.5, -0.5;
    CHECK(add(l, u, 10) == 0);
    REQUIRE(l.size() == 1);
    CHECK(l.channels()[0].centroid == u);

    CHECK(add(l, u, 11) == 0);
    CHECK(l.channels()[0].centroid == u);
    CHECK(l.size() == 1);

    // distance^2 exactly lambda^2 stays, lambda^2 + eps opens a new channel
    ShockLedger m(4.0);
    Vec a = Vec::Zero(2), b(2), c(2);
    b << 2.0, 0.0;
    c << 0.0, std::sqrt(4.0 + 1e-6);
    add(m, a, 1);
    CHECK(add(m, c, 2) == 1);
    CHECK(m.size() == 2);
    ShockLedger n(4.0);
    add(n, a, 1);
    CHECK(add(n, b, 2) == 0);
}

TEST_CASE("ledger: ties go to the lowest id and centroids are member means")
{
    ShockLedger l(1.0);
    Vec a(1), b(1), mid(1);
    a << 0.0;
    b << 1.5;
    mid << 0.75;
    add(l, a, 1);
    add(l, b, 2);
    REQUIRE(l.size() == 2);
    CHECK(add(l, mid, 3) == 0);

    ShockLedger r(0.5);
    Rng rng(42);
    std::vector<std::vector<Vec>> members;
    for (std::size_t d = 0; d < 200; ++d)
    {
        Vec u(3);
        for (Eigen::Index j = 0; j < 3; ++j)
            u(j) = standard_normal(rng);
        const auto id = add(r, u, d);
        REQUIRE(id.has_value());
        if (static_cast<std::size_t>(*id) >= members.size())
            members.resize(static_cast<std::size_t>(*id) + 1);
        members[static_cast<std::size_t>(*id)].push_back(u);
    }
    for (const auto &c : r.channels())
    {
        Vec mean = Vec::Zero(3);
        for (const auto &m : members[static_cast<std::size_t>(c.id)])
            mean += m;
        mean /= static_cast<double>(members[static_cast<std::size_t>(c.id)].size());
        CHECK((c.centroid - mean).norm() < 1e-9);
        CHECK(std::is_sorted(c.hit_dates.begin(), c.hit_dates.end()));
    }
}

TEST_CASE("frozen ledger logs novelty and keeps centroids")
{
    ShockLedger l(1.0);
    Vec a = Vec::Zero(2), far(2);
    far << 5.0, 0.0;
    add(l, a, 1);
    l.freeze();
    CHECK(add(l, far, 2) == 0);
    CHECK(l.size() == 1);
    CHECK(l.channels()[0].centroid == a);
    REQUIRE(l.novelty_log().size() == 1);
    CHECK(l.novelty_log()[0].min_distance_sq == 25.0);

    ShockLedger empty(1.0);
    empty.freeze();
    CHECK_FALSE(add(empty, a, 3).has_value());
    CHECK(empty.novelty_log().size() == 1);
}

TEST_CASE("ledger at capacity stops creating channels but keeps counting train hits")
{
    ShockLedger l(1.0);
    l.set_capacity(1);
    Vec a = Vec::Zero(2), far(2);
    far << 5.0, 0.0;
    add(l, a, 1);
    CHECK(add(l, far, 2) == 0);
    CHECK(l.size() == 1);
    CHECK(l.channels()[0].centroid == a);
    CHECK(l.channels()[0].train_hits == 2);
    CHECK(l.novelty_log().size() == 1);
}

TEST_CASE("activation vector lookback boundary")
{
    ShockLedger l(0.1);
    Vec a = Vec::Zero(1), b = Vec::Constant(1, 5.0);
    add(l, a, 20);
    add(l, b, 20);
    CHECK(l.activation(19, 10).chi.sum() == 0.0);
    CHECK(l.activation(20, 10).chi == Vec::Ones(2));
    // hit at day 20 is 9 days before t=29 and 10 days before t=30
    CHECK(l.activation(29, 10).chi == Vec::Ones(2));
    CHECK(l.activation(30, 10).chi.sum() == 0.0);
    CHECK(l.activation(100, 10).chi.sum() == 0.0);
}

TEST_CASE("signatures and JSON export")
{
    ShockLedger l(1.0);
    Vec m1(2), m2(2), r1(2), r2(2);
    m1 << 1.0, -2.0;
    m2 << 3.0, 0.0;
    r1 << 0.01, -0.05;
    r2 << 0.03, -0.01;
    l.assign(Vec::Zero(1), 1, d0, m1, r1, ids);
    l.assign(Vec::Zero(1), 2, d0 + std::chrono::days{1}, m2, r2, ids);
    const auto &c = l.channels()[0];
    CHECK(c.macro_signature(0) == doctest::Approx(2.0));
    CHECK(c.macro_signature(1) == doctest::Approx(-1.0));
    REQUIRE(c.top_movers.size() == 2);
    CHECK(c.top_movers[0].first == "B");
    CHECK(c.top_movers[0].second == doctest::Approx(-0.03));
    const auto j = l.to_json({"gpr", "oil"});
    CHECK(j["channels"][0]["macro_signature"]["gpr"].get<double>() == doctest::Approx(2.0));
    CHECK(j["channels"][0]["hit_dates"].size() == 2);
}

TEST_CASE("ledger construction is deterministic")
{
    const auto tape = tape::generate_synthetic_tape(two_regime(9, 600)).tape;
    const auto e = RegimeEmbedder::fit(tape, 0, 400, {5, 3});
    auto build = [&]
    {
        std::vector<Vec> train;
        for (std::size_t t = 5; t < 400; ++t)
            train.push_back(e.embed(tape, t));
        const auto det = ShockDetector::fit(train, 0.95);
        ShockLedger l(2.0);
        for (std::size_t t = 5; t < tape.days(); ++t)
        {
            const Vec u = e.embed(tape, t);
            if (det.is_shock(u))
                l.assign(u, t, tape.dates[t], tape.macro.row(static_cast<Eigen::Index>(t)).transpose(),
                         tape.returns.row(static_cast<Eigen::Index>(t - 1)).transpose(), tape.asset_ids);
        }
        return l.to_json(tape.macro_ids).dump();
    };
    CHECK(build() == build());
}
