#include "doctest.h"

#include "scr/env.hpp"
#include "scr/rng.hpp"

#include <cmath>

using namespace scr;
using namespace scr::env;

namespace
{
    Vec vec(std::initializer_list<double> xs)
    {
        Vec v(static_cast<Eigen::Index>(xs.size()));
        Eigen::Index i = 0;
        for (double x : xs)
            v(i++) = x;
        return v;
    }

    Vec random_vec(Rng &rng, Eigen::Index n, double scale)
    {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v(i) = scale * standard_normal(rng);
        return v;
    }

    /// Brute-force projection on the 2-asset slice w = (s, 1 - s) at grid resolution 1e-3.
    Vec grid_projection(const Vec &a, double lo, double hi)
    {
        double best = 1e300;
        Vec arg;
        for (int i = 0; i <= 1000; ++i)
        {
            const Vec w = vec({i * 1e-3, 1.0 - i * 1e-3});
            if (w.minCoeff() < lo - 1e-12 || w.maxCoeff() > hi + 1e-12)
                continue;
            const double d = (a - w).squaredNorm();
            if (d < best)
            {
                best = d;
                arg = w;
            }
        }
        return arg;
    }

    Vec random_feasible(Rng &rng, std::size_t n, const ConstraintSet &c)
    {
        return project_box_simplex(random_vec(rng, static_cast<Eigen::Index>(n), 1.0), c.lo, c.hi);
    }
}

TEST_CASE("projection matches the grid oracle on two assets")
{
    const ConstraintSet loose{0.0, 1.0, 2.0};
    const Vec w_prev = vec({0.5, 0.5});
    CHECK((project(vec({10, -10}), w_prev, loose) - vec({1, 0})).norm() < 1e-12);

    Rng rng(1);
    for (int trial = 0; trial < 300; ++trial)
    {
        const double lo = trial % 3 == 0 ? 0.1 : 0.0;
        const double hi = trial % 2 == 0 ? 0.8 : 1.0;
        const Vec a = random_vec(rng, 2, 2.0);
        const Vec w = project_box_simplex(a, lo, hi);
        CHECK((w - grid_projection(a, lo, hi)).lpNorm<Eigen::Infinity>() <= 1e-3);
    }
}

TEST_CASE("projection is feasible, idempotent and optimal")
{
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial)
    {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 9);
        ConstraintSet c;
        c.hi = std::max(0.35, 1.5 / static_cast<double>(n));
        c.lo = trial % 4 == 0 ? 0.02 : 0.0;
        c.turnover_cap = 0.3;
        c.validate(n);
        const Vec w_prev = random_feasible(rng, n, c);
        const Vec a = random_vec(rng, static_cast<Eigen::Index>(n), trial % 5 == 0 ? 100.0 : 1.0);
        const Vec w = project(a, w_prev, c);
        CHECK(c.feasible(w, w_prev, 1e-12));
        CHECK(project(w, w_prev, c) == w);

        // box-simplex stage: no feasible point is closer to a
        const Vec p = project_box_simplex(a, c.lo, c.hi);
        for (int k = 0; k < 20; ++k)
        {
            const Vec q = random_feasible(rng, n, c);
            CHECK((a - p).squaredNorm() <= (a - q).squaredNorm() + 1e-12);
        }
    }
}

TEST_CASE("projection degenerate cases")
{
    const ConstraintSet c{0.0, 0.5, 0.3};
    const Vec w_prev = vec({0.25, 0.25, 0.25, 0.25});
    const Vec inside = vec({0.3, 0.2, 0.25, 0.25});
    CHECK(project(inside, w_prev, c) == inside);

    ConstraintSet frozen = c;
    frozen.turnover_cap = 0.0;
    CHECK(project(vec({5, -1, 0, 3}), w_prev, frozen) == w_prev);

    // the shrink leaves exactly the cap as turnover
    const Vec w = project(vec({5, -1, 0, 3}), w_prev, c);
    CHECK((w - w_prev).lpNorm<1>() == doctest::Approx(0.3).epsilon(1e-12));

    CHECK_THROWS_AS((ConstraintSet{0.0, 0.35, 0.3}.validate(2)), ConfigError);
    CHECK_THROWS_AS((ConstraintSet{0.3, 1.0, 0.3}.validate(4)), ConfigError);
    CHECK_NOTHROW((ConstraintSet{0.0, 0.35, 0.3}.validate(3)));
}

TEST_CASE("transaction cost")
{
    const Vec a = vec({0.5, 0.5}), b = vec({1.0, 0.0}), c = vec({0.0, 1.0});
    CHECK(cost(a, a) == 0.0);
    CHECK(cost(b, c) == doctest::Approx(0.0020).epsilon(1e-15));
    CHECK(cost(a, b) * 2.0 == doctest::Approx(cost(c, b)));
    CHECK(cost(b, c, 5e-4) == doctest::Approx(0.0010));
}

TEST_CASE("Upd: zero outcome, exogenous z and counterfactual equality")
{
    EnvParams p;
    State phi = initial_state(3, vec({1, 2}), 2);
    phi.h.ewma = 0.01;
    phi.h.rel_wealth = 0.9;
    const Vec w = phi.h.w_prev;
    const Vec z_next = vec({3, 4});
    const State next = upd(phi, w, Vec::Zero(2), z_next, p);
    CHECK(next.h.ewma == doctest::Approx(0.94 * 0.01).epsilon(1e-15));
    CHECK(next.h.drawdown() == doctest::Approx(phi.h.drawdown()));
    CHECK(next.t == 4);
    CHECK(next.z == z_next);

    const Vec x = vec({0.01, -0.02}), y = vec({-0.03, 0.05});
    CHECK(upd(phi, w, x, z_next, p).z == upd(phi, w, y, z_next, p).z);
    CHECK(counterfactual_state(phi, w, x, z_next, p) == upd(phi, w, x, z_next, p));
}

TEST_CASE("Upd is Lipschitz in the input return through h")
{
    EnvParams p;
    Rng rng(5);
    for (int probe = 0; probe < 10000; ++probe)
    {
        const Eigen::Index n = 2 + probe % 6;
        State phi = initial_state(0, Vec::Zero(1), static_cast<std::size_t>(n));
        phi.h.ewma = 0.01 * standard_normal(rng);
        phi.h.rel_wealth = uniform01(rng);
        Vec w = random_vec(rng, n, 1.0).cwiseAbs();
        w /= w.sum();
        const Vec x = random_vec(rng, n, probe % 10 == 0 ? 1.0 : 0.02);
        const Vec y = random_vec(rng, n, probe % 10 == 0 ? 1.0 : 0.02);
        const double lhs = h_distance(update_memory(phi.h, w, x, p), update_memory(phi.h, w, y, p));
        CHECK(lhs <= lipschitz_h(w, p.ewma_decay) * (x - y).norm() + 1e-15);
    }
}

TEST_CASE("entropic risk and reward decomposition")
{
    const RewardParams p;
    const Vec w = vec({0.6, 0.4}), w_prev = vec({0.5, 0.5});

    // constant payoffs c: Risk = -c
    Mat same(4, 2);
    same.setConstant(0.01);
    const auto r = reward(same, 1.0, w, w_prev, p);
    CHECK(r.risk == doctest::Approx(-0.01).epsilon(1e-14));
    const double reg = cost(w, w_prev) + 0.01 * w.squaredNorm();
    CHECK(r.total == doctest::Approx(0.01 - 0.5 * (-0.01 + 10 * 1e-8) - reg).epsilon(1e-14));

    // fully gated
    Rng rng(9);
    Mat samples(64, 2);
    for (Eigen::Index i = 0; i < samples.size(); ++i)
        samples(i) = 0.02 * standard_normal(rng);
    const auto gated = reward(samples, 0.0, w, w_prev, p);
    CHECK(gated.mean_gated_payoff == 0.0);
    CHECK(gated.risk == 0.0);
    CHECK(gated.total == doctest::Approx(-0.5 * 10 * 1e-8 - reg).epsilon(1e-14));

    const auto full = reward(samples, 0.7, w, w_prev, p);
    CHECK(std::abs(full.total - (full.mean_gated_payoff - p.lambda_rho * (full.risk + p.eta * p.eps) - full.regularizer)) < 1e-12);

    // the reward moves with lambda_rho by -(Risk + eta eps): lower when that term is positive
    RewardParams harsher = p;
    harsher.lambda_rho = 1.0;
    const Mat centered = samples.rowwise() - samples.colwise().mean();
    const auto base = reward(centered, 1.0, w, w_prev, p);
    REQUIRE(base.risk > 0.0);
    CHECK(reward(centered, 1.0, w, w_prev, harsher).total < base.total);
    const Mat drifting = (samples * 0.01).array() + 0.05;
    const auto up = reward(drifting, 1.0, w, w_prev, p);
    REQUIRE(up.risk + p.eta * p.eps < 0.0);
    CHECK(reward(drifting, 1.0, w, w_prev, harsher).total > up.total);

    // no overflow for large payoffs
    CHECK(std::isfinite(entropic_risk(vec({-500.0, 0.0}), 10.0)));
    CHECK(entropic_risk(vec({-500.0, 0.0}), 10.0) == doctest::Approx(500.0 - std::log(2.0) / 10.0));
}

TEST_CASE("entropic risk is non-increasing in each payoff")
{
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial)
    {
        const Vec u = random_vec(rng, 8, 0.05);
        const auto i = static_cast<Eigen::Index>(uniform_index(rng, 8));
        Vec bumped = u;
        bumped(i) += 1e-4 * (1.0 + uniform01(rng));
        CHECK(entropic_risk(bumped, 10.0) <= entropic_risk(u, 10.0));
    }
}
