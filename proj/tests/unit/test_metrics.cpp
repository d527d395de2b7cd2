#include "doctest.h"

#include "scr/metrics.hpp"
#include "scr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace scr;
using namespace scr::metrics;

namespace
{
    double brute_max_drawdown(const std::vector<double> &r)
    {
        const auto w = wealth_curve(r);
        double dd = 0.0;
        for (std::size_t t = 0; t < w.size(); ++t)
            for (std::size_t s = 0; s <= t; ++s)
                dd = std::max(dd, 1.0 - w[t] / w[s]);
        return dd;
    }
}

TEST_CASE("Sharpe ratio")
{
    CHECK_FALSE(sharpe(std::vector<double>(10, 0.01)).has_value());
    CHECK_FALSE(sharpe({0.01}).has_value());
    std::vector<double> alt;
    for (int i = 0; i < 100; ++i)
        alt.push_back(i % 2 ? 0.01 : -0.01);
    CHECK(*sharpe(alt) == doctest::Approx(0.0));

    Rng rng(1);
    const std::size_t T = 2520;
    std::vector<double> r(T);
    for (auto &x : r)
        x = 0.0004 + 0.01 * standard_normal(rng);
    const double expected = 0.0004 / 0.01 * std::sqrt(252.0);
    CHECK(std::abs(*sharpe(r) - expected) <= 3.0 * std::sqrt(252.0 / static_cast<double>(T)));

    std::vector<double> scaled = r;
    for (auto &x : scaled)
        x *= 3.0;
    CHECK(*sharpe(scaled) == doctest::Approx(*sharpe(r)).epsilon(1e-12));
    CHECK(ann_vol(scaled) == doctest::Approx(3.0 * ann_vol(r)).epsilon(1e-12));
    CHECK(ann_vol(r) >= 0.0);
}

TEST_CASE("maximum drawdown")
{
    CHECK(max_drawdown({0.01, 0.02, 0.0, 0.03}) == 0.0);
    CHECK(max_drawdown({-0.5}) == doctest::Approx(0.5));
    CHECK(max_drawdown({0.1, -0.5, 0.2}) == doctest::Approx(0.5));
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial)
    {
        std::vector<double> r(100);
        for (auto &x : r)
            x = 0.03 * standard_normal(rng);
        const double dd = max_drawdown(r);
        CHECK(std::abs(dd - brute_max_drawdown(r)) <= 1e-12);
        CHECK(dd >= 0.0);
        CHECK(dd <= 1.0);
    }
}

TEST_CASE("Calmar ratio")
{
    CHECK_FALSE(calmar({0.01, 0.02}).has_value());
    std::vector<double> r{-0.2};
    const double g = std::pow(1.1 / 0.8, 1.0 / 251.0) - 1.0;
    for (int i = 0; i < 251; ++i)
        r.push_back(g);
    CHECK(cagr(r) == doctest::Approx(0.10).epsilon(1e-12));
    CHECK(max_drawdown(r) == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(*calmar(r) == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial)
    {
        std::vector<double> x(60);
        for (auto &v : x)
            v = 0.002 * standard_normal(rng) + (trial % 2 ? 0.001 : -0.001);
        if (const auto c = calmar(x))
            CHECK((*c > 0) == (cagr(x) > 0));
    }
}

TEST_CASE("turnover")
{
    const Vec a = Vec::Constant(2, 0.5);
    CHECK(turnover({a, a, a}) == 0.0);
    Vec e0(2), e1(2);
    e0 << 1, 0;
    e1 << 0, 1;
    CHECK(turnover({e0, e1, e0, e1}) == doctest::Approx(2.0));
    CHECK(turnover({a}) == 0.0);
}

TEST_CASE("scenario/real gap")
{
    const std::vector<double> real{0.01, -0.02, 0.005, 0.0};
    CHECK(gap_final(real, real) == 0.0);
    std::vector<double> off = real;
    for (auto &x : off)
        x += 0.003;
    CHECK(gap_final(off, real) == doctest::Approx(0.003).epsilon(1e-12));

    Rng rng(4);
    std::vector<double> s(50), r(50);
    double ss = 0.0, rs = 0.0;
    for (std::size_t i = 0; i < 50; ++i)
    {
        s[i] = standard_normal(rng);
        r[i] = standard_normal(rng);
    }
    for (std::size_t i = 0; i < 50; ++i)
        ss += s[i];
    for (std::size_t i = 0; i < 50; ++i)
        rs += r[i];
    CHECK(gap_final(s, r) == doctest::Approx(std::abs(ss / 50 - rs / 50)).epsilon(1e-12));
    CHECK_THROWS_AS(gap_final({1.0}, {1.0, 2.0}), DataError);
}

TEST_CASE("residual AUC")
{
    CHECK(resid_auc(std::vector<double>(7, 0.3)) == doctest::Approx(0.3));
    CHECK(resid_auc({0.3}) == 0.3);
    std::vector<double> lin(11);
    for (std::size_t i = 0; i < 11; ++i)
        lin[i] = 2.0 * (1.0 - static_cast<double>(i) / 10.0);
    CHECK(resid_auc(lin) == doctest::Approx(1.0).epsilon(1e-14));

    Rng rng(5);
    std::vector<double> y(100);
    for (auto &v : y)
        v = uniform01(rng);
    // midpoint Riemann sum of the piecewise-linear curve
    const std::size_t M = 990000;
    double riemann = 0.0;
    for (std::size_t k = 0; k < M; ++k)
    {
        const double x = (static_cast<double>(k) + 0.5) / static_cast<double>(M) * 99.0;
        const auto i = static_cast<std::size_t>(x);
        const double f = x - static_cast<double>(i);
        riemann += (1.0 - f) * y[i] + f * y[std::min<std::size_t>(i + 1, 99)];
    }
    riemann /= static_cast<double>(M);
    CHECK(std::abs(resid_auc(y) - riemann) <= 1e-6);
}

TEST_CASE("quartile summary")
{
    CHECK(quartiles({2.0}).median == 2.0);
    CHECK(quartiles({2.0}).q1 == 2.0);
    CHECK(quartiles({2.0}).q3 == 2.0);
    const auto q = quartiles({5, 1, 4, 2, 3});
    CHECK(q.median == 3.0);
    CHECK(q.q1 == 2.0);
    CHECK(q.q3 == 4.0);

    MetricsReport a, b, c;
    a.sharpe = 1.0;
    b.sharpe = 2.0;
    c.sharpe = std::nullopt;
    a.max_dd = 0.1;
    b.max_dd = 0.3;
    c.max_dd = 0.2;
    const auto row = summarize("x", {a, b, c});
    const auto rev = summarize("x", {c, b, a});
    REQUIRE(row.cells[0].has_value());
    CHECK(row.cells[0]->count == 2);
    CHECK(row.cells[0]->median == 1.5);
    CHECK(row.cells[3]->median == rev.cells[3]->median);
    CHECK_FALSE(row.cells[5].has_value());

    std::ostringstream out;
    write_summary_csv(out, {row});
    const auto text = out.str();
    CHECK(text.rfind("strategy,sharpe_median,sharpe_q1,sharpe_q3,calmar_median", 0) == 0);
    CHECK(text.find("x,1.5,1.25,1.75,NA,NA,NA") != std::string::npos);
    CHECK(format_number(0.1) == "0.10000000000000001");
}
