#include "scr/env.hpp"

#include <algorithm>
#include <cmath>

namespace scr::env
{
    void ConstraintSet::validate(std::size_t n) const
    {
        const auto N = static_cast<double>(n);
        if (n < 1 || !(lo <= hi) || !(N * lo <= 1.0 + 1e-12) || !(N * hi >= 1.0 - 1e-12))
        {
            throw ConfigError("empty feasible set: need n*lo <= 1 <= n*hi (n=" + std::to_string(n) +
                              ", lo=" + std::to_string(lo) + ", hi=" + std::to_string(hi) + ")");
        }
        if (!(turnover_cap >= 0.0))
        {
            throw ConfigError("turnover cap must be non-negative");
        }
    }

    bool ConstraintSet::feasible(const Vec &w, const Vec &w_prev, double tol) const
    {
        return std::abs(w.sum() - 1.0) <= tol && w.minCoeff() >= lo - tol && w.maxCoeff() <= hi + tol &&
               (w - w_prev).lpNorm<1>() <= turnover_cap + tol;
    }

    namespace
    {
        double clipped_sum(const Vec &a, double tau, double lo, double hi)
        {
            return (a.array() - tau).max(lo).min(hi).sum();
        }

        bool in_box_simplex(const Vec &a, double lo, double hi)
        {
            return std::abs(a.sum() - 1.0) <= 1e-12 && a.minCoeff() >= lo && a.maxCoeff() <= hi;
        }
    }

    Vec project_box_simplex(const Vec &a, double lo, double hi)
    {
        if (!all_finite(a))
        {
            throw DataError("projection input must be finite");
        }
        if (in_box_simplex(a, lo, hi))
        {
            return a;
        }
        // sum_i clip(a_i - tau, lo, hi) is non-increasing in tau; bracket and bisect
        double left = a.minCoeff() - hi;
        double right = a.maxCoeff() - lo;
        for (int it = 0; it < 200 && right - left > 0.0; ++it)
        {
            const double mid = 0.5 * (left + right);
            if (mid <= left || mid >= right)
                break;
            (clipped_sum(a, mid, lo, hi) > 1.0 ? left : right) = mid;
        }
        double tau = 0.5 * (left + right);
        // exact shift on the active set at the bisected point
        double fixed = 0.0, free_sum = 0.0;
        int n_free = 0;
        for (Eigen::Index i = 0; i < a.size(); ++i)
        {
            const double x = a(i) - tau;
            if (x <= lo)
                fixed += lo;
            else if (x >= hi)
                fixed += hi;
            else
            {
                free_sum += a(i);
                ++n_free;
            }
        }
        if (n_free > 0)
        {
            const double exact = (free_sum + fixed - 1.0) / n_free;
            if (std::abs(clipped_sum(a, exact, lo, hi) - 1.0) <= std::abs(clipped_sum(a, tau, lo, hi) - 1.0))
                tau = exact;
        }
        return (a.array() - tau).max(lo).min(hi).matrix();
    }

    Vec project(const Vec &a, const Vec &w_prev, const ConstraintSet &c)
    {
        Vec w = project_box_simplex(a, c.lo, c.hi);
        const double move = (w - w_prev).lpNorm<1>();
        if (move > c.turnover_cap * (1.0 + 1e-12) + 1e-15)
        {
            const double theta = c.turnover_cap / move;
            w = w_prev + theta * (w - w_prev);
        }
        return w;
    }

    double cost(const Vec &w, const Vec &w_prev, double rate)
    {
        return rate * (w - w_prev).lpNorm<1>();
    }

    State initial_state(std::size_t t, const Vec &z, std::size_t n_assets)
    {
        State s;
        s.t = t;
        s.z = z;
        s.h.w_prev = Vec::Constant(static_cast<Eigen::Index>(n_assets), 1.0 / static_cast<double>(n_assets));
        return s;
    }

    double net_return(const Vec &w, const Vec &x, const Vec &w_prev, double cost_rate)
    {
        return w.dot(x) - cost(w, w_prev, cost_rate);
    }

    Memory update_memory(const Memory &h, const Vec &w, const Vec &x, const EnvParams &p)
    {
        const double u = net_return(w, x, h.w_prev, p.cost_rate);
        Memory next;
        next.ewma = p.ewma_decay * h.ewma + (1.0 - p.ewma_decay) * u;
        next.w_prev = w;
        next.rel_wealth = std::clamp(h.rel_wealth * (1.0 + u), 0.0, 1.0);
        return next;
    }

    State upd(const State &phi, const Vec &w, const Vec &x, const Vec &z_next, const EnvParams &p)
    {
        State next;
        next.t = phi.t + 1;
        next.z = z_next;
        next.h = update_memory(phi.h, w, x, p);
        return next;
    }

    State counterfactual_state(const State &phi, const Vec &w, const Vec &r_bar_scen, const Vec &z_next,
                               const EnvParams &p)
    {
        return upd(phi, w, r_bar_scen, z_next, p);
    }

    double h_distance(const Memory &a, const Memory &b)
    {
        double d = std::max(std::abs(a.ewma - b.ewma), std::abs(a.drawdown() - b.drawdown()));
        if (a.w_prev.size() != b.w_prev.size())
        {
            throw DataError("memories of different dimension");
        }
        if (a.w_prev.size() > 0)
            d = std::max(d, (a.w_prev - b.w_prev).lpNorm<Eigen::Infinity>());
        return d;
    }

    double lipschitz_h(const Vec &w, double ewma_decay)
    {
        // |<w, x - y>| <= ||w||_2 ||x - y||_2 <= ||w||_1 ||x - y||_2; the EWMA scales it by
        // (1 - decay) and the clamped drawdown by at most 1; weights do not depend on x.
        return w.lpNorm<1>() * std::max(1.0 - ewma_decay, 1.0);
    }

    double entropic_risk(const Vec &payoffs, double eta)
    {
        if (payoffs.size() == 0)
        {
            throw DataError("entropic risk of an empty sample");
        }
        if (!(eta > 0.0))
        {
            throw ConfigError("entropic temperature must be positive");
        }
        const Eigen::ArrayXd z = -eta * payoffs.array();
        const double m = z.maxCoeff();
        return (m + std::log((z - m).exp().mean())) / eta;
    }

    RewardBreakdown reward(const Mat &samples, double g, const Vec &w, const Vec &w_prev, const RewardParams &p)
    {
        if (samples.rows() < 1)
        {
            throw DataError("reward needs at least one scenario");
        }
        const Vec u = g * (samples * w);
        RewardBreakdown r;
        r.mean_gated_payoff = u.mean();
        r.risk = entropic_risk(u, p.eta);
        r.risk_penalty = p.lambda_rho * (r.risk + p.eta * p.eps);
        r.cost = cost(w, w_prev, p.cost_rate);
        r.regularizer = r.cost + p.lambda_conc * w.squaredNorm();
        r.total = r.mean_gated_payoff - r.risk_penalty - r.regularizer;
        return r;
    }
}
