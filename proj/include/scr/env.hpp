/**
 * @file env.hpp
 * @brief Portfolio environment: feasibility projection, costs, the outcome-updated state and
 * the risk-aware scenario reward.
 */
#pragma once

#include "scr/common.hpp"

namespace scr::env
{
    /// Long-only box-simplex slice with a turnover cap.
    struct ConstraintSet
    {
        double lo = 0.0;
        double hi = 0.35;
        double turnover_cap = 0.30; // on ||w - w_prev||_1

        /// Throws ConfigError unless the box slice {sum w = 1, lo <= w <= hi} is non-empty for n assets.
        void validate(std::size_t n) const;
        bool feasible(const Vec &w, const Vec &w_prev, double tol = 1e-9) const;
    };

    /// Euclidean projection onto {sum w = 1, lo <= w <= hi} (bisection on the shift, then exact).
    Vec project_box_simplex(const Vec &a, double lo, double hi);

    /// Box-simplex projection followed by a segment shrink toward w_prev when the turnover cap binds.
    Vec project(const Vec &a, const Vec &w_prev, const ConstraintSet &c);

    /// Proportional cost rate * ||w - w_prev||_1.
    double cost(const Vec &w, const Vec &w_prev, double rate = 1e-3);

    struct Memory
    {
        double ewma = 0.0;       // EWMA of net portfolio returns
        Vec w_prev;              // weights held into the next step
        double rel_wealth = 1.0; // wealth relative to its running peak, in [0, 1]

        double drawdown() const { return 1.0 - rel_wealth; }
        bool operator==(const Memory &other) const = default;
    };

    struct EnvParams
    {
        ConstraintSet constraints;
        double cost_rate = 1e-3;
        double ewma_decay = 0.94;
    };

    /// phi = (z, h). z is exogenous context for decision day t; h is the outcome-updated memory.
    struct State
    {
        std::size_t t = 0;
        Vec z;
        Memory h;

        bool operator==(const State &other) const = default;
    };

    State initial_state(std::size_t t, const Vec &z, std::size_t n_assets);

    /// Net portfolio return <w, x> - cost(w, w_prev).
    double net_return(const Vec &w, const Vec &x, const Vec &w_prev, double cost_rate);

    Memory update_memory(const Memory &h, const Vec &w, const Vec &x, const EnvParams &p);

    /// Upd: advances the state with input return x; z_next is the exogenous context of day t+1.
    State upd(const State &phi, const Vec &w, const Vec &x, const Vec &z_next, const EnvParams &p);

    /// Counterfactual continuation: the same map fed with the scenario mean.
    State counterfactual_state(const State &phi, const Vec &w, const Vec &r_bar_scen, const Vec &z_next,
                               const EnvParams &p);

    /// Sup-norm over memory components (ewma, w_prev entries, drawdown).
    double h_distance(const Memory &a, const Memory &b);

    /// Lipschitz constant of x -> h' under h_distance and the Euclidean norm on x.
    double lipschitz_h(const Vec &w, double ewma_decay);

    struct RewardParams
    {
        double eta = 10.0;
        double lambda_rho = 0.5;
        double lambda_conc = 0.01;
        double eps = 1e-8;
        double cost_rate = 1e-3;
    };

    struct RewardBreakdown
    {
        double mean_gated_payoff = 0.0;
        double risk = 0.0;         // Risk_eta
        double risk_penalty = 0.0; // lambda_rho * (Risk_eta + eta * eps)
        double cost = 0.0;
        double regularizer = 0.0;  // cost + lambda_conc * ||w||^2
        double total = 0.0;
    };

    /// (1/eta) log mean exp(-eta u), evaluated with a max shift.
    double entropic_risk(const Vec &payoffs, double eta);

    /// Risk-aware scenario reward over S sampled return rows with regime gate g.
    RewardBreakdown reward(const Mat &samples, double g, const Vec &w, const Vec &w_prev, const RewardParams &p);
}
