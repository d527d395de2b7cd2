/**
 * @file baselines.hpp
 * @brief Classical allocators (1/N, mean-variance, inverse volatility, Ledoit-Wolf GMV) and the
 * RL ablation configurations.
 */
#pragma once

#include "scr/agent.hpp"
#include "scr/common.hpp"
#include "scr/env.hpp"
#include "scr/tape.hpp"

#include <string>
#include <vector>

namespace scr::baselines
{
    enum class AllocatorKind
    {
        EqualWeight,
        Markowitz,
        InverseVol,
        GmvLedoitWolf
    };

    std::string to_string(AllocatorKind k);
    AllocatorKind parse_allocator(const std::string &s);

    struct AllocatorSpec
    {
        AllocatorKind kind = AllocatorKind::EqualWeight;
        std::size_t lookback = 252;
        double risk_aversion = 5.0;

        /// Covariance-based allocators need lookback >= N + 2.
        void validate(std::size_t n_assets) const;
    };

    Vec equal_weight(std::size_t n);

    /// Largest eigenvalue of a symmetric matrix.
    double max_eigenvalue(const Mat &sym);

    /// Maximizes mu^T w - (gamma/2) w^T S w over {sum w = 1, lo <= w <= hi}: 500 accelerated
    /// projected-gradient steps of size 1/(gamma lambda_max(S)) from 1/N.
    Vec markowitz(const Vec &mu, const Mat &sigma, double gamma, double lo, double hi);

    /// Minimizes w^T S w over the same set with the same solver.
    Vec min_variance(const Mat &sigma, double lo, double hi);

    /// w_i proportional to 1 / max(sigma_i, 1e-6).
    Vec inverse_vol(const Vec &vols);

    struct LedoitWolf
    {
        Mat covariance; // (1 - rho) S + rho (tr(S)/N) I
        double shrinkage = 0.0;
    };

    /// Shrinkage toward the scaled identity with the Ledoit-Wolf optimal intensity; S is the
    /// (1/n) covariance of the centered window (rows are days).
    LedoitWolf ledoit_wolf(const Mat &window);

    Vec gmv_ledoit_wolf(const Mat &window, double lo, double hi);

    /// Target weights for decision day t from return rows [t - lookback, t) (days realized by t).
    Vec allocate(const AllocatorSpec &spec, const tape::ReturnTape &tape, std::size_t t, const env::ConstraintSet &c);

    /// The RL ablation grid derived from a base config: replay, bootstrap rollout, reward-only,
    /// no-counterfactual and full.
    std::vector<agent::TrainConfig> baseline_rl_configs(const agent::TrainConfig &base);
}
