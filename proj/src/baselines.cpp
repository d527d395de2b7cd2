#include "scr/baselines.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace scr::baselines
{
    std::string to_string(AllocatorKind k)
    {
        switch (k)
        {
        case AllocatorKind::EqualWeight:
            return "equal_weight";
        case AllocatorKind::Markowitz:
            return "markowitz";
        case AllocatorKind::InverseVol:
            return "inverse_vol";
        case AllocatorKind::GmvLedoitWolf:
            return "gmv_lw";
        }
        return "equal_weight";
    }

    AllocatorKind parse_allocator(const std::string &s)
    {
        for (auto k : {AllocatorKind::EqualWeight, AllocatorKind::Markowitz, AllocatorKind::InverseVol,
                       AllocatorKind::GmvLedoitWolf})
        {
            if (to_string(k) == s)
                return k;
        }
        throw ConfigError("unknown allocator '" + s + "' (equal_weight, markowitz, inverse_vol, gmv_lw)");
    }

    void AllocatorSpec::validate(std::size_t n_assets) const
    {
        if (kind == AllocatorKind::EqualWeight)
            return;
        if (lookback < n_assets + 2)
        {
            throw ConfigError(to_string(kind) + " needs lookback >= N + 2 (lookback " + std::to_string(lookback) +
                              ", N " + std::to_string(n_assets) + ")");
        }
        if (kind == AllocatorKind::Markowitz && !(risk_aversion > 0.0))
        {
            throw ConfigError("markowitz risk aversion must be positive");
        }
    }

    Vec equal_weight(std::size_t n)
    {
        if (n < 1)
            throw ConfigError("equal weight needs at least one asset");
        return Vec::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
    }

    double max_eigenvalue(const Mat &sym)
    {
        Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
        return es.eigenvalues().maxCoeff();
    }

    namespace
    {
        /// Accelerated projected gradient ascent on mu^T w - (gamma/2) w^T S w.
        Vec projected_gradient(const Vec &mu, const Mat &sigma, double gamma, double lo, double hi)
        {
            if (!all_finite(mu) || !all_finite(sigma) || !std::isfinite(gamma))
            {
                throw DataError("non-finite allocator input");
            }
            const auto n = mu.size();
            const double lmax = std::max(max_eigenvalue(sigma), 1e-300);
            const double step = 1.0 / (gamma * lmax);
            Vec w = env::project_box_simplex(equal_weight(static_cast<std::size_t>(n)), lo, hi);
            Vec y = w;
            double s = 1.0;
            for (int it = 0; it < 500; ++it)
            {
                const Vec next = env::project_box_simplex(y + step * (mu - gamma * (sigma * y)), lo, hi);
                const double s_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * s * s));
                y = next + ((s - 1.0) / s_next) * (next - w);
                w = next;
                s = s_next;
            }
            return w;
        }

        Mat sample_covariance(const Mat &window)
        {
            const Mat c = window.rowwise() - window.colwise().mean();
            return c.transpose() * c / static_cast<double>(window.rows() - 1);
        }
    }

    Vec markowitz(const Vec &mu, const Mat &sigma, double gamma, double lo, double hi)
    {
        if (!(gamma > 0.0))
            throw ConfigError("risk aversion must be positive");
        return projected_gradient(mu, sigma, gamma, lo, hi);
    }

    Vec min_variance(const Mat &sigma, double lo, double hi)
    {
        return projected_gradient(Vec::Zero(sigma.rows()), sigma, 1.0, lo, hi);
    }

    Vec inverse_vol(const Vec &vols)
    {
        const Vec inv = vols.cwiseMax(1e-6).cwiseInverse();
        return inv / inv.sum();
    }

    LedoitWolf ledoit_wolf(const Mat &window)
    {
        const auto n = window.rows();
        const auto p = window.cols();
        if (n < 2 || p < 1 || !all_finite(window))
        {
            throw DataError("Ledoit-Wolf needs a finite window of at least two rows");
        }
        const Mat X = window.rowwise() - window.colwise().mean();
        const double nd = static_cast<double>(n), pd = static_cast<double>(p);
        const Mat S = X.transpose() * X / nd;
        const double mu = S.trace() / pd;
        const Mat X2 = X.array().square().matrix();
        const double beta_sum = (X2.transpose() * X2).sum() / nd;
        const double delta_sum = S.squaredNorm();
        double beta = (beta_sum - delta_sum) / (pd * nd);
        const double delta = (delta_sum - 2.0 * mu * S.trace() + pd * mu * mu) / pd;
        beta = std::min(beta, delta);
        LedoitWolf out;
        out.shrinkage = beta <= 0.0 || delta <= 0.0 ? 0.0 : std::clamp(beta / delta, 0.0, 1.0);
        out.covariance = (1.0 - out.shrinkage) * S;
        out.covariance.diagonal().array() += out.shrinkage * mu;
        return out;
    }

    Vec gmv_ledoit_wolf(const Mat &window, double lo, double hi)
    {
        return min_variance(ledoit_wolf(window).covariance, lo, hi);
    }

    Vec allocate(const AllocatorSpec &spec, const tape::ReturnTape &tape, std::size_t t, const env::ConstraintSet &c)
    {
        const std::size_t n = tape.assets();
        if (spec.kind == AllocatorKind::EqualWeight)
            return env::project_box_simplex(equal_weight(n), c.lo, c.hi);
        spec.validate(n);
        if (t < spec.lookback || t > static_cast<std::size_t>(tape.returns.rows()))
        {
            throw DataError("allocator window [" + std::to_string(static_cast<long>(t) - static_cast<long>(spec.lookback)) +
                            ", " + std::to_string(t) + ") is outside the tape");
        }
        const Mat window = tape.returns.middleRows(static_cast<Eigen::Index>(t - spec.lookback),
                                                   static_cast<Eigen::Index>(spec.lookback));
        switch (spec.kind)
        {
        case AllocatorKind::Markowitz:
            return markowitz(window.colwise().mean().transpose(), sample_covariance(window), spec.risk_aversion, c.lo, c.hi);
        case AllocatorKind::InverseVol:
            return env::project_box_simplex(inverse_vol(sample_covariance(window).diagonal().cwiseSqrt()), c.lo, c.hi);
        case AllocatorKind::GmvLedoitWolf:
            return gmv_ledoit_wolf(window, c.lo, c.hi);
        case AllocatorKind::EqualWeight:
            break;
        }
        return env::project_box_simplex(equal_weight(n), c.lo, c.hi);
    }

    std::vector<agent::TrainConfig> baseline_rl_configs(const agent::TrainConfig &base)
    {
        using agent::RewardSource;
        std::vector<agent::TrainConfig> out;

        auto replay = base;
        replay.name = "ppo_replay";
        replay.reward_source = RewardSource::Realized;
        replay.scenario_features = false;
        replay.use_gate = false;
        replay.beta_cf = 0.0;
        replay.reward.lambda_rho = 0.0;
        replay.reward.lambda_conc = 0.0;
        out.push_back(replay);

        auto boot = base;
        boot.name = "bootrollout_ppo";
        boot.reward_source = RewardSource::Bootstrap;
        boot.scenario_features = false;
        boot.use_gate = false;
        boot.beta_cf = 0.0;
        boot.reward.lambda_conc = 0.0;
        out.push_back(boot);

        auto reward_only = base;
        reward_only.name = "scr_ppo_reward_only";
        reward_only.reward_source = RewardSource::Scenario;
        reward_only.beta_cf = 0.0;
        reward_only.reward.lambda_conc = 0.0;
        out.push_back(reward_only);

        auto nocf = base;
        nocf.name = "scr_ppo_nocf";
        nocf.reward_source = RewardSource::Scenario;
        nocf.beta_cf = 0.0;
        out.push_back(nocf);

        auto full = base;
        full.name = "scr_ppo_full";
        full.reward_source = RewardSource::Scenario;
        out.push_back(full);
        return out;
    }
}
