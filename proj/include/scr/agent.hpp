/**
 * @file agent.hpp
 * @brief PPO-Clip actor-critic with GAE and the counterfactual-mixed critic target, trained on the
 * logged tape.
 */
#pragma once

#include "scr/common.hpp"
#include "scr/env.hpp"
#include "scr/rng.hpp"
#include "scr/scenario.hpp"
#include "scr/tape.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace scr::agent
{
    /// Activations kept by a forward pass for the backward pass.
    struct MlpCache
    {
        std::vector<Mat> activations; // input, then the output of every layer
    };

    /// Fully connected net with tanh hidden layers and a linear output layer.
    class Mlp
    {
    public:
        Mlp() = default;
        Mlp(const std::vector<std::size_t> &sizes, Rng &rng, double output_scale);

        /// X is batch x input; returns batch x output.
        Mat forward(const Mat &X, MlpCache *cache = nullptr) const;
        /// Flat parameter gradient given dLoss/dOutput (batch x output).
        Vec backward(const MlpCache &cache, const Mat &d_out) const;

        std::size_t num_params() const;
        Vec params() const;
        void set_params(const Vec &p);
        std::size_t input_dim() const { return static_cast<std::size_t>(weights_.front().rows()); }
        std::size_t output_dim() const { return static_cast<std::size_t>(weights_.back().cols()); }
        std::vector<std::size_t> sizes() const;

    private:
        std::vector<Mat> weights_; // in x out
        std::vector<Vec> biases_;
    };

    inline constexpr double kLogStdMin = -5.0;
    inline constexpr double kLogStdMax = 1.0;

    /// Diagonal Gaussian with an MLP mean and state-independent log-std.
    struct GaussianPolicy
    {
        Mlp mean;
        Vec log_std;

        std::size_t num_params() const { return mean.num_params() + static_cast<std::size_t>(log_std.size()); }
        Vec params() const;
        void set_params(const Vec &p); // clamps log-std
        Vec clamped_log_std() const;
        double entropy() const;
    };

    struct Critic
    {
        Mlp net;

        double value(const Vec &features) const;
        Vec values(const Mat &features) const;
    };

    GaussianPolicy make_policy(std::size_t in, std::size_t n_assets, std::size_t hidden, double init_log_std, Rng &rng);
    Critic make_critic(std::size_t in, std::size_t hidden, Rng &rng);

    double gaussian_log_prob(const Vec &a, const Vec &mean, const Vec &log_std);

    struct Action
    {
        Vec a;
        Vec mean;
        double log_prob = 0.0;
    };

    /// Sample (or take the mean of) the pre-projection action; log-prob is of the raw action.
    Action act(const GaussianPolicy &policy, const Vec &features, bool deterministic, Rng &rng);

    /// Adam with an optional per-coordinate clamp on the normalized step, so no parameter moves by
    /// more than lr * step_clamp per update.
    class Adam
    {
    public:
        Adam() = default;
        Adam(std::size_t n, double lr, double step_clamp, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

        /// Returns the parameter increment for gradient g (to be added to the parameters).
        Vec step(const Vec &g);

        double lr() const { return lr_; }
        nlohmann::json to_json() const;
        static Adam from_json(const nlohmann::json &j);

    private:
        double lr_ = 1e-3, clamp_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
        long t_ = 0;
        Vec m_, v_;
    };

    /// Rescales g to the given global norm if it is larger; returns the norm before clipping.
    double clip_grad_norm(Vec &g, double max_norm);

    /// (1 - beta)(r + delta V_next) + beta (r + delta V_cf).
    double mixed_target(double r, double v_next, double v_cf, double delta, double beta_cf);

    /// GAE over TD residuals: A_t = sum_l (delta lambda)^l res_{t+l}.
    Vec gae_from_residuals(const Vec &residuals, double delta, double lambda);
    /// Standard GAE; `values` has length T+1 (terminal bootstrap last).
    Vec gae(const Vec &rewards, const Vec &values, double delta, double lambda);
    /// Zero mean, unit (population) std; a constant vector maps to zeros.
    Vec normalize_advantages(const Vec &a);

    struct Batch
    {
        Mat features;    // T x F
        Mat actions;     // T x N (pre-projection)
        Vec log_prob_old;
        Vec advantages;  // normalized
        Vec targets;     // Y
    };

    struct PpoConfig
    {
        double clip = 0.2;
        double entropy_coef = 1e-3;
        std::size_t epochs = 4;
        std::size_t minibatch = 256;
        double max_grad_norm = 0.5;
    };

    /// Clipped surrogate (negated, minus entropy bonus) on rows `idx`; fills grad when non-null.
    double actor_loss(const GaussianPolicy &policy, const Batch &batch, const std::vector<std::size_t> &idx,
                      const PpoConfig &cfg, Vec *grad);
    /// Mean squared error of V against the targets on rows `idx`.
    double critic_loss(const Critic &critic, const Mat &features, const Vec &targets,
                       const std::vector<std::size_t> &idx, Vec *grad);

    struct UpdateStats
    {
        double actor_loss = 0.0;
        double critic_loss = 0.0;
        double entropy = 0.0;
        double approx_kl = 0.0;
        double clip_fraction = 0.0;
        double actor_grad_norm = 0.0;
        double critic_grad_norm = 0.0;
    };

    UpdateStats ppo_update(GaussianPolicy &policy, Critic &critic, Adam &actor_opt, Adam &critic_opt,
                           const Batch &batch, const PpoConfig &cfg, Rng &rng);

    enum class RewardSource
    {
        Scenario, // scenario samples, gated risk-adjusted reward
        Realized, // realized net return on the tape
        Bootstrap // whole-row resampling of a trailing window, entropic reward without gate
    };

    std::string to_string(RewardSource s);
    RewardSource parse_reward_source(const std::string &s);

    struct TrainConfig
    {
        std::string name = "scr_ppo_full";
        double delta = 0.99;
        double beta_cf = 0.5;
        std::size_t samples = 64;
        double gae_lambda = 0.95;
        PpoConfig ppo;
        double lr_actor = 3e-4;
        double lr_critic = 1e-3;
        std::size_t iterations = 40;
        std::size_t hidden = 64;
        double init_log_std = -2.5;
        std::uint64_t seed = 0;

        RewardSource reward_source = RewardSource::Scenario;
        bool use_gate = true;
        bool scenario_features = true;
        env::RewardParams reward;
        std::size_t bootstrap_window = 60;
        double reward_scale = 100.0; // rewards, values and targets in percent units

        void validate() const;
        nlohmann::json to_json() const;
        /// Unknown keys raise ConfigError; missing keys keep defaults.
        static TrainConfig from_json(const nlohmann::json &j);
    };

    /// Builds network inputs: exogenous day context z plus the scaled memory h.
    class FeatureBuilder
    {
    public:
        FeatureBuilder(const scenario::ScrRun &run, bool scenario_features);

        Vec exogenous(std::size_t t) const;
        Vec features(const env::State &phi) const;
        std::size_t dim(std::size_t n_assets) const;

    private:
        const scenario::ScrRun *run_;
        bool scenario_features_;
    };

    struct StepRecord
    {
        std::size_t t = 0;
        Vec features;
        Vec action;
        double log_prob = 0.0;
        Vec weights;
        double reward = 0.0;     // scaled by reward_scale
        double realized = 0.0;   // net return on the tape
        double scen_score = 0.0; // <w, r_bar_scen>
        double value = 0.0;
        double value_next = 0.0;
        double value_cf = 0.0;
        double target = 0.0;
        double advantage = 0.0;
    };

    struct IterationStats
    {
        std::size_t iteration = 0;
        double mean_reward = 0.0;
        double mean_realized = 0.0;
        double resid_l2 = 0.0; // RMS of V(phi_t) - Y over the rollout
        double mean_turnover = 0.0;
        UpdateStats update;
    };

    /// Actor-critic training over the logged days [begin, end) of a tape.
    class Trainer
    {
    public:
        Trainer(const tape::ReturnTape &tape, const scenario::ScrRun &run, const env::EnvParams &env,
                const TrainConfig &cfg, std::size_t begin, std::size_t end);

        /// One rollout over the training days followed by a PPO update.
        IterationStats iterate();
        std::vector<IterationStats> train();

        /// Rollout records of the most recent iteration (before its update).
        const std::vector<StepRecord> &last_rollout() const { return last_; }
        const std::vector<IterationStats> &history() const { return history_; }
        const GaussianPolicy &policy() const { return policy_; }
        const Critic &critic() const { return critic_; }
        const TrainConfig &config() const { return cfg_; }
        const FeatureBuilder &features() const { return features_; }
        std::size_t begin() const { return begin_; }
        std::size_t end() const { return end_; }

        nlohmann::json checkpoint() const;
        void restore(const nlohmann::json &j);

    private:
        Mat bootstrap_samples(std::size_t t, Rng &rng) const;

        const tape::ReturnTape *tape_;
        const scenario::ScrRun *run_;
        env::EnvParams env_;
        TrainConfig cfg_;
        std::size_t begin_, end_;
        FeatureBuilder features_;
        GaussianPolicy policy_;
        Critic critic_;
        Adam actor_opt_, critic_opt_;
        std::size_t iteration_ = 0;
        std::vector<StepRecord> last_;
        std::vector<IterationStats> history_;
    };

    /// Deterministic policy weights for day features, projected against w_prev.
    Vec policy_weights(const GaussianPolicy &policy, const Vec &features, const Vec &w_prev,
                       const env::ConstraintSet &c);

    /// Serialization of models.
    nlohmann::json to_json(const GaussianPolicy &p);
    nlohmann::json to_json(const Critic &c);
    void from_json(const nlohmann::json &j, GaussianPolicy &p);
    void from_json(const nlohmann::json &j, Critic &c);
}
