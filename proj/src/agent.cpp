#include "scr/agent.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace scr::agent
{
    namespace
    {
        constexpr double kHalfLog2Pi = 0.91893853320467274178;

        Mat to_row(const Vec &v)
        {
            return v.transpose();
        }
    }

    Mlp::Mlp(const std::vector<std::size_t> &sizes, Rng &rng, double output_scale)
    {
        if (sizes.size() < 2)
        {
            throw ConfigError("an MLP needs at least an input and an output size");
        }
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        {
            const auto in = static_cast<Eigen::Index>(sizes[l]);
            const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
            const bool last = l + 2 == sizes.size();
            const double scale = (last ? output_scale : 1.0) / std::sqrt(static_cast<double>(in));
            Mat W(in, out);
            for (Eigen::Index i = 0; i < W.size(); ++i)
                W(i) = scale * standard_normal(rng);
            weights_.push_back(std::move(W));
            biases_.push_back(Vec::Zero(out));
        }
    }

    std::vector<std::size_t> Mlp::sizes() const
    {
        std::vector<std::size_t> s{input_dim()};
        for (const auto &W : weights_)
            s.push_back(static_cast<std::size_t>(W.cols()));
        return s;
    }

    Mat Mlp::forward(const Mat &X, MlpCache *cache) const
    {
        if (cache)
        {
            cache->activations.clear();
            cache->activations.push_back(X);
        }
        Mat a = X;
        for (std::size_t l = 0; l < weights_.size(); ++l)
        {
            Mat z = (a * weights_[l]).rowwise() + biases_[l].transpose();
            if (l + 1 < weights_.size())
                z = z.array().tanh().matrix();
            a = std::move(z);
            if (cache)
                cache->activations.push_back(a);
        }
        return a;
    }

    Vec Mlp::backward(const MlpCache &cache, const Mat &d_out) const
    {
        Vec grad(static_cast<Eigen::Index>(num_params()));
        Mat d = d_out;
        // parameters are laid out layer by layer as [W (column-major), b]
        std::vector<Eigen::Index> offset(weights_.size());
        Eigen::Index pos = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
        {
            offset[l] = pos;
            pos += weights_[l].size() + biases_[l].size();
        }
        for (std::size_t l = weights_.size(); l-- > 0;)
        {
            const Mat &a = cache.activations[l];
            const Mat gW = a.transpose() * d;
            const Vec gb = d.colwise().sum().transpose();
            grad.segment(offset[l], gW.size()) = Eigen::Map<const Vec>(gW.data(), gW.size());
            grad.segment(offset[l] + gW.size(), gb.size()) = gb;
            if (l > 0)
            {
                d = ((d * weights_[l].transpose()).array() * (1.0 - a.array().square())).matrix();
            }
        }
        return grad;
    }

    std::size_t Mlp::num_params() const
    {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
            n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
        return n;
    }

    Vec Mlp::params() const
    {
        Vec p(static_cast<Eigen::Index>(num_params()));
        Eigen::Index pos = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
        {
            p.segment(pos, weights_[l].size()) = Eigen::Map<const Vec>(weights_[l].data(), weights_[l].size());
            pos += weights_[l].size();
            p.segment(pos, biases_[l].size()) = biases_[l];
            pos += biases_[l].size();
        }
        return p;
    }

    void Mlp::set_params(const Vec &p)
    {
        if (static_cast<std::size_t>(p.size()) != num_params())
        {
            throw DataError("parameter vector has the wrong length");
        }
        Eigen::Index pos = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
        {
            weights_[l] = Eigen::Map<const Mat>(p.data() + pos, weights_[l].rows(), weights_[l].cols());
            pos += weights_[l].size();
            biases_[l] = p.segment(pos, biases_[l].size());
            pos += biases_[l].size();
        }
    }

    Vec GaussianPolicy::params() const
    {
        Vec p(static_cast<Eigen::Index>(num_params()));
        p << mean.params(), log_std;
        return p;
    }

    void GaussianPolicy::set_params(const Vec &p)
    {
        const auto n = static_cast<Eigen::Index>(mean.num_params());
        mean.set_params(p.head(n));
        log_std = p.tail(log_std.size()).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    }

    Vec GaussianPolicy::clamped_log_std() const
    {
        return log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    }

    double GaussianPolicy::entropy() const
    {
        return clamped_log_std().sum() + static_cast<double>(log_std.size()) * (kHalfLog2Pi + 0.5);
    }

    double Critic::value(const Vec &features) const
    {
        return net.forward(to_row(features))(0, 0);
    }

    Vec Critic::values(const Mat &features) const
    {
        return net.forward(features).col(0);
    }

    GaussianPolicy make_policy(std::size_t in, std::size_t n_assets, std::size_t hidden, double init_log_std, Rng &rng)
    {
        GaussianPolicy p;
        p.mean = Mlp({in, hidden, hidden, n_assets}, rng, 0.01);
        p.log_std = Vec::Constant(static_cast<Eigen::Index>(n_assets), std::clamp(init_log_std, kLogStdMin, kLogStdMax));
        return p;
    }

    Critic make_critic(std::size_t in, std::size_t hidden, Rng &rng)
    {
        return Critic{Mlp({in, hidden, hidden, 1}, rng, 1.0)};
    }

    double gaussian_log_prob(const Vec &a, const Vec &mean, const Vec &log_std)
    {
        const Eigen::ArrayXd z = (a - mean).array() / log_std.array().exp();
        return (-0.5 * z.square() - log_std.array() - kHalfLog2Pi).sum();
    }

    Action act(const GaussianPolicy &policy, const Vec &features, bool deterministic, Rng &rng)
    {
        if (!all_finite(features))
        {
            throw DataError("non-finite policy input");
        }
        Action out;
        out.mean = policy.mean.forward(to_row(features)).row(0).transpose();
        if (!all_finite(out.mean))
        {
            throw DataError("non-finite policy output");
        }
        const Vec log_std = policy.clamped_log_std();
        out.a = out.mean;
        if (!deterministic)
        {
            for (Eigen::Index i = 0; i < out.a.size(); ++i)
                out.a(i) += std::exp(log_std(i)) * standard_normal(rng);
        }
        out.log_prob = gaussian_log_prob(out.a, out.mean, log_std);
        return out;
    }

    Adam::Adam(std::size_t n, double lr, double step_clamp, double beta1, double beta2, double eps)
        : lr_(lr), clamp_(step_clamp), beta1_(beta1), beta2_(beta2), eps_(eps),
          m_(Vec::Zero(static_cast<Eigen::Index>(n))), v_(Vec::Zero(static_cast<Eigen::Index>(n)))
    {
    }

    Vec Adam::step(const Vec &g)
    {
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * g;
        v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        Vec dir = ((m_ / c1).array() / ((v_ / c2).array().sqrt() + eps_)).matrix();
        if (clamp_ > 0.0)
            dir = dir.cwiseMax(-clamp_).cwiseMin(clamp_);
        return -lr_ * dir;
    }

    nlohmann::json Adam::to_json() const
    {
        return {{"lr", lr_}, {"clamp", clamp_}, {"beta1", beta1_}, {"beta2", beta2_}, {"eps", eps_}, {"t", t_},
                {"m", std::vector<double>(m_.data(), m_.data() + m_.size())},
                {"v", std::vector<double>(v_.data(), v_.data() + v_.size())}};
    }

    Adam Adam::from_json(const nlohmann::json &j)
    {
        const auto m = j.at("m").get<std::vector<double>>();
        const auto v = j.at("v").get<std::vector<double>>();
        Adam a(m.size(), j.at("lr").get<double>(), j.at("clamp").get<double>(), j.at("beta1").get<double>(),
               j.at("beta2").get<double>(), j.at("eps").get<double>());
        a.t_ = j.at("t").get<long>();
        a.m_ = Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()));
        a.v_ = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
        return a;
    }

    double clip_grad_norm(Vec &g, double max_norm)
    {
        const double n = g.norm();
        if (max_norm > 0.0 && n > max_norm)
            g *= max_norm / n;
        return n;
    }

    double mixed_target(double r, double v_next, double v_cf, double delta, double beta_cf)
    {
        return (1.0 - beta_cf) * (r + delta * v_next) + beta_cf * (r + delta * v_cf);
    }

    Vec gae_from_residuals(const Vec &residuals, double delta, double lambda)
    {
        Vec adv(residuals.size());
        double acc = 0.0;
        for (Eigen::Index t = residuals.size(); t-- > 0;)
        {
            acc = residuals(t) + delta * lambda * acc;
            adv(t) = acc;
        }
        return adv;
    }

    Vec gae(const Vec &rewards, const Vec &values, double delta, double lambda)
    {
        if (values.size() != rewards.size() + 1)
        {
            throw DataError("GAE needs T rewards and T+1 values");
        }
        const Vec td = rewards + delta * values.tail(rewards.size()) - values.head(rewards.size());
        return gae_from_residuals(td, delta, lambda);
    }

    Vec normalize_advantages(const Vec &a)
    {
        if (a.size() == 0)
            return a;
        const double m = a.mean();
        const double sd = std::sqrt((a.array() - m).square().mean());
        if (!(sd > 1e-12))
            return Vec::Zero(a.size());
        return ((a.array() - m) / sd).matrix();
    }

    double actor_loss(const GaussianPolicy &policy, const Batch &batch, const std::vector<std::size_t> &idx,
                      const PpoConfig &cfg, Vec *grad)
    {
        const auto B = static_cast<Eigen::Index>(idx.size());
        const auto N = policy.log_std.size();
        Mat X(B, batch.features.cols()), A(B, N);
        for (Eigen::Index i = 0; i < B; ++i)
        {
            X.row(i) = batch.features.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
            A.row(i) = batch.actions.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
        }
        MlpCache cache;
        const Mat mu = policy.mean.forward(X, grad ? &cache : nullptr);
        const Vec log_std = policy.clamped_log_std();
        const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();

        double obj = 0.0;
        Mat d_mu = Mat::Zero(B, N);
        Vec d_log_std = Vec::Zero(N);
        for (Eigen::Index i = 0; i < B; ++i)
        {
            const std::size_t r = idx[static_cast<std::size_t>(i)];
            const Eigen::ArrayXd diff = (A.row(i) - mu.row(i)).transpose().array();
            const double logp = (-0.5 * diff.square() * inv_var - log_std.array() - kHalfLog2Pi).sum();
            const double ratio = std::exp(logp - batch.log_prob_old(static_cast<Eigen::Index>(r)));
            const double adv = batch.advantages(static_cast<Eigen::Index>(r));
            const double s1 = ratio * adv;
            const double s2 = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
            obj += std::min(s1, s2);
            if (grad && s1 <= s2)
            {
                // d loss / d logp for this row
                const double g = -ratio * adv / static_cast<double>(B);
                d_mu.row(i) = (g * diff * inv_var).matrix().transpose();
                d_log_std += (g * (diff.square() * inv_var - 1.0)).matrix();
            }
        }
        const double loss = -obj / static_cast<double>(B) - cfg.entropy_coef * policy.entropy();
        if (grad)
        {
            d_log_std.array() -= cfg.entropy_coef;
            *grad = Vec(static_cast<Eigen::Index>(policy.num_params()));
            *grad << policy.mean.backward(cache, d_mu), d_log_std;
        }
        return loss;
    }

    double critic_loss(const Critic &critic, const Mat &features, const Vec &targets,
                       const std::vector<std::size_t> &idx, Vec *grad)
    {
        const auto B = static_cast<Eigen::Index>(idx.size());
        Mat X(B, features.cols());
        Vec y(B);
        for (Eigen::Index i = 0; i < B; ++i)
        {
            X.row(i) = features.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
            y(i) = targets(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
        }
        MlpCache cache;
        const Vec v = critic.net.forward(X, grad ? &cache : nullptr).col(0);
        const Vec e = v - y;
        if (grad)
        {
            *grad = critic.net.backward(cache, Mat(2.0 * e / static_cast<double>(B)));
        }
        return e.squaredNorm() / static_cast<double>(B);
    }

    UpdateStats ppo_update(GaussianPolicy &policy, Critic &critic, Adam &actor_opt, Adam &critic_opt,
                           const Batch &batch, const PpoConfig &cfg, Rng &rng)
    {
        const auto T = static_cast<std::size_t>(batch.features.rows());
        UpdateStats st;
        if (T == 0)
            return st;
        std::vector<std::size_t> perm(T);
        std::size_t steps = 0;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch)
        {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            for (std::size_t i = T; i > 1; --i)
                std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
            for (std::size_t start = 0; start < T; start += cfg.minibatch)
            {
                const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                                   perm.begin() + static_cast<std::ptrdiff_t>(std::min(T, start + cfg.minibatch)));
                Vec gc;
                const double lc = critic_loss(critic, batch.features, batch.targets, idx, &gc);
                Vec ga;
                const double la = actor_loss(policy, batch, idx, cfg, &ga);
                if (!std::isfinite(lc) || !std::isfinite(la) || !all_finite(gc) || !all_finite(ga))
                {
                    throw Error("non-finite PPO loss (actor " + std::to_string(la) + ", critic " + std::to_string(lc) + ")");
                }
                st.critic_grad_norm += clip_grad_norm(gc, cfg.max_grad_norm);
                st.actor_grad_norm += clip_grad_norm(ga, cfg.max_grad_norm);
                critic.net.set_params(critic.net.params() + critic_opt.step(gc));
                policy.set_params(policy.params() + actor_opt.step(ga));
                st.critic_loss += lc;
                st.actor_loss += la;
                ++steps;
            }
        }
        const auto n = static_cast<double>(steps);
        st.critic_loss /= n;
        st.actor_loss /= n;
        st.critic_grad_norm /= n;
        st.actor_grad_norm /= n;
        st.entropy = policy.entropy();

        // diagnostics against the rollout policy
        const Mat mu = policy.mean.forward(batch.features);
        const Vec log_std = policy.clamped_log_std();
        double kl = 0.0, clipped = 0.0;
        for (Eigen::Index i = 0; i < batch.features.rows(); ++i)
        {
            const double logp = gaussian_log_prob(batch.actions.row(i).transpose(), mu.row(i).transpose(), log_std);
            const double d = batch.log_prob_old(i) - logp;
            kl += d;
            clipped += std::abs(std::exp(-d) - 1.0) > cfg.clip ? 1.0 : 0.0;
        }
        st.approx_kl = kl / static_cast<double>(T);
        st.clip_fraction = clipped / static_cast<double>(T);
        return st;
    }

    std::string to_string(RewardSource s)
    {
        switch (s)
        {
        case RewardSource::Scenario:
            return "scenario";
        case RewardSource::Realized:
            return "realized";
        case RewardSource::Bootstrap:
            return "bootstrap";
        }
        return "scenario";
    }

    RewardSource parse_reward_source(const std::string &s)
    {
        if (s == "scenario")
            return RewardSource::Scenario;
        if (s == "realized")
            return RewardSource::Realized;
        if (s == "bootstrap")
            return RewardSource::Bootstrap;
        throw ConfigError("unknown reward source '" + s + "' (scenario, realized, bootstrap)");
    }

    void TrainConfig::validate() const
    {
        auto need = [](bool ok, const std::string &what)
        {
            if (!ok)
                throw ConfigError("train config: " + what);
        };
        need(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
        need(beta_cf >= 0.0 && beta_cf <= 1.0, "beta_cf must lie in [0, 1]");
        need(samples >= 1, "samples must be >= 1");
        need(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must lie in [0, 1]");
        need(ppo.clip > 0.0 && ppo.clip < 1.0, "clip must lie in (0, 1)");
        need(ppo.entropy_coef >= 0.0, "entropy_coef must be >= 0");
        need(ppo.epochs >= 1 && ppo.minibatch >= 1, "epochs and minibatch must be >= 1");
        need(ppo.max_grad_norm > 0.0, "max_grad_norm must be positive");
        need(lr_actor > 0.0 && lr_critic > 0.0, "learning rates must be positive");
        need(iterations >= 1, "iterations must be >= 1");
        need(hidden >= 1, "hidden must be >= 1");
        need(init_log_std >= kLogStdMin && init_log_std <= kLogStdMax, "init_log_std must lie in [-5, 1]");
        need(reward.eta > 0.0 && reward.lambda_rho >= 0.0 && reward.lambda_conc >= 0.0 && reward.eps >= 0.0,
             "reward needs eta > 0 and non-negative lambdas and eps");
        need(reward.cost_rate >= 0.0, "cost_rate must be >= 0");
        need(bootstrap_window >= 2, "bootstrap_window must be >= 2");
        need(reward_scale > 0.0, "reward_scale must be positive");
    }

    nlohmann::json TrainConfig::to_json() const
    {
        return {{"name", name},
                {"delta", delta},
                {"beta_cf", beta_cf},
                {"samples", samples},
                {"gae_lambda", gae_lambda},
                {"clip", ppo.clip},
                {"entropy_coef", ppo.entropy_coef},
                {"epochs", ppo.epochs},
                {"minibatch", ppo.minibatch},
                {"max_grad_norm", ppo.max_grad_norm},
                {"lr_actor", lr_actor},
                {"lr_critic", lr_critic},
                {"iterations", iterations},
                {"hidden", hidden},
                {"init_log_std", init_log_std},
                {"seed", seed},
                {"reward_source", to_string(reward_source)},
                {"use_gate", use_gate},
                {"scenario_features", scenario_features},
                {"eta", reward.eta},
                {"lambda_rho", reward.lambda_rho},
                {"lambda_conc", reward.lambda_conc},
                {"eps", reward.eps},
                {"cost_rate", reward.cost_rate},
                {"bootstrap_window", bootstrap_window},
                {"reward_scale", reward_scale}};
    }

    TrainConfig TrainConfig::from_json(const nlohmann::json &j)
    {
        if (!j.is_object())
            throw ConfigError("train config must be an object");
        TrainConfig c;
        const auto known = c.to_json();
        for (auto it = j.begin(); it != j.end(); ++it)
        {
            if (!known.contains(it.key()))
                throw ConfigError("unknown train config key '" + it.key() + "'");
        }
        auto get = [&](const char *key, auto &field)
        {
            if (j.contains(key))
            {
                try
                {
                    field = j.at(key).get<std::decay_t<decltype(field)>>();
                }
                catch (const nlohmann::json::exception &e)
                {
                    throw ConfigError(std::string("train config key '") + key + "': " + e.what());
                }
            }
        };
        get("name", c.name);
        get("delta", c.delta);
        get("beta_cf", c.beta_cf);
        get("samples", c.samples);
        get("gae_lambda", c.gae_lambda);
        get("clip", c.ppo.clip);
        get("entropy_coef", c.ppo.entropy_coef);
        get("epochs", c.ppo.epochs);
        get("minibatch", c.ppo.minibatch);
        get("max_grad_norm", c.ppo.max_grad_norm);
        get("lr_actor", c.lr_actor);
        get("lr_critic", c.lr_critic);
        get("iterations", c.iterations);
        get("hidden", c.hidden);
        get("init_log_std", c.init_log_std);
        get("seed", c.seed);
        std::string source = to_string(c.reward_source);
        get("reward_source", source);
        c.reward_source = parse_reward_source(source);
        get("use_gate", c.use_gate);
        get("scenario_features", c.scenario_features);
        get("eta", c.reward.eta);
        get("lambda_rho", c.reward.lambda_rho);
        get("lambda_conc", c.reward.lambda_conc);
        get("eps", c.reward.eps);
        get("cost_rate", c.reward.cost_rate);
        get("bootstrap_window", c.bootstrap_window);
        get("reward_scale", c.reward_scale);
        c.validate();
        return c;
    }

    FeatureBuilder::FeatureBuilder(const scenario::ScrRun &run, bool scenario_features)
        : run_(&run), scenario_features_(scenario_features)
    {
    }

    Vec FeatureBuilder::exogenous(std::size_t t) const
    {
        const auto &d = run_->days.at(t);
        const auto N = d.trailing_mean.size();
        const Vec vol = d.has_descriptor ? Vec(d.psi.tail(N)) : Vec::Zero(N);
        const bool scen = scenario_features_ && d.valid;
        Vec z(d.macro_z.size() + d.chi.size() + N + 1 + N + N);
        z << d.macro_z, d.chi, vol, (scen ? d.context.g : 0.0), (scen ? Vec(100.0 * d.dist.mean()) : Vec::Zero(N)),
            100.0 * d.trailing_mean;
        return z;
    }

    Vec FeatureBuilder::features(const env::State &phi) const
    {
        const auto N = phi.h.w_prev.size();
        Vec f(phi.z.size() + N + 2);
        f << phi.z, 100.0 * phi.h.ewma, static_cast<double>(N) * phi.h.w_prev, 10.0 * phi.h.drawdown();
        return f;
    }

    std::size_t FeatureBuilder::dim(std::size_t n_assets) const
    {
        return static_cast<std::size_t>(exogenous(run_->days.size() - 1).size()) + n_assets + 2;
    }

    Trainer::Trainer(const tape::ReturnTape &tape, const scenario::ScrRun &run, const env::EnvParams &env,
                     const TrainConfig &cfg, std::size_t begin, std::size_t end)
        : tape_(&tape), run_(&run), env_(env), cfg_(cfg), begin_(begin), end_(std::min(end, tape.days())),
          features_(run, cfg.scenario_features)
    {
        cfg_.validate();
        env_.constraints.validate(tape.assets());
        env_.cost_rate = cfg_.reward.cost_rate;
        if (run.days.size() != tape.days())
        {
            throw DataError("SCR run and tape cover different days");
        }
        while (begin_ < end_ && !run.days[begin_].valid)
            ++begin_;
        if (cfg_.reward_source == RewardSource::Bootstrap)
            begin_ = std::max(begin_, cfg_.bootstrap_window);
        if (end_ < begin_ + 2)
        {
            throw DataError("no trainable days: the segment ends before the first day with scenario context");
        }
        Rng init = make_rng(cfg_.seed, "agent.init");
        const std::size_t in = features_.dim(tape.assets());
        policy_ = make_policy(in, tape.assets(), cfg_.hidden, cfg_.init_log_std, init);
        critic_ = make_critic(in, cfg_.hidden, init);
        actor_opt_ = Adam(policy_.num_params(), cfg_.lr_actor, cfg_.ppo.max_grad_norm);
        critic_opt_ = Adam(critic_.net.num_params(), cfg_.lr_critic, cfg_.ppo.max_grad_norm);
    }

    Mat Trainer::bootstrap_samples(std::size_t t, Rng &rng) const
    {
        // returns realized on days t-W+1 .. t are rows t-W .. t-1
        const std::size_t W = cfg_.bootstrap_window;
        Mat out(static_cast<Eigen::Index>(cfg_.samples), static_cast<Eigen::Index>(tape_->assets()));
        for (std::size_t s = 0; s < cfg_.samples; ++s)
            out.row(static_cast<Eigen::Index>(s)) = tape_->returns.row(static_cast<Eigen::Index>(t - W + uniform_index(rng, W)));
        return out;
    }

    IterationStats Trainer::iterate()
    {
        const std::size_t it = iteration_++;
        Rng act_rng = make_rng(cfg_.seed, "agent.act", it);
        Rng scen_rng = make_rng(cfg_.seed, "agent.scenarios", it);
        Rng shuffle_rng = make_rng(cfg_.seed, "agent.shuffle", it);
        const std::size_t N = tape_->assets();

        env::State phi = env::initial_state(begin_, features_.exogenous(begin_), N);
        std::vector<StepRecord> recs;
        std::vector<env::State> next_states, cf_states;
        recs.reserve(end_ - begin_);
        for (std::size_t t = begin_; t + 1 < end_; ++t)
        {
            const auto &day = run_->days[t];
            StepRecord r;
            r.t = t;
            r.features = features_.features(phi);
            const Action a = act(policy_, r.features, false, act_rng);
            r.action = a.a;
            r.log_prob = a.log_prob;
            r.weights = env::project(a.a, phi.h.w_prev, env_.constraints);

            const Vec realized = tape_->returns.row(static_cast<Eigen::Index>(t)).transpose(); // r_{t+1}
            r.realized = env::net_return(r.weights, realized, phi.h.w_prev, env_.cost_rate);

            Mat samples;
            if (cfg_.reward_source == RewardSource::Bootstrap)
                samples = bootstrap_samples(t, scen_rng);
            else
                samples = scenario::sample_scenarios(day.dist, cfg_.samples, scen_rng);
            const Vec r_bar = scenario::scenario_mean(samples);
            r.scen_score = r.weights.dot(r_bar);

            switch (cfg_.reward_source)
            {
            case RewardSource::Realized:
                r.reward = cfg_.reward_scale * r.realized;
                break;
            case RewardSource::Scenario:
            case RewardSource::Bootstrap:
            {
                const double g = (cfg_.use_gate && cfg_.reward_source == RewardSource::Scenario) ? day.context.g : 1.0;
                r.reward = cfg_.reward_scale * env::reward(samples, g, r.weights, phi.h.w_prev, cfg_.reward).total;
                break;
            }
            }

            const Vec z_next = features_.exogenous(t + 1);
            next_states.push_back(env::upd(phi, r.weights, realized, z_next, env_));
            cf_states.push_back(env::counterfactual_state(phi, r.weights, r_bar, z_next, env_));
            phi = next_states.back();
            recs.push_back(std::move(r));
        }

        const auto T = static_cast<Eigen::Index>(recs.size());
        const auto F = static_cast<Eigen::Index>(recs.front().features.size());
        Mat X(T, F), Xn(T, F), Xc(T, F);
        for (Eigen::Index i = 0; i < T; ++i)
        {
            X.row(i) = recs[static_cast<std::size_t>(i)].features.transpose();
            Xn.row(i) = features_.features(next_states[static_cast<std::size_t>(i)]).transpose();
            Xc.row(i) = features_.features(cf_states[static_cast<std::size_t>(i)]).transpose();
        }
        const Vec v = critic_.values(X), vn = critic_.values(Xn), vc = critic_.values(Xc);

        Batch batch;
        batch.features = X;
        batch.actions.resize(T, static_cast<Eigen::Index>(N));
        batch.log_prob_old.resize(T);
        batch.targets.resize(T);
        Vec residuals(T);
        IterationStats st;
        st.iteration = it;
        for (Eigen::Index i = 0; i < T; ++i)
        {
            auto &r = recs[static_cast<std::size_t>(i)];
            r.value = v(i);
            r.value_next = vn(i);
            r.value_cf = vc(i);
            r.target = mixed_target(r.reward, vn(i), vc(i), cfg_.delta, cfg_.beta_cf);
            batch.actions.row(i) = r.action.transpose();
            batch.log_prob_old(i) = r.log_prob;
            batch.targets(i) = r.target;
            residuals(i) = r.target - r.value;
            st.mean_reward += r.reward;
            st.mean_realized += r.realized;
            st.mean_turnover += (r.weights - (i == 0 ? Vec(Vec::Constant(static_cast<Eigen::Index>(N), 1.0 / static_cast<double>(N)))
                                                     : recs[static_cast<std::size_t>(i - 1)].weights))
                                    .lpNorm<1>();
        }
        st.mean_reward /= static_cast<double>(T);
        st.mean_realized /= static_cast<double>(T);
        st.mean_turnover /= static_cast<double>(T);
        st.resid_l2 = std::sqrt(residuals.squaredNorm() / static_cast<double>(T));

        // advantages from the rollout-time critic, TD residuals taken against the mixed targets
        const Vec adv = gae_from_residuals(residuals, cfg_.delta, cfg_.gae_lambda);
        batch.advantages = normalize_advantages(adv);
        for (Eigen::Index i = 0; i < T; ++i)
            recs[static_cast<std::size_t>(i)].advantage = adv(i);

        st.update = ppo_update(policy_, critic_, actor_opt_, critic_opt_, batch, cfg_.ppo, shuffle_rng);
        last_ = std::move(recs);
        history_.push_back(st);
        spdlog::debug("{} iter {} reward {:.6f} resid {:.6f}", cfg_.name, it, st.mean_reward, st.resid_l2);
        return st;
    }

    std::vector<IterationStats> Trainer::train()
    {
        while (iteration_ < cfg_.iterations)
            iterate();
        return history_;
    }

    nlohmann::json to_json(const GaussianPolicy &p)
    {
        const Vec params = p.mean.params();
        return {{"sizes", p.mean.sizes()},
                {"params", std::vector<double>(params.data(), params.data() + params.size())},
                {"log_std", std::vector<double>(p.log_std.data(), p.log_std.data() + p.log_std.size())}};
    }

    nlohmann::json to_json(const Critic &c)
    {
        const Vec params = c.net.params();
        return {{"sizes", c.net.sizes()}, {"params", std::vector<double>(params.data(), params.data() + params.size())}};
    }

    namespace
    {
        Mlp mlp_from_json(const nlohmann::json &j)
        {
            Rng dummy(0);
            Mlp m(j.at("sizes").get<std::vector<std::size_t>>(), dummy, 1.0);
            const auto p = j.at("params").get<std::vector<double>>();
            m.set_params(Eigen::Map<const Vec>(p.data(), static_cast<Eigen::Index>(p.size())));
            return m;
        }
    }

    void from_json(const nlohmann::json &j, GaussianPolicy &p)
    {
        p.mean = mlp_from_json(j);
        const auto ls = j.at("log_std").get<std::vector<double>>();
        p.log_std = Eigen::Map<const Vec>(ls.data(), static_cast<Eigen::Index>(ls.size()));
    }

    void from_json(const nlohmann::json &j, Critic &c)
    {
        c.net = mlp_from_json(j);
    }

    nlohmann::json Trainer::checkpoint() const
    {
        // per-iteration RNG streams derive from (seed, iteration), so the counter restores them
        return {{"format", "scr-checkpoint"},
                {"version", 1},
                {"config", cfg_.to_json()},
                {"iteration", iteration_},
                {"begin", begin_},
                {"end", end_},
                {"policy", to_json(policy_)},
                {"critic", to_json(critic_)},
                {"actor_opt", actor_opt_.to_json()},
                {"critic_opt", critic_opt_.to_json()}};
    }

    void Trainer::restore(const nlohmann::json &j)
    {
        if (j.value("format", "") != "scr-checkpoint" || j.value("version", 0) != 1)
        {
            throw DataError("not a version-1 checkpoint");
        }
        from_json(j.at("policy"), policy_);
        from_json(j.at("critic"), critic_);
        actor_opt_ = Adam::from_json(j.at("actor_opt"));
        critic_opt_ = Adam::from_json(j.at("critic_opt"));
        iteration_ = j.at("iteration").get<std::size_t>();
    }

    Vec policy_weights(const GaussianPolicy &policy, const Vec &features, const Vec &w_prev, const env::ConstraintSet &c)
    {
        Rng unused(0);
        return env::project(act(policy, features, true, unused).a, w_prev, c);
    }
}
