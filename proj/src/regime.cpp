#include "scr/regime.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace scr::regime
{
    RegimeEmbedder RegimeEmbedder::fit(const tape::ReturnTape &tape, std::size_t begin, std::size_t end,
                                       const EmbeddingConfig &cfg)
    {
        if (cfg.window < 1 || cfg.dim < 1)
        {
            throw ConfigError("embedding window and dimension must be positive");
        }
        RegimeEmbedder e;
        e.cfg_ = cfg;
        begin = std::max(begin, cfg.window);
        end = std::min(end, tape.days());
        if (end < begin + 2)
        {
            throw DataError("not enough training days to fit the regime embedding");
        }
        const std::size_t F = 4 + tape.macro_dim();
        e.cfg_.dim = std::min(cfg.dim, F);
        Mat rows(static_cast<Eigen::Index>(end - begin), static_cast<Eigen::Index>(F));
        for (std::size_t t = begin; t < end; ++t)
        {
            rows.row(static_cast<Eigen::Index>(t - begin)) = e.raw_features(tape, t).transpose();
        }
        e.scaler_ = ColumnScaler::fit(rows);
        const Mat z = e.scaler_.apply_rows(rows);
        e.center_ = z.colwise().mean().transpose();
        const Mat centered = z.rowwise() - e.center_.transpose();
        const Mat cov = centered.transpose() * centered / static_cast<double>(z.rows() - 1);
        Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
        const auto k = static_cast<Eigen::Index>(e.cfg_.dim);
        e.basis_.resize(static_cast<Eigen::Index>(F), k);
        for (Eigen::Index c = 0; c < k; ++c)
        {
            // eigenvalues ascend; take from the top
            Vec v = eig.eigenvectors().col(static_cast<Eigen::Index>(F) - 1 - c);
            Eigen::Index arg = 0;
            v.cwiseAbs().maxCoeff(&arg);
            if (v(arg) < 0.0)
            {
                v = -v;
            }
            e.basis_.col(c) = v;
        }
        return e;
    }

    Vec RegimeEmbedder::raw_features(const tape::ReturnTape &tape, std::size_t t) const
    {
        if (t < cfg_.window || t >= tape.days())
        {
            throw DataError("embedding needs day index >= window (" + std::to_string(cfg_.window) + ")");
        }
        Vec f(static_cast<Eigen::Index>(4 + tape.macro_dim()));
        double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
        const auto n = static_cast<double>(tape.assets());
        for (std::size_t d = t + 1 - cfg_.window; d <= t; ++d)
        {
            // return realized on day d is row d-1
            const auto r = tape.returns.row(static_cast<Eigen::Index>(d - 1));
            const double m = r.mean();
            const double var = n > 1 ? (r.array() - m).square().sum() / (n - 1.0) : 0.0;
            mean += m;
            sd += std::sqrt(var);
            lo += r.minCoeff();
            hi += r.maxCoeff();
        }
        const auto w = static_cast<double>(cfg_.window);
        f(0) = mean / w;
        f(1) = sd / w;
        f(2) = lo / w;
        f(3) = hi / w;
        f.tail(static_cast<Eigen::Index>(tape.macro_dim())) = tape.macro.row(static_cast<Eigen::Index>(t)).transpose();
        return f;
    }

    Vec RegimeEmbedder::projection_input(const tape::ReturnTape &tape, std::size_t t) const
    {
        return scaler_.apply(raw_features(tape, t));
    }

    Vec RegimeEmbedder::embed(const tape::ReturnTape &tape, std::size_t t) const
    {
        return basis_.transpose() * (projection_input(tape, t) - center_);
    }

    double chi_square_quantile(std::size_t dof, double level)
    {
        if (level >= 1.0)
        {
            return std::numeric_limits<double>::infinity();
        }
        if (level <= 0.0)
        {
            return 0.0;
        }
        boost::math::chi_squared dist(static_cast<double>(dof));
        return boost::math::quantile(dist, level);
    }

    ShockDetector::ShockDetector(const Vec &mean, const Mat &cov, double level)
        : form_(mean, cov, 1e-6), threshold_(chi_square_quantile(static_cast<std::size_t>(mean.size()), level))
    {
    }

    ShockDetector ShockDetector::fit(const std::vector<Vec> &train_embeddings, double level)
    {
        if (train_embeddings.size() < 2)
        {
            throw DataError("shock detector needs at least two training embeddings");
        }
        const auto k = train_embeddings.front().size();
        Vec mean = Vec::Zero(k);
        for (const auto &u : train_embeddings)
            mean += u;
        mean /= static_cast<double>(train_embeddings.size());
        Mat cov = Mat::Zero(k, k);
        for (const auto &u : train_embeddings)
            cov += (u - mean) * (u - mean).transpose();
        cov /= static_cast<double>(train_embeddings.size() - 1);
        return ShockDetector(mean, cov, level);
    }

    bool ShockDetector::is_shock(const Vec &u) const
    {
        const double d2 = score(u);
        return std::isfinite(d2) && d2 > threshold_;
    }

    double default_lambda_sq(const std::vector<Vec> &shock_embeddings)
    {
        std::vector<double> d2;
        for (std::size_t i = 0; i < shock_embeddings.size(); ++i)
            for (std::size_t j = i + 1; j < shock_embeddings.size(); ++j)
                d2.push_back((shock_embeddings[i] - shock_embeddings[j]).squaredNorm());
        if (d2.empty())
        {
            throw DataError("need at least two shock embeddings to derive lambda^2");
        }
        return quantile_linear(std::move(d2), 0.25);
    }

    std::optional<int> ShockLedger::assign(const Vec &u, std::size_t day, tape::Date date, const Vec &macro_z,
                                           const Vec &day_returns, const std::vector<std::string> &asset_ids)
    {
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (const auto &c : channels_)
        {
            const double d2 = (u - c.centroid).squaredNorm();
            if (d2 < best_d2)
            {
                best_d2 = d2;
                best = c.id;
            }
        }

        const bool within = best >= 0 && best_d2 <= lambda_sq_;
        bool move_centroid = true;
        if (!within)
        {
            if (frozen_ || (capacity_ && channels_.size() >= *capacity_))
            {
                novelty_.push_back({day, date, best_d2, best >= 0 ? std::optional<int>(best) : std::nullopt});
                if (best < 0)
                {
                    return std::nullopt;
                }
                move_centroid = false;
            }
            else
            {
                ShockChannel c;
                c.id = static_cast<int>(channels_.size());
                c.centroid = u;
                c.macro_sum = Vec::Zero(macro_z.size());
                c.return_sum = Vec::Zero(day_returns.size());
                channels_.push_back(std::move(c));
                best = channels_.back().id;
                move_centroid = false; // seeded at u
                channels_.back().members = 1;
            }
        }

        auto &c = channels_[static_cast<std::size_t>(best)];
        if (move_centroid)
        {
            c.members += 1;
            c.centroid += (u - c.centroid) / static_cast<double>(c.members);
        }
        c.hit_days.push_back(day);
        c.hit_dates.push_back(date);
        if (!frozen_)
        {
            c.train_hits += 1;
        }
        c.macro_sum += macro_z;
        c.return_sum += day_returns;
        const auto hits = static_cast<double>(c.hit_days.size());
        c.macro_signature = c.macro_sum / hits;
        c.top_movers.clear();
        for (std::size_t j = 0; j < asset_ids.size(); ++j)
            c.top_movers.emplace_back(asset_ids[j], c.return_sum(static_cast<Eigen::Index>(j)) / hits);
        std::stable_sort(c.top_movers.begin(), c.top_movers.end(), [](const auto &a, const auto &b)
                         { return std::abs(a.second) > std::abs(b.second); });
        return best;
    }

    ChannelActivation ShockLedger::activation(std::size_t t, std::size_t lookback) const
    {
        ChannelActivation a;
        a.lookback = lookback;
        a.chi = Vec::Zero(static_cast<Eigen::Index>(channels_.size()));
        for (const auto &c : channels_)
        {
            for (auto d : c.hit_days)
            {
                if (d <= t && d + lookback > t)
                {
                    a.chi(c.id) = 1.0;
                    break;
                }
            }
        }
        return a;
    }

    nlohmann::json ShockLedger::to_json(const std::vector<std::string> &macro_ids) const
    {
        nlohmann::json j;
        j["lambda_sq"] = lambda_sq_;
        j["channels"] = nlohmann::json::array();
        for (const auto &c : channels_)
        {
            nlohmann::json cj;
            cj["id"] = c.id;
            cj["centroid"] = std::vector<double>(c.centroid.data(), c.centroid.data() + c.centroid.size());
            cj["hits"] = c.hit_days.size();
            cj["train_hits"] = c.train_hits;
            std::vector<std::string> dates;
            for (auto d : c.hit_dates)
                dates.push_back(tape::format_date(d));
            cj["hit_dates"] = dates;
            nlohmann::json sig = nlohmann::json::object();
            for (std::size_t m = 0; m < macro_ids.size() && static_cast<Eigen::Index>(m) < c.macro_signature.size(); ++m)
                sig[macro_ids[m]] = c.macro_signature(static_cast<Eigen::Index>(m));
            cj["macro_signature"] = sig;
            nlohmann::json movers = nlohmann::json::array();
            for (const auto &[id, v] : c.top_movers)
                movers.push_back({{"asset", id}, {"mean_return", v}});
            cj["top_movers"] = movers;
            j["channels"].push_back(cj);
        }
        j["novelty_log"] = nlohmann::json::array();
        for (const auto &n : novelty_)
        {
            j["novelty_log"].push_back({{"date", tape::format_date(n.date)},
                                        {"day", n.day},
                                        {"min_distance_sq", std::isfinite(n.min_distance_sq) ? nlohmann::json(n.min_distance_sq) : nlohmann::json(nullptr)},
                                        {"fallback_channel", n.fallback_channel ? nlohmann::json(*n.fallback_channel) : nlohmann::json(nullptr)}});
        }
        return j;
    }
}
