/**
 * @file regime.hpp
 * @brief Regime embeddings, shock detection and the ShockLedger of shock channels.
 */
#pragma once

#include "scr/common.hpp"
#include "scr/tape.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace scr::regime
{
    struct EmbeddingConfig
    {
        std::size_t window = 5; // trailing days averaged in the return statistics
        std::size_t dim = 8;    // principal directions kept, capped at the feature dimension
    };

    /**
     * Train-fitted PCA over hand-built market/macro features.
     *
     * Raw features at day t: the cross-sectional mean, std, min and max of the returns realized
     * on each of the last `window` days, averaged over the window, followed by the macro z-scores
     * of day t. Features are z-scored with train statistics before projection.
     */
    class RegimeEmbedder
    {
    public:
        RegimeEmbedder() = default;

        /// Fits scaler and basis on days [begin, end) (clamped to days >= window).
        static RegimeEmbedder fit(const tape::ReturnTape &tape, std::size_t begin, std::size_t end,
                                  const EmbeddingConfig &cfg);

        Vec raw_features(const tape::ReturnTape &tape, std::size_t t) const;
        /// Standardized features, i.e. the input of the projection.
        Vec projection_input(const tape::ReturnTape &tape, std::size_t t) const;
        Vec embed(const tape::ReturnTape &tape, std::size_t t) const;

        std::size_t dim() const { return static_cast<std::size_t>(basis_.cols()); }
        std::size_t window() const { return cfg_.window; }
        const Mat &basis() const { return basis_; }

    private:
        EmbeddingConfig cfg_;
        ColumnScaler scaler_;
        Vec center_;
        Mat basis_; // feature_dim x k, orthonormal columns
    };

    /// Chi-square quantile with `dof` degrees of freedom; +inf at level 1.
    double chi_square_quantile(std::size_t dof, double level);

    /// Mahalanobis chi-square test against train embedding statistics.
    class ShockDetector
    {
    public:
        ShockDetector() = default;
        ShockDetector(const Vec &mean, const Mat &cov, double level);

        static ShockDetector fit(const std::vector<Vec> &train_embeddings, double level);

        double score(const Vec &u) const { return form_.squared_distance(u); }
        bool is_shock(const Vec &u) const;
        double threshold() const { return threshold_; }

    private:
        MahalanobisForm form_;
        double threshold_ = 0.0;
    };

    struct ShockChannel
    {
        int id = 0;
        Vec centroid;
        std::vector<std::size_t> hit_days;
        std::vector<tape::Date> hit_dates;
        Vec macro_signature;                                  // mean macro z-score over hits
        std::vector<std::pair<std::string, double>> top_movers; // mean asset return over hits, by |value|
        std::size_t train_hits = 0;

        // running sums behind the signatures
        std::size_t members = 0;
        Vec macro_sum;
        Vec return_sum;
    };

    struct NoveltyEvent
    {
        std::size_t day = 0;
        tape::Date date;
        double min_distance_sq = 0.0;
        std::optional<int> fallback_channel;
    };

    struct ChannelActivation
    {
        Vec chi; // 0/1 per channel
        std::size_t lookback = 10;
    };

    /// 25th percentile of pairwise squared distances among the given embeddings.
    double default_lambda_sq(const std::vector<Vec> &shock_embeddings);

    class ShockLedger
    {
    public:
        explicit ShockLedger(double lambda_sq = 1.0) : lambda_sq_(lambda_sq) {}

        /// Once frozen (evaluation segments), no channel is created: far shocks are logged as
        /// novel and assigned to the nearest existing channel without moving its centroid.
        void freeze() { frozen_ = true; }
        bool frozen() const { return frozen_; }
        /// Caps channel creation; at capacity, far shocks are handled as on a frozen ledger.
        void set_capacity(std::size_t n) { capacity_ = n; }

        /**
         * Records a shock day. Returns the assigned channel id, or nullopt for a novel shock on
         * a frozen, empty ledger. `macro_z` and `day_returns` feed the channel signatures.
         */
        std::optional<int> assign(const Vec &u, std::size_t day, tape::Date date, const Vec &macro_z,
                                  const Vec &day_returns, const std::vector<std::string> &asset_ids);

        ChannelActivation activation(std::size_t t, std::size_t lookback) const;

        const std::vector<ShockChannel> &channels() const { return channels_; }
        const std::vector<NoveltyEvent> &novelty_log() const { return novelty_; }
        double lambda_sq() const { return lambda_sq_; }
        std::size_t size() const { return channels_.size(); }

        nlohmann::json to_json(const std::vector<std::string> &macro_ids) const;

    private:
        double lambda_sq_;
        bool frozen_ = false;
        std::optional<std::size_t> capacity_;
        std::vector<ShockChannel> channels_;
        std::vector<NoveltyEvent> novelty_;
    };
}
