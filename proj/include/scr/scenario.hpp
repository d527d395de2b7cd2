/**
 * @file scenario.hpp
 * @brief Scenario-context rollout: leak-safe descriptors, the scenario library, kNN retrieval,
 * scenario sampling, macro stress severity and the regime context gate.
 */
#pragma once

#include "scr/common.hpp"
#include "scr/regime.hpp"
#include "scr/rng.hpp"
#include "scr/tape.hpp"

#include <optional>
#include <vector>

namespace scr::scenario
{
    struct LibraryEntry
    {
        std::size_t u = 0; // decision day the entry was formed on
        Vec psi;           // descriptor at u
        Vec r_tilde;       // one-step-ahead macro scenario return for u+1
    };

    struct LibraryConfig
    {
        std::size_t fit_window = 60;
        double ridge = 1e-2;
        std::uint64_t seed = 0;
    };

    /// Ridge fit of next-day returns on macro features over days [u - window, u - 1].
    struct RidgeFit
    {
        Vec intercept; // N
        Mat slopes;    // M x N
        Mat residuals; // window x N
    };

    RidgeFit fit_macro_to_return(const tape::ReturnTape &tape, std::size_t u, std::size_t window, double ridge);

    /// Prediction at day u's macro features plus one bootstrap residual.
    Vec macro_scenario_return(const tape::ReturnTape &tape, std::size_t u, const LibraryConfig &cfg);

    /// Append-only, sorted by u.
    class ScenarioLibrary
    {
    public:
        /**
         * Builds entries for every u in [first_u, last_u) with u >= fit_window and a descriptor.
         * `descriptors[u]` may be empty for days without a descriptor. Each entry only reads
         * data dated <= u.
         */
        static ScenarioLibrary build(const tape::ReturnTape &tape, const std::vector<Vec> &descriptors,
                                     std::size_t first_u, std::size_t last_u, const LibraryConfig &cfg);

        void append(LibraryEntry entry);
        const std::vector<LibraryEntry> &entries() const { return entries_; }
        std::size_t size() const { return entries_.size(); }

    private:
        std::vector<LibraryEntry> entries_;
    };

    /// Uniform mixture over retrieved atoms.
    struct ScenarioDistribution
    {
        Mat atoms;                         // k x N
        std::vector<std::size_t> sources;  // decision day of each atom

        std::size_t size() const { return static_cast<std::size_t>(atoms.rows()); }
        bool empty() const { return atoms.rows() == 0; }
        Vec mean() const;
        /// E||R - mean||^2 under the uniform mixture.
        double dispersion() const;
    };

    /// TopK by negative Euclidean distance over entries with u < t (ties: smaller u first).
    ScenarioDistribution retrieve(const ScenarioLibrary &library, const Vec &psi, std::size_t t, std::size_t k);

    /// S i.i.d. draws (rows) with replacement from the atom set.
    Mat sample_scenarios(const ScenarioDistribution &dist, std::size_t S, Rng &rng);

    Vec scenario_mean(const Mat &samples);

    /// Train-fitted VAR(1) for the macro stress rollout.
    class MacroVar
    {
    public:
        MacroVar() = default;
        MacroVar(Vec intercept, Mat transition, MahalanobisForm stress);

        /// Least squares on rows [0, end) of the standardized macro matrix.
        static MacroVar fit(const Mat &macro, std::size_t end, double ridge);

        Vec step(const Vec &x) const { return intercept_ + transition_ * x; }
        double stress(const Vec &x) const { return stress_.distance(x); }
        const Mat &transition() const { return transition_; }
        const Vec &intercept() const { return intercept_; }

    private:
        Vec intercept_;
        Mat transition_;
        MahalanobisForm stress_;
    };

    /// Sum of active channels' macro signatures; zero when chi is all-zero.
    Vec channel_impulse(const Vec &chi, const std::vector<Vec> &signatures, Eigen::Index macro_dim);

    /// Peak Mahalanobis stress along a horizon-H rollout started at macro_state + impulse.
    double severity(const Vec &impulse, const Vec &macro_state, const MacroVar &var, std::size_t horizon);

    struct GateParams
    {
        std::size_t window = 252; // L_g
        double quantile = 0.9;    // q_g
        double alpha = 0.5;
        double g_min = 0.2;
        double eps = 1e-8;
    };

    struct RegimeContext
    {
        double g = 1.0;
        double v = 0.0;
        double q = 0.0;
    };

    /// Gate from the current severity and the trailing severities (oldest first).
    RegimeContext regime_context(double v, const std::vector<double> &history, const GateParams &p);

    /// Standard deviation (n-1) of returns realized over the `window` days ending at t.
    Vec trailing_volatility(const tape::ReturnTape &tape, std::size_t t, std::size_t window);
    Vec trailing_mean_return(const tape::ReturnTape &tape, std::size_t t, std::size_t window);

    struct ScrConfig
    {
        regime::EmbeddingConfig embedding;
        double q_shock = 0.99;
        std::optional<double> lambda_sq;
        std::size_t chi_lookback = 10;
        std::size_t vol_window = 20;
        std::size_t fit_window = 60;
        double ridge = 1e-2;
        std::size_t k = 32;
        std::size_t samples = 64;
        std::size_t horizon = 5;
        GateParams gate;
        double var_ridge = 1e-6;

        void validate() const;
    };

    /// Everything the agent and harness need for one decision day, computed from data dated <= day.
    struct DayContext
    {
        std::size_t day = 0;
        bool has_descriptor = false;
        bool valid = false; // descriptor present and at least one past library entry
        Vec macro_z;
        Vec chi;
        Vec vol;
        Vec psi;
        Vec trailing_mean;
        bool shock = false;
        std::optional<int> channel;
        RegimeContext context;
        ScenarioDistribution dist;
    };

    struct ScrRun
    {
        std::vector<DayContext> days;
        regime::ShockLedger ledger;
        ScenarioLibrary library;
    };

    /**
     * Train-fitted, then frozen, parameters of the SCR module. `run` replays the whole tape
     * sequentially; the output for day t depends only on rows dated <= t and on the frozen fit.
     */
    class ScrPipeline
    {
    public:
        static ScrPipeline fit(const tape::ReturnTape &tape, std::size_t train_end, const ScrConfig &cfg,
                               std::uint64_t seed);

        ScrRun run(const tape::ReturnTape &tape) const;

        /// Descriptor [macro z; chi; standardized trailing vol].
        Vec descriptor(const Vec &macro_z, const Vec &chi, const Vec &vol) const;

        const ScrConfig &config() const { return cfg_; }
        const regime::RegimeEmbedder &embedder() const { return embedder_; }
        const regime::ShockDetector &detector() const { return detector_; }
        const MacroVar &macro_var() const { return var_; }
        double lambda_sq() const { return lambda_sq_; }
        std::size_t train_end() const { return train_end_; }
        /// Channels created by the train-segment replay of the fit tape; fixes the width of chi.
        std::size_t channel_capacity() const { return channel_capacity_; }
        std::size_t first_descriptor_day() const;

    private:
        ScrConfig cfg_;
        std::uint64_t seed_ = 0;
        std::size_t train_end_ = 0;
        regime::RegimeEmbedder embedder_;
        regime::ShockDetector detector_;
        double lambda_sq_ = 1.0;
        std::size_t channel_capacity_ = 0;
        MacroVar var_;
        ColumnScaler vol_scaler_;
    };
}
