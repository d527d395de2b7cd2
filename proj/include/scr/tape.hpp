/**
 * @file tape.hpp
 * @brief Return tapes: CSV loading, synthetic regime-switching generation and chronological splits.
 */
#pragma once

#include "scr/common.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scr::tape
{
    using Date = std::chrono::sys_days;

    /// Parses an ISO-8601 calendar date (YYYY-MM-DD).
    Date parse_date(std::string_view text);
    std::string format_date(Date d);

    /**
     * Aligned daily closes and macro features for a fixed set of assets.
     *
     * Row t of `returns` is the simple return realized from day t to day t+1, so it becomes
     * known at the close of day t+1. `macro` holds standardized features; the scaler that
     * produced them was fitted on the training rows only and is kept for audit.
     */
    struct ReturnTape
    {
        std::vector<Date> dates;
        Mat prices;    // T x N
        Mat returns;   // (T-1) x N
        Mat macro;     // T x M, standardized
        Mat macro_raw; // T x M, as loaded / generated
        std::vector<std::string> asset_ids;
        std::vector<std::string> macro_ids;
        ColumnScaler macro_scaler;
        std::size_t standardized_rows = 0; // number of leading rows the scaler was fitted on
        std::vector<std::string> warnings;

        std::size_t days() const { return dates.size(); }
        std::size_t assets() const { return asset_ids.size(); }
        std::size_t macro_dim() const { return macro_ids.size(); }

        /// Index of the last trading day dated on or before `d`; nullopt when d precedes the tape.
        std::optional<std::size_t> index_on_or_before(Date d) const;

        /// Throws DataError when an invariant is violated.
        void validate() const;
    };

    /// Recomputes returns from prices (simple returns).
    Mat simple_returns(const Mat &prices);

    /// Refits the macro scaler on rows [0, fit_rows) and rewrites `macro`.
    void standardize_macro(ReturnTape &tape, std::size_t fit_rows);

    enum class UniverseCategory
    {
        MarketProxy,
        HighVol,
        LowVol,
        General
    };

    UniverseCategory parse_category(std::string_view text);
    std::string to_string(UniverseCategory c);

    struct Universe
    {
        std::string name;
        std::vector<std::string> asset_ids;
        UniverseCategory category = UniverseCategory::General;

        void validate(const ReturnTape &tape) const;
    };

    /// Restricts a tape to the universe's assets (macro columns are shared).
    ReturnTape select_universe(const ReturnTape &tape, const Universe &universe);

    struct LoadSchema
    {
        std::string date_column = "date";
        std::vector<std::string> asset_columns; // empty: every non-date, non-macro column
        std::string macro_prefix = "macro_";
        std::optional<Date> standardize_until; // train end; when unset, all rows are used
        std::size_t min_rows = 30;
    };

    /// Loads and validates a CSV tape. Rows with a missing cell are dropped and logged.
    ReturnTape load_tape(const std::string &path, const LoadSchema &schema = {});

    /// Same as load_tape but from in-memory CSV text (used by tests and tools).
    ReturnTape parse_tape_csv(std::string_view text, const LoadSchema &schema = {});

    /// Writes prices and raw macro columns in the loader's CSV format.
    void write_tape_csv(const ReturnTape &tape, const std::string &path);

    struct RegimeSpec
    {
        Vec mean;       // N
        Mat covariance; // N x N, symmetric PSD
        double expected_duration = 50.0;
    };

    /// Forces a regime over [start, start + length) instead of the Markov draw.
    struct ForcedRegime
    {
        std::size_t start = 0;
        std::size_t length = 0;
        std::size_t regime = 0;
    };

    /// Off-manifold block: macro features and returns shifted for `length` days.
    struct AnomalyBlock
    {
        std::size_t start = 0;
        std::size_t length = 5;
        double macro_shift = 4.0;
        double return_shift = 0.0;
    };

    struct SyntheticTapeConfig
    {
        std::size_t n_assets = 0;
        std::size_t n_days = 0;
        std::vector<RegimeSpec> regimes;
        std::uint64_t seed = 0;
        double macro_noise = 0.1;
        std::size_t extra_macro = 0; // pure-noise macro columns appended after the regime one-hot
        std::vector<ForcedRegime> schedule;
        std::vector<AnomalyBlock> anomalies;
        std::string start_date = "2010-01-04";
        std::optional<std::size_t> standardize_rows; // defaults to 60% of the days

        void validate() const;
    };

    struct SyntheticTape
    {
        ReturnTape tape;
        std::vector<std::size_t> regime_path; // active regime per day
        std::vector<bool> anomaly_day;
    };

    /// Markov regime-switching Gaussian returns; deterministic given cfg.seed.
    SyntheticTape generate_synthetic_tape(const SyntheticTapeConfig &cfg);

    struct SplitSpec
    {
        Date train_end;
        Date valid_end;
        Date test_end;
    };

    /// Half-open range of day indices.
    struct Segment
    {
        std::size_t begin = 0;
        std::size_t end = 0;
        std::size_t size() const { return end - begin; }
        bool contains(std::size_t t) const { return t >= begin && t < end; }
    };

    struct SplitIndices
    {
        Segment train;
        Segment valid;
        Segment test;
    };

    /// Chronological split; each boundary snaps to the last trading day on or before the spec date.
    SplitIndices split(const ReturnTape &tape, const SplitSpec &spec);

    /// Standalone copy of a segment: dates, prices, macro and the returns internal to it.
    ReturnTape slice(const ReturnTape &tape, Segment seg);
}
