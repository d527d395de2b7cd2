/**
 * @file metrics.hpp
 * @brief Out-of-sample performance metrics, scenario/real gap, residual AUC and quartile summaries.
 */
#pragma once

#include "scr/common.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace scr::metrics
{
    inline constexpr double kPeriodsPerYear = 252.0;

    /// Mean / std (n-1) * sqrt(252); nullopt for fewer than two points or zero variance.
    std::optional<double> sharpe(const std::vector<double> &returns);
    /// std (n-1) * sqrt(252).
    double ann_vol(const std::vector<double> &returns);
    /// Wealth curve prod (1 + r) starting from 1 (length T + 1).
    std::vector<double> wealth_curve(const std::vector<double> &returns);
    /// max_t 1 - W_t / max_{s <= t} W_s, with W_0 = 1 included.
    double max_drawdown(const std::vector<double> &returns);
    /// Compound annual growth rate W_T^(252/T) - 1.
    double cagr(const std::vector<double> &returns);
    /// CAGR / max drawdown; nullopt when the drawdown is zero.
    std::optional<double> calmar(const std::vector<double> &returns);
    /// Mean of ||w_t - w_{t-1}||_1 over consecutive entries of the trail.
    double turnover(const std::vector<Vec> &weights);
    /// |mean(scenario scores) - mean(realized returns)|.
    double gap_final(const std::vector<double> &scen_scores, const std::vector<double> &realized);
    /// Trapezoidal area of the series over progress spread evenly on [0, 1].
    double resid_auc(const std::vector<double> &series);

    struct MetricsReport
    {
        std::optional<double> sharpe;
        std::optional<double> calmar;
        double ann_vol = 0.0;
        double max_dd = 0.0;
        double turnover = 0.0;
        std::optional<double> gap_final;
        std::optional<double> resid_auc;
    };

    MetricsReport evaluate(const std::vector<double> &returns, const std::vector<Vec> &weights);

    inline const std::vector<std::string> &metric_names()
    {
        static const std::vector<std::string> names{"sharpe", "calmar", "ann_vol", "max_dd", "turnover", "gap_final", "resid_auc"};
        return names;
    }

    std::optional<double> metric_value(const MetricsReport &r, const std::string &name);

    struct Quartiles
    {
        double median = 0.0, q1 = 0.0, q3 = 0.0;
        std::size_t count = 0; // runs with a defined value
    };

    Quartiles quartiles(const std::vector<double> &values);

    struct SummaryRow
    {
        std::string strategy;
        std::vector<std::optional<Quartiles>> cells; // one per metric_names(); nullopt if no run defines it
    };

    /// Median [Q1, Q3] per metric across runs; undefined values are skipped.
    SummaryRow summarize(const std::string &strategy, const std::vector<MetricsReport> &runs);

    /// Formats a double with %.17g; nullopt becomes "NA".
    std::string format_number(std::optional<double> x);

    /// strategy,<metric>_median,<metric>_q1,<metric>_q3,... one line per row.
    void write_summary_csv(std::ostream &out, const std::vector<SummaryRow> &rows);
}
