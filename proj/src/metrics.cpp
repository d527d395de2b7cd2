#include "scr/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace scr::metrics
{
    std::optional<double> sharpe(const std::vector<double> &returns)
    {
        if (returns.size() < 2)
            return std::nullopt;
        const double sd = stddev_of(returns);
        const double m = mean_of(returns);
        // constant series leave only round-off in the std
        if (!(sd > 1e-13 * std::abs(m)) || !(sd > 0.0))
            return std::nullopt;
        return m / sd * std::sqrt(kPeriodsPerYear);
    }

    double ann_vol(const std::vector<double> &returns)
    {
        if (returns.size() < 2)
            return 0.0;
        return stddev_of(returns) * std::sqrt(kPeriodsPerYear);
    }

    std::vector<double> wealth_curve(const std::vector<double> &returns)
    {
        std::vector<double> w{1.0};
        w.reserve(returns.size() + 1);
        for (double r : returns)
            w.push_back(w.back() * (1.0 + r));
        return w;
    }

    double max_drawdown(const std::vector<double> &returns)
    {
        double peak = 1.0, wealth = 1.0, dd = 0.0;
        for (double r : returns)
        {
            wealth *= 1.0 + r;
            peak = std::max(peak, wealth);
            dd = std::max(dd, 1.0 - wealth / peak);
        }
        return dd;
    }

    double cagr(const std::vector<double> &returns)
    {
        if (returns.empty())
            return 0.0;
        const double w = wealth_curve(returns).back();
        if (w <= 0.0)
            return -1.0;
        return std::pow(w, kPeriodsPerYear / static_cast<double>(returns.size())) - 1.0;
    }

    std::optional<double> calmar(const std::vector<double> &returns)
    {
        const double dd = max_drawdown(returns);
        if (!(dd > 0.0))
            return std::nullopt;
        return cagr(returns) / dd;
    }

    double turnover(const std::vector<Vec> &weights)
    {
        if (weights.size() < 2)
            return 0.0;
        double s = 0.0;
        for (std::size_t t = 1; t < weights.size(); ++t)
            s += (weights[t] - weights[t - 1]).lpNorm<1>();
        return s / static_cast<double>(weights.size() - 1);
    }

    double gap_final(const std::vector<double> &scen_scores, const std::vector<double> &realized)
    {
        if (scen_scores.size() != realized.size() || realized.empty())
        {
            throw DataError("gap needs equal-length, non-empty scenario and realized series");
        }
        return std::abs(mean_of(scen_scores) - mean_of(realized));
    }

    double resid_auc(const std::vector<double> &series)
    {
        if (series.empty())
            throw DataError("residual AUC of an empty series");
        if (series.size() == 1)
            return series.front();
        double s = 0.0;
        for (std::size_t i = 1; i < series.size(); ++i)
            s += 0.5 * (series[i - 1] + series[i]);
        return s / static_cast<double>(series.size() - 1);
    }

    MetricsReport evaluate(const std::vector<double> &returns, const std::vector<Vec> &weights)
    {
        MetricsReport r;
        r.sharpe = sharpe(returns);
        r.calmar = calmar(returns);
        r.ann_vol = ann_vol(returns);
        r.max_dd = max_drawdown(returns);
        r.turnover = turnover(weights);
        return r;
    }

    std::optional<double> metric_value(const MetricsReport &r, const std::string &name)
    {
        if (name == "sharpe")
            return r.sharpe;
        if (name == "calmar")
            return r.calmar;
        if (name == "ann_vol")
            return r.ann_vol;
        if (name == "max_dd")
            return r.max_dd;
        if (name == "turnover")
            return r.turnover;
        if (name == "gap_final")
            return r.gap_final;
        if (name == "resid_auc")
            return r.resid_auc;
        throw ConfigError("unknown metric '" + name + "'");
    }

    Quartiles quartiles(const std::vector<double> &values)
    {
        if (values.empty())
            throw DataError("quartiles of an empty sample");
        return {quantile_linear(values, 0.5), quantile_linear(values, 0.25), quantile_linear(values, 0.75), values.size()};
    }

    SummaryRow summarize(const std::string &strategy, const std::vector<MetricsReport> &runs)
    {
        SummaryRow row{strategy, {}};
        for (const auto &name : metric_names())
        {
            std::vector<double> v;
            for (const auto &r : runs)
            {
                if (const auto x = metric_value(r, name))
                    v.push_back(*x);
            }
            row.cells.push_back(v.empty() ? std::nullopt : std::optional<Quartiles>(quartiles(v)));
        }
        return row;
    }

    std::string format_number(std::optional<double> x)
    {
        return x ? fmt::format("{:.17g}", *x) : std::string("NA");
    }

    void write_summary_csv(std::ostream &out, const std::vector<SummaryRow> &rows)
    {
        out << "strategy";
        for (const auto &name : metric_names())
            out << ',' << name << "_median," << name << "_q1," << name << "_q3";
        out << '\n';
        for (const auto &row : rows)
        {
            out << row.strategy;
            for (const auto &cell : row.cells)
            {
                if (cell)
                    out << ',' << format_number(cell->median) << ',' << format_number(cell->q1) << ',' << format_number(cell->q3);
                else
                    out << ",NA,NA,NA";
            }
            out << '\n';
        }
    }
}
