#include "scr/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scr
{
    double quantile_linear(std::vector<double> values, double q)
    {
        if (values.empty())
        {
            throw std::invalid_argument("quantile of an empty sample");
        }
        if (!(q >= 0.0 && q <= 1.0))
        {
            throw std::invalid_argument("quantile level must lie in [0, 1]");
        }
        std::sort(values.begin(), values.end());
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return values[lo] + frac * (values[hi] - values[lo]);
    }

    double mean_of(const std::vector<double> &values)
    {
        if (values.empty())
        {
            return 0.0;
        }
        return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    }

    double stddev_of(const std::vector<double> &values)
    {
        if (values.size() < 2)
        {
            return 0.0;
        }
        const double m = mean_of(values);
        double ss = 0.0;
        for (double v : values)
        {
            ss += (v - m) * (v - m);
        }
        return std::sqrt(ss / static_cast<double>(values.size() - 1));
    }

    bool all_finite(const Vec &v)
    {
        return v.allFinite();
    }

    bool all_finite(const Mat &m)
    {
        return m.allFinite();
    }

    MahalanobisForm::MahalanobisForm(const Vec &mean, const Mat &cov, double ridge_rel)
        : mean_(mean), cov_(cov)
    {
        const auto k = static_cast<double>(cov.rows());
        const double ridge = ridge_rel * std::max(cov.trace(), 0.0) / std::max(k, 1.0);
        cov_.diagonal().array() += ridge;
        llt_.compute(cov_);
        if (llt_.info() != Eigen::Success || cov_.trace() <= 0.0)
        {
            throw DataError("covariance is singular even after regularization");
        }
        fitted_ = true;
    }

    double MahalanobisForm::squared_distance(const Vec &x) const
    {
        const Vec y = llt_.matrixL().solve(x - mean_);
        return y.squaredNorm();
    }

    double MahalanobisForm::distance(const Vec &x) const
    {
        return std::sqrt(squared_distance(x));
    }

    ColumnScaler ColumnScaler::fit(const Mat &rows)
    {
        if (rows.rows() < 2)
        {
            throw DataError("need at least two rows to fit a column scaler");
        }
        ColumnScaler s;
        s.mean = rows.colwise().mean().transpose();
        const Mat centered = rows.rowwise() - s.mean.transpose();
        s.std = (centered.array().square().colwise().sum() / static_cast<double>(rows.rows() - 1)).sqrt().transpose();
        // numerically constant columns are centered but not rescaled
        for (Eigen::Index j = 0; j < s.std.size(); ++j)
            if (s.std(j) <= 1e-10 * std::max(1.0, std::abs(s.mean(j))))
                s.std(j) = 1.0;
        return s;
    }

    Vec ColumnScaler::apply(const Vec &x) const
    {
        return ((x - mean).array() / std.array()).matrix();
    }

    Mat ColumnScaler::apply_rows(const Mat &rows) const
    {
        Mat out = rows.rowwise() - mean.transpose();
        for (Eigen::Index j = 0; j < out.cols(); ++j)
        {
            out.col(j) /= std(j);
        }
        return out;
    }
}
