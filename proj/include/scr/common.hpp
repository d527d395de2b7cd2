/**
 * @file common.hpp
 * @brief Shared numeric aliases, error types and small helpers.
 */
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace scr
{
    using Vec = Eigen::VectorXd;
    using Mat = Eigen::MatrixXd;
    using RowVec = Eigen::RowVectorXd;

    /// Base class for all library errors.
    class Error : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    /// Malformed or inconsistent input data (CSV, tapes, windows).
    class DataError : public Error
    {
    public:
        using Error::Error;
    };

    /// Invalid configuration; the CLI maps this to exit code 2.
    class ConfigError : public Error
    {
    public:
        using Error::Error;
    };

    /// A numerically checked bound or invariant failed; exit code 3.
    class BoundViolation : public Error
    {
    public:
        using Error::Error;
    };

    /// Linear-interpolation quantile (the "type 7" convention) of an unsorted sample.
    double quantile_linear(std::vector<double> values, double q);

    /// Sample mean and (n-1) standard deviation.
    double mean_of(const std::vector<double> &values);
    double stddev_of(const std::vector<double> &values);

    bool all_finite(const Vec &v);
    bool all_finite(const Mat &m);

    /// Cholesky-based inverse-quadratic-form helper: returns x^T S^{-1} x.
    class MahalanobisForm
    {
    public:
        MahalanobisForm() = default;
        /// Regularizes S by adding ridge_rel * trace(S)/k to the diagonal before factorizing.
        MahalanobisForm(const Vec &mean, const Mat &cov, double ridge_rel);

        double squared_distance(const Vec &x) const;
        double distance(const Vec &x) const;
        const Vec &mean() const { return mean_; }
        const Mat &covariance() const { return cov_; }
        bool fitted() const { return fitted_; }

    private:
        Vec mean_;
        Mat cov_;
        Eigen::LLT<Mat> llt_;
        bool fitted_ = false;
    };

    /// Column mean / std (n-1) of the given rows; numerically constant columns keep unit scale.
    struct ColumnScaler
    {
        Vec mean;
        Vec std;

        static ColumnScaler fit(const Mat &rows);
        Vec apply(const Vec &x) const;
        Mat apply_rows(const Mat &rows) const;
        bool operator==(const ColumnScaler &other) const = default;
    };
}
