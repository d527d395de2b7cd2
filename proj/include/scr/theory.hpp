/**
 * @file theory.hpp
 * @brief Finite-support laboratory for the hybrid and scenario-consistent Bellman operators:
 * exact optimal transport, fixed points, and the operator-gap, fixed-point-bias and mixing bounds.
 */
#pragma once

#include "scr/common.hpp"
#include "scr/rng.hpp"

#include "json.hpp"

#include <limits>
#include <vector>

namespace scr::theory
{
    /// Weighted point cloud; atoms are rows.
    struct EmpiricalDistribution
    {
        Mat atoms;
        Vec weights;

        /// Throws DataError unless weights are non-negative, sum to 1 (1e-9) and there are at most 200 atoms.
        void validate() const;
        Vec mean() const;
    };

    struct Transport
    {
        double cost = 0.0;
        Mat plan; // n x m, marginals p and q
    };

    /// Exact min-cost transport for a non-negative cost matrix (successive shortest paths).
    Transport optimal_transport(const Vec &p, const Vec &q, const Mat &cost);

    /// Euclidean ground cost raised to `power`.
    Mat ground_cost(const Mat &x, const Mat &y, double power);

    /// W_1 or W_2 with Euclidean ground metric; one-dimensional atoms use the sorted quantile coupling.
    double wasserstein(const EmpiricalDistribution &p, const EmpiricalDistribution &q, int order);
    /// Quantile-coupling value for one-dimensional atoms.
    double wasserstein_1d(const EmpiricalDistribution &p, const EmpiricalDistribution &q, int order);

    /// Finite-support outcome law over the model's outcome pool.
    struct FiniteLaw
    {
        std::vector<std::size_t> atoms; // pool indices
        Vec probs;
    };

    enum class OperatorKind
    {
        Hybrid,  // scenario reward, realized continuation
        Scenario // scenario reward, scenario continuation
    };

    /**
     * Tabular model. A state is (z, a_prev, x_prev): exogenous context z and the memory
     * h = H(a_prev, x_prev). Upd(s, a, x) = (next_z(z), a, x). Reward, policy and both outcome laws
     * depend on the state only through (z, h).
     */
    struct FiniteModel
    {
        double delta = 0.9;
        std::size_t n_z = 1;
        std::size_t n_actions = 1;
        std::vector<Vec> pool;            // outcome points
        std::vector<Mat> memory;          // per action: pool x d_h rows H(a, x)
        std::vector<std::size_t> next_z;  // exogenous transition
        std::vector<FiniteLaw> real_laws; // indexed by real_of_z
        std::vector<FiniteLaw> scen_laws; // indexed by psi_of_z
        std::vector<std::size_t> real_of_z;
        std::vector<std::size_t> psi_of_z;
        std::vector<std::size_t> scen_mean; // pool index of each scenario law's mean
        std::vector<Mat> reward;            // per state: actions x pool
        Mat policy;                         // states x actions, rows sum to 1

        std::size_t num_states() const { return n_z * n_actions * pool.size(); }
        std::size_t state(std::size_t z, std::size_t a, std::size_t x) const { return (z * n_actions + a) * pool.size() + x; }
        std::size_t z_of(std::size_t s) const { return s / (n_actions * pool.size()); }
        std::size_t a_of(std::size_t s) const { return (s / pool.size()) % n_actions; }
        std::size_t x_of(std::size_t s) const { return s % pool.size(); }
        Vec h(std::size_t s) const { return memory[a_of(s)].row(static_cast<Eigen::Index>(x_of(s))).transpose(); }
        std::size_t upd(std::size_t s, std::size_t a, std::size_t x) const { return state(next_z[z_of(s)], a, x); }
        const FiniteLaw &real_law(std::size_t s) const { return real_laws[real_of_z[z_of(s)]]; }
        const FiniteLaw &scen_law(std::size_t s) const { return scen_laws[psi_of_z[z_of(s)]]; }
        EmpiricalDistribution distribution(const FiniteLaw &law) const;

        /// Throws DataError on inconsistent tables.
        void validate() const;
    };

    struct ModelSpec
    {
        std::size_t n_z = 3;
        std::size_t n_actions = 2;
        std::size_t outcome_dim = 2;
        std::size_t atoms = 3;
        double mismatch = 0.05; // scale of the real-vs-scenario atom shift
        bool identical_laws = false;
        double delta = 0.9;
    };

    FiniteModel random_model(const ModelSpec &spec, Rng &rng);
    /// The randomized-suite model for a seed: sizes, discount and mismatch vary with the seed.
    FiniteModel suite_model(std::uint64_t root_seed, std::size_t index);

    /// Exact one-step operator.
    Vec apply_operator(const FiniteModel &m, const Vec &V, OperatorKind kind);
    /// Linear part of the operator (delta P V) applied to a difference vector.
    Vec continuation_part(const FiniteModel &m, const Vec &D, OperatorKind kind);

    /// E_{x ~ law} V(Upd(s, a, x)).
    double expected_continuation(const FiniteModel &m, const Vec &V, std::size_t s, std::size_t a, const FiniteLaw &law);

    /// max_s |(T_hyb V - T_scen V)(s) - delta E_a[Delta(s, a)]| with Delta from expected continuations.
    double lemma_residual(const FiniteModel &m, const Vec &V);

    struct FixedPoint
    {
        Vec V;
        std::size_t iterations = 0;
        double max_contraction = 0.0;       // max_k ||delta P D_k|| / ||D_k||
        double max_observed_ratio = 0.0;    // max_k ||D_{k+1}|| / ||D_k|| while ||D_k|| >= 1e-4
    };

    /// Value iteration until the sup-norm error is below tol (successive change <= tol (1 - delta)).
    FixedPoint fixed_point(const FiniteModel &m, OperatorKind kind, double tol = 1e-10,
                           std::size_t max_iter = 1000000);

    /// Sup over pool pairs and actions of ||H(a, x) - H(a, y)|| / ||x - y||.
    double measured_lipschitz_h(const FiniteModel &m);
    /// Sup over state pairs sharing z of |V(s) - V(s')| / ||h(s) - h(s')||; infinite on a collision with distinct values.
    double measured_lipschitz_v(const FiniteModel &m, const Vec &V);
    /// Max over contexts of W_1(real law, scenario law).
    double delta_w(const FiniteModel &m);

    struct BoundReport
    {
        double lhs = 0.0;
        double rhs = 0.0;
        double lipschitz_v = 0.0;
        double lipschitz_h = 0.0;
        double delta_w = 0.0;
        bool pass = false;
        double ratio() const { return rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0); }
    };

    /// ||T_hyb V - T_scen V||_inf <= delta L_V L_h Delta_W (+1e-9), L_V measured from V.
    BoundReport check_operator_gap(const FiniteModel &m, const Vec &V);
    /// ||V_hyb - V_scen||_inf <= delta/(1-delta) L_V L_h Delta_W (+1e-8), L_V measured from V_scen.
    BoundReport check_fixed_point_bias(const FiniteModel &m, const FixedPoint &hyb, const FixedPoint &scen);

    double beta_star(double A, double B);

    struct MixingReport
    {
        std::vector<double> betas;
        std::vector<double> lhs_mean;     // exact MSE under the optimal W2 coupling, averaged over (s, a)
        std::vector<double> rhs_mean;
        std::vector<double> lhs_independent_mean; // diagnostic: independent real/scenario draws
        double max_violation = 0.0;      // max over (s, a, beta) of LHS - RHS
        std::size_t violations = 0;      // LHS > RHS + 1e-9
        std::size_t independent_exceed = 0; // diagnostic count, not a bound check
        double max_delta2 = 0.0;
        double max_sigma2 = 0.0;
        double lipschitz_v = 0.0;
        double lipschitz_h = 0.0;
        double beta_star_pooled = 0.0;   // sum A / (sum A + sum B) over (s, a)
        double rhs_argmin_pooled = 0.0;
        std::size_t argmin_misses = 0;   // contexts whose RHS argmin is more than one grid step from beta*
        bool pass = false;
    };

    /// Exact one-step mixing check over every (state, action) and beta in the grid.
    MixingReport check_mixing_bound(const FiniteModel &m, const FixedPoint &scen, const std::vector<double> &betas);

    /// Grid point minimizing (1 - b)^2 A + b^2 B.
    double rhs_argmin(double A, double B, const std::vector<double> &betas);

    std::vector<double> default_beta_grid(); // 0, 0.1, ..., 1

    /// 1 context, 1 action, scalar outcome, h = x, V = h: real point mass at 0, scenario at d.
    FiniteModel tightness_model(double d, double delta);

    struct ModelCheck
    {
        std::uint64_t seed = 0;
        std::size_t index = 0;
        double delta = 0.0;
        std::size_t states = 0;
        double lemma_residual = 0.0;
        double contraction = 0.0;
        double observed_ratio = 0.0;
        std::size_t iterations_hyb = 0, iterations_scen = 0;
        double random_pair_contraction = 0.0;
        BoundReport gap;
        BoundReport gap_scen_value;
        BoundReport bias;
        MixingReport mixing;
        bool lemma_pass = false, contraction_pass = false, pass = false;
    };

    ModelCheck check_model(std::uint64_t root_seed, std::size_t index);

    struct SuiteReport
    {
        std::vector<ModelCheck> models;
        std::size_t violations = 0;
        bool pass = false;
        nlohmann::json to_json() const;
    };

    SuiteReport verify_theory(std::uint64_t root_seed, std::size_t n_models);
}
