#include "scr/theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace scr::theory
{
    namespace
    {
        constexpr double kInf = std::numeric_limits<double>::infinity();

        Vec random_vec(Rng &rng, Eigen::Index n, double scale)
        {
            Vec v(n);
            for (Eigen::Index i = 0; i < n; ++i)
                v(i) = scale * standard_normal(rng);
            return v;
        }

        Vec random_probs(Rng &rng, std::size_t k)
        {
            Vec p(static_cast<Eigen::Index>(k));
            for (Eigen::Index i = 0; i < p.size(); ++i)
                p(i) = 0.2 + uniform01(rng);
            return p / p.sum();
        }

        double sup_norm(const Vec &v)
        {
            return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
        }
    }

    void EmpiricalDistribution::validate() const
    {
        if (atoms.rows() != weights.size() || atoms.rows() == 0)
            throw DataError("distribution needs one weight per atom and at least one atom");
        if (atoms.rows() > 200)
            throw DataError("distribution supports are capped at 200 atoms");
        if (!all_finite(atoms) || !all_finite(weights) || weights.minCoeff() < 0.0)
            throw DataError("distribution weights must be finite and non-negative");
        if (std::abs(weights.sum() - 1.0) > 1e-9)
            throw DataError("distribution weights must sum to 1");
    }

    Vec EmpiricalDistribution::mean() const
    {
        return atoms.transpose() * weights;
    }

    Transport optimal_transport(const Vec &p, const Vec &q, const Mat &C)
    {
        const auto n = p.size(), m = q.size();
        if (C.rows() != n || C.cols() != m || n == 0 || m == 0)
            throw DataError("transport cost matrix does not match the marginals");
        if (!all_finite(C) || C.minCoeff() < 0.0 || p.minCoeff() < 0.0 || q.minCoeff() < 0.0)
            throw DataError("transport needs a finite non-negative cost and non-negative marginals");

        // nodes: supply 0..n-1, demand n..n+m-1, source S, sink T
        constexpr double eps = 1e-15;
        const Eigen::Index S = n + m, T = n + m + 1, V = n + m + 2;
        Mat F = Mat::Zero(n, m);
        Vec sup = p, dem = q;
        Vec pot = Vec::Zero(V);
        Vec dist(V);
        std::vector<Eigen::Index> prev(static_cast<std::size_t>(V));
        std::vector<char> done(static_cast<std::size_t>(V));

        while (std::min(sup.sum(), dem.sum()) > 1e-14)
        {
            dist.setConstant(kInf);
            std::fill(prev.begin(), prev.end(), -1);
            std::fill(done.begin(), done.end(), 0);
            dist(S) = 0.0;
            auto relax = [&](Eigen::Index u, Eigen::Index v, double c)
            {
                const double nd = dist(u) + std::max(0.0, c + pot(u) - pot(v));
                if (nd < dist(v))
                {
                    dist(v) = nd;
                    prev[static_cast<std::size_t>(v)] = u;
                }
            };
            for (Eigen::Index iter = 0; iter < V; ++iter)
            {
                Eigen::Index u = -1;
                for (Eigen::Index v = 0; v < V; ++v)
                {
                    if (!done[static_cast<std::size_t>(v)] && dist(v) < kInf && (u < 0 || dist(v) < dist(u)))
                        u = v;
                }
                if (u < 0 || u == T)
                    break;
                done[static_cast<std::size_t>(u)] = 1;
                if (u == S)
                {
                    for (Eigen::Index i = 0; i < n; ++i)
                        if (sup(i) > eps)
                            relax(S, i, 0.0);
                }
                else if (u < n)
                {
                    for (Eigen::Index j = 0; j < m; ++j)
                        relax(u, n + j, C(u, j));
                }
                else
                {
                    const Eigen::Index j = u - n;
                    for (Eigen::Index i = 0; i < n; ++i)
                        if (F(i, j) > eps)
                            relax(u, i, -C(i, j));
                    if (dem(j) > eps)
                        relax(u, T, 0.0);
                }
            }
            if (!(dist(T) < kInf))
                break;
            for (Eigen::Index v = 0; v < V; ++v)
                pot(v) += std::min(dist(v), dist(T));

            double amount = kInf;
            for (Eigen::Index v = T; v != S;)
            {
                const Eigen::Index u = prev[static_cast<std::size_t>(v)];
                if (u == S)
                    amount = std::min(amount, sup(v));
                else if (v == T)
                    amount = std::min(amount, dem(u - n));
                else if (u >= n)
                    amount = std::min(amount, F(v, u - n));
                v = u;
            }
            for (Eigen::Index v = T; v != S;)
            {
                const Eigen::Index u = prev[static_cast<std::size_t>(v)];
                if (u == S)
                    sup(v) -= amount;
                else if (v == T)
                    dem(u - n) -= amount;
                else if (u < n)
                    F(u, v - n) += amount;
                else
                    F(v, u - n) -= amount;
                v = u;
            }
        }
        return {(F.array() * C.array()).sum(), F};
    }

    Mat ground_cost(const Mat &x, const Mat &y, double power)
    {
        Mat C(x.rows(), y.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < y.rows(); ++j)
            {
                const double d2 = (x.row(i) - y.row(j)).squaredNorm();
                C(i, j) = power == 2.0 ? d2 : std::pow(std::sqrt(d2), power);
            }
        return C;
    }

    double wasserstein_1d(const EmpiricalDistribution &p, const EmpiricalDistribution &q, int order)
    {
        auto sorted = [](const EmpiricalDistribution &d)
        {
            std::vector<std::pair<double, double>> v;
            for (Eigen::Index i = 0; i < d.atoms.rows(); ++i)
                v.emplace_back(d.atoms(i, 0), d.weights(i));
            std::sort(v.begin(), v.end());
            return v;
        };
        const auto a = sorted(p), b = sorted(q);
        std::size_t i = 0, j = 0;
        double wa = a[0].second, wb = b[0].second, cost = 0.0;
        while (i < a.size() && j < b.size())
        {
            const double w = std::min(wa, wb);
            cost += w * std::pow(std::abs(a[i].first - b[j].first), order);
            wa -= w;
            wb -= w;
            if (wa <= 1e-16 && ++i < a.size())
                wa = a[i].second;
            if (wb <= 1e-16 && ++j < b.size())
                wb = b[j].second;
        }
        return order == 1 ? cost : std::sqrt(cost);
    }

    double wasserstein(const EmpiricalDistribution &p, const EmpiricalDistribution &q, int order)
    {
        if (order != 1 && order != 2)
            throw ConfigError("Wasserstein order must be 1 or 2");
        p.validate();
        q.validate();
        if (p.atoms.cols() != q.atoms.cols())
            throw DataError("distributions live in different dimensions");
        if (p.atoms.cols() == 1)
            return wasserstein_1d(p, q, order);
        const double c = optimal_transport(p.weights, q.weights, ground_cost(p.atoms, q.atoms, order)).cost;
        return order == 1 ? c : std::sqrt(std::max(c, 0.0));
    }

    EmpiricalDistribution FiniteModel::distribution(const FiniteLaw &law) const
    {
        EmpiricalDistribution d;
        const auto dim = pool.front().size();
        d.atoms.resize(static_cast<Eigen::Index>(law.atoms.size()), dim);
        for (std::size_t i = 0; i < law.atoms.size(); ++i)
            d.atoms.row(static_cast<Eigen::Index>(i)) = pool[law.atoms[i]].transpose();
        d.weights = law.probs;
        return d;
    }

    void FiniteModel::validate() const
    {
        auto need = [](bool ok, const char *what)
        {
            if (!ok)
                throw DataError(std::string("finite model: ") + what);
        };
        need(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
        need(n_z >= 1 && n_actions >= 1 && !pool.empty(), "empty context, action or outcome set");
        need(memory.size() == n_actions, "one memory table per action");
        for (const auto &M : memory)
            need(M.rows() == static_cast<Eigen::Index>(pool.size()), "memory table rows must match the pool");
        need(next_z.size() == n_z && real_of_z.size() == n_z && psi_of_z.size() == n_z, "context tables");
        need(scen_mean.size() == scen_laws.size(), "one mean per scenario law");
        for (auto z : next_z)
            need(z < n_z, "next context out of range");
        for (auto r : real_of_z)
            need(r < real_laws.size(), "real law index out of range");
        for (auto r : psi_of_z)
            need(r < scen_laws.size(), "scenario law index out of range");
        for (const auto *laws : {&real_laws, &scen_laws})
            for (const auto &law : *laws)
            {
                need(law.atoms.size() == static_cast<std::size_t>(law.probs.size()) && !law.atoms.empty(), "law sizes");
                need(law.probs.minCoeff() >= 0.0 && std::abs(law.probs.sum() - 1.0) <= 1e-12, "law probabilities");
                for (auto x : law.atoms)
                    need(x < pool.size(), "law atom outside the pool");
            }
        need(reward.size() == num_states(), "one reward table per state");
        for (const auto &R : reward)
            need(R.rows() == static_cast<Eigen::Index>(n_actions) && R.cols() == static_cast<Eigen::Index>(pool.size()), "reward table shape");
        need(policy.rows() == static_cast<Eigen::Index>(num_states()) && policy.cols() == static_cast<Eigen::Index>(n_actions), "policy shape");
        for (Eigen::Index s = 0; s < policy.rows(); ++s)
            need(policy.row(s).minCoeff() >= 0.0 && std::abs(policy.row(s).sum() - 1.0) <= 1e-12, "policy rows must be distributions");
    }

    FiniteModel random_model(const ModelSpec &spec, Rng &rng)
    {
        FiniteModel m;
        m.delta = spec.delta;
        m.n_z = spec.n_z;
        m.n_actions = spec.n_actions;
        const auto d = static_cast<Eigen::Index>(spec.outcome_dim);

        for (std::size_t z = 0; z < m.n_z; ++z)
        {
            FiniteLaw scen, real;
            std::vector<Vec> scen_atoms;
            for (std::size_t k = 0; k < spec.atoms; ++k)
            {
                scen_atoms.push_back(random_vec(rng, d, 1.0));
                scen.atoms.push_back(m.pool.size());
                m.pool.push_back(scen_atoms.back());
            }
            scen.probs = random_probs(rng, spec.atoms);
            if (spec.identical_laws)
            {
                real = scen;
            }
            else
            {
                // the real law has its own atom count, shifted atoms and its own weights
                const std::size_t k_real = std::max<std::size_t>(1, spec.atoms + uniform_index(rng, 3) - 1);
                for (std::size_t k = 0; k < k_real; ++k)
                {
                    const Vec base = scen_atoms[k % scen_atoms.size()];
                    real.atoms.push_back(m.pool.size());
                    m.pool.push_back(base + random_vec(rng, d, spec.mismatch));
                }
                real.probs = random_probs(rng, k_real);
            }
            Vec mu = Vec::Zero(d);
            for (std::size_t k = 0; k < scen.atoms.size(); ++k)
                mu += scen.probs(static_cast<Eigen::Index>(k)) * m.pool[scen.atoms[k]];
            m.scen_mean.push_back(m.pool.size());
            m.pool.push_back(mu);
            m.scen_laws.push_back(scen);
            m.real_laws.push_back(real);
            m.real_of_z.push_back(z);
            m.psi_of_z.push_back(z);
            m.next_z.push_back(uniform_index(rng, m.n_z));
        }

        const auto P = static_cast<Eigen::Index>(m.pool.size());
        std::vector<Vec> u_act, v_pol;
        for (std::size_t a = 0; a < m.n_actions; ++a)
        {
            const Vec w = random_vec(rng, d, 1.0), v = random_vec(rng, d, 1.0);
            Mat H(P, 2);
            for (Eigen::Index x = 0; x < P; ++x)
            {
                const Vec &pt = m.pool[static_cast<std::size_t>(x)];
                H(x, 0) = std::tanh(w.dot(pt));
                H(x, 1) = 0.5 * std::sin(v.dot(pt));
            }
            m.memory.push_back(std::move(H));
            u_act.push_back(random_vec(rng, d, 1.0));
            v_pol.push_back(random_vec(rng, 2, 1.0));
        }
        const Mat bias = Mat::NullaryExpr(static_cast<Eigen::Index>(m.n_z), static_cast<Eigen::Index>(m.n_actions),
                                          [&]() { return 0.5 * standard_normal(rng); });
        const Mat theta = Mat::NullaryExpr(static_cast<Eigen::Index>(m.n_z), static_cast<Eigen::Index>(m.n_actions),
                                           [&]() { return standard_normal(rng); });
        const Vec e = random_vec(rng, 2, 1.0);

        m.policy.resize(static_cast<Eigen::Index>(m.num_states()), static_cast<Eigen::Index>(m.n_actions));
        for (std::size_t s = 0; s < m.num_states(); ++s)
        {
            const std::size_t z = m.z_of(s);
            const Vec h = m.h(s);
            Mat R(static_cast<Eigen::Index>(m.n_actions), P);
            Vec logits(static_cast<Eigen::Index>(m.n_actions));
            for (std::size_t a = 0; a < m.n_actions; ++a)
            {
                const auto ai = static_cast<Eigen::Index>(a);
                for (Eigen::Index x = 0; x < P; ++x)
                    R(ai, x) = u_act[a].dot(m.pool[static_cast<std::size_t>(x)]) + bias(static_cast<Eigen::Index>(z), ai) + 0.5 * std::tanh(h.dot(e));
                logits(ai) = theta(static_cast<Eigen::Index>(z), ai) + h.dot(v_pol[a]);
            }
            m.reward.push_back(std::move(R));
            const Vec ex = (logits.array() - logits.maxCoeff()).exp().matrix();
            m.policy.row(static_cast<Eigen::Index>(s)) = (ex / ex.sum()).transpose();
        }
        m.validate();
        return m;
    }

    FiniteModel suite_model(std::uint64_t root_seed, std::size_t index)
    {
        Rng rng = make_rng(root_seed, "theory", index);
        ModelSpec spec;
        spec.n_z = 1 + uniform_index(rng, 4);
        spec.n_actions = 1 + uniform_index(rng, 3);
        spec.outcome_dim = 1 + uniform_index(rng, 3);
        spec.atoms = 1 + uniform_index(rng, 4);
        static constexpr double mismatches[] = {0.01, 0.1, 0.5, 1.5};
        spec.mismatch = mismatches[uniform_index(rng, 4)];
        spec.identical_laws = uniform_index(rng, 10) == 0;
        spec.delta = 0.3 + 0.65 * uniform01(rng);
        return random_model(spec, rng);
    }

    double expected_continuation(const FiniteModel &m, const Vec &V, std::size_t s, std::size_t a, const FiniteLaw &law)
    {
        double e = 0.0;
        for (std::size_t k = 0; k < law.atoms.size(); ++k)
            e += law.probs(static_cast<Eigen::Index>(k)) * V(static_cast<Eigen::Index>(m.upd(s, a, law.atoms[k])));
        return e;
    }

    Vec apply_operator(const FiniteModel &m, const Vec &V, OperatorKind kind)
    {
        Vec out(static_cast<Eigen::Index>(m.num_states()));
        for (std::size_t s = 0; s < m.num_states(); ++s)
        {
            const FiniteLaw &scen = m.scen_law(s);
            const FiniteLaw &cont = kind == OperatorKind::Hybrid ? m.real_law(s) : scen;
            double total = 0.0;
            for (std::size_t a = 0; a < m.n_actions; ++a)
            {
                double r = 0.0;
                for (std::size_t k = 0; k < scen.atoms.size(); ++k)
                    r += scen.probs(static_cast<Eigen::Index>(k)) * m.reward[s](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(scen.atoms[k]));
                double c = 0.0;
                for (std::size_t k = 0; k < cont.atoms.size(); ++k)
                    c += cont.probs(static_cast<Eigen::Index>(k)) * V(static_cast<Eigen::Index>(m.upd(s, a, cont.atoms[k])));
                total += m.policy(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * (r + m.delta * c);
            }
            out(static_cast<Eigen::Index>(s)) = total;
        }
        return out;
    }

    Vec continuation_part(const FiniteModel &m, const Vec &D, OperatorKind kind)
    {
        Vec out(static_cast<Eigen::Index>(m.num_states()));
        for (std::size_t s = 0; s < m.num_states(); ++s)
        {
            const FiniteLaw &law = kind == OperatorKind::Hybrid ? m.real_law(s) : m.scen_law(s);
            double total = 0.0;
            for (std::size_t a = 0; a < m.n_actions; ++a)
                total += m.policy(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * expected_continuation(m, D, s, a, law);
            out(static_cast<Eigen::Index>(s)) = m.delta * total;
        }
        return out;
    }

    double lemma_residual(const FiniteModel &m, const Vec &V)
    {
        const Vec diff = apply_operator(m, V, OperatorKind::Hybrid) - apply_operator(m, V, OperatorKind::Scenario);
        double worst = 0.0;
        for (std::size_t s = 0; s < m.num_states(); ++s)
        {
            double e = 0.0;
            for (std::size_t a = 0; a < m.n_actions; ++a)
            {
                const double gap = expected_continuation(m, V, s, a, m.real_law(s)) - expected_continuation(m, V, s, a, m.scen_law(s));
                e += m.policy(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * gap;
            }
            worst = std::max(worst, std::abs(diff(static_cast<Eigen::Index>(s)) - m.delta * e));
        }
        return worst;
    }

    FixedPoint fixed_point(const FiniteModel &m, OperatorKind kind, double tol, std::size_t max_iter)
    {
        FixedPoint fp;
        Vec V = Vec::Zero(static_cast<Eigen::Index>(m.num_states()));
        double prev_norm = -1.0;
        for (std::size_t k = 1; k <= max_iter; ++k)
        {
            const Vec next = apply_operator(m, V, kind);
            const Vec D = next - V;
            const double dn = sup_norm(D);
            if (prev_norm >= 1e-4)
                fp.max_observed_ratio = std::max(fp.max_observed_ratio, dn / prev_norm);
            if (dn > 0.0)
                fp.max_contraction = std::max(fp.max_contraction, sup_norm(continuation_part(m, D, kind)) / dn);
            V = next;
            prev_norm = dn;
            if (dn <= tol * (1.0 - m.delta))
            {
                fp.V = V;
                fp.iterations = k;
                return fp;
            }
        }
        throw BoundViolation("value iteration did not converge within " + std::to_string(max_iter) + " iterations");
    }

    double measured_lipschitz_h(const FiniteModel &m)
    {
        double L = 0.0;
        for (std::size_t a = 0; a < m.n_actions; ++a)
            for (std::size_t x = 0; x < m.pool.size(); ++x)
                for (std::size_t y = x + 1; y < m.pool.size(); ++y)
                {
                    const double dx = (m.pool[x] - m.pool[y]).norm();
                    const double dh = (m.memory[a].row(static_cast<Eigen::Index>(x)) - m.memory[a].row(static_cast<Eigen::Index>(y))).norm();
                    if (dx > 0.0)
                        L = std::max(L, dh / dx);
                    else if (dh > 0.0)
                        return kInf;
                }
        return L;
    }

    double measured_lipschitz_v(const FiniteModel &m, const Vec &V)
    {
        double L = 0.0;
        const std::size_t per_z = m.n_actions * m.pool.size();
        for (std::size_t z = 0; z < m.n_z; ++z)
            for (std::size_t i = z * per_z; i < (z + 1) * per_z; ++i)
            {
                const Vec hi = m.h(i);
                for (std::size_t j = i + 1; j < (z + 1) * per_z; ++j)
                {
                    const double dv = std::abs(V(static_cast<Eigen::Index>(i)) - V(static_cast<Eigen::Index>(j)));
                    const double dh = (hi - m.h(j)).norm();
                    if (dh > 0.0)
                        L = std::max(L, dv / dh);
                    else if (dv > 0.0)
                        return kInf;
                }
            }
        return L;
    }

    double delta_w(const FiniteModel &m)
    {
        double w = 0.0;
        for (std::size_t z = 0; z < m.n_z; ++z)
        {
            const auto &real = m.real_laws[m.real_of_z[z]];
            const auto &scen = m.scen_laws[m.psi_of_z[z]];
            w = std::max(w, wasserstein(m.distribution(real), m.distribution(scen), 1));
        }
        return w;
    }

    BoundReport check_operator_gap(const FiniteModel &m, const Vec &V)
    {
        BoundReport r;
        r.lhs = sup_norm(apply_operator(m, V, OperatorKind::Hybrid) - apply_operator(m, V, OperatorKind::Scenario));
        r.lipschitz_v = measured_lipschitz_v(m, V);
        r.lipschitz_h = measured_lipschitz_h(m);
        r.delta_w = delta_w(m);
        r.rhs = r.delta_w == 0.0 ? 0.0 : m.delta * r.lipschitz_v * r.lipschitz_h * r.delta_w;
        r.pass = r.lhs <= r.rhs + 1e-9;
        return r;
    }

    BoundReport check_fixed_point_bias(const FiniteModel &m, const FixedPoint &hyb, const FixedPoint &scen)
    {
        BoundReport r;
        r.lhs = sup_norm(hyb.V - scen.V);
        r.lipschitz_v = measured_lipschitz_v(m, scen.V);
        r.lipschitz_h = measured_lipschitz_h(m);
        r.delta_w = delta_w(m);
        r.rhs = r.delta_w == 0.0 ? 0.0 : m.delta / (1.0 - m.delta) * r.lipschitz_v * r.lipschitz_h * r.delta_w;
        r.pass = r.lhs <= r.rhs + 1e-8;
        return r;
    }

    double beta_star(double A, double B)
    {
        if (!(A >= 0.0) || !(B >= 0.0) || A + B == 0.0)
            throw DataError("beta* needs non-negative A and B, not both zero");
        return A / (A + B);
    }

    double rhs_argmin(double A, double B, const std::vector<double> &betas)
    {
        double best = kInf, arg = betas.front();
        for (double b : betas)
        {
            const double v = (1.0 - b) * (1.0 - b) * A + b * b * B;
            if (v < best)
            {
                best = v;
                arg = b;
            }
        }
        return arg;
    }

    std::vector<double> default_beta_grid()
    {
        std::vector<double> g;
        for (int i = 0; i <= 10; ++i)
            g.push_back(i / 10.0);
        return g;
    }

    MixingReport check_mixing_bound(const FiniteModel &m, const FixedPoint &scen, const std::vector<double> &betas)
    {
        MixingReport rep;
        rep.betas = betas;
        const std::size_t nb = betas.size();
        rep.lhs_mean.assign(nb, 0.0);
        rep.rhs_mean.assign(nb, 0.0);
        rep.lhs_independent_mean.assign(nb, 0.0);
        rep.lipschitz_v = measured_lipschitz_v(m, scen.V);
        rep.lipschitz_h = measured_lipschitz_h(m);
        const double L2 = std::pow(rep.lipschitz_v * rep.lipschitz_h, 2);
        double step = 0.0;
        for (std::size_t i = 1; i < nb; ++i)
            step = std::max(step, betas[i] - betas[i - 1]);

        // optimal W2 couplings and proxy variances per context
        std::vector<Transport> coupling(m.n_z);
        std::vector<double> A(m.n_z), B(m.n_z);
        for (std::size_t z = 0; z < m.n_z; ++z)
        {
            const auto &real = m.real_laws[m.real_of_z[z]];
            const auto &sc = m.scen_laws[m.psi_of_z[z]];
            const auto pr = m.distribution(real), ps = m.distribution(sc);
            coupling[z] = optimal_transport(pr.weights, ps.weights, ground_cost(pr.atoms, ps.atoms, 2.0));
            A[z] = std::max(0.0, coupling[z].cost);
            const Vec &mu = m.pool[m.scen_mean[m.psi_of_z[z]]];
            double b = 0.0;
            for (std::size_t k = 0; k < sc.atoms.size(); ++k)
                b += sc.probs(static_cast<Eigen::Index>(k)) * (m.pool[sc.atoms[k]] - mu).squaredNorm();
            B[z] = b;
            rep.max_delta2 = std::max(rep.max_delta2, A[z]);
            rep.max_sigma2 = std::max(rep.max_sigma2, B[z]);
            if (A[z] + B[z] > 0.0 && std::abs(rhs_argmin(A[z], B[z], betas) - beta_star(A[z], B[z])) > step + 1e-12)
                ++rep.argmin_misses;
        }

        const double d2 = m.delta * m.delta;
        double sumA = 0.0, sumB = 0.0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < m.num_states(); ++s)
        {
            const std::size_t z = m.z_of(s);
            const auto &real = m.real_laws[m.real_of_z[z]];
            const auto &sc = m.scen_laws[m.psi_of_z[z]];
            const std::size_t mu = m.scen_mean[m.psi_of_z[z]];
            const Mat &plan = coupling[z].plan;
            for (std::size_t a = 0; a < m.n_actions; ++a)
            {
                auto f = [&](std::size_t x) { return scen.V(static_cast<Eigen::Index>(m.upd(s, a, x))); };
                const double f_mu = f(mu);
                sumA += A[z];
                sumB += B[z];
                ++count;
                for (std::size_t bi = 0; bi < nb; ++bi)
                {
                    const double beta = betas[bi];
                    double lhs = 0.0, indep = 0.0;
                    for (std::size_t i = 0; i < real.atoms.size(); ++i)
                        for (std::size_t j = 0; j < sc.atoms.size(); ++j)
                        {
                            const double e = (1.0 - beta) * f(real.atoms[i]) + beta * f_mu - f(sc.atoms[j]);
                            lhs += plan(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * e * e;
                            indep += real.probs(static_cast<Eigen::Index>(i)) * sc.probs(static_cast<Eigen::Index>(j)) * e * e;
                        }
                    lhs *= d2;
                    indep *= d2;
                    const double rhs = 2.0 * d2 * L2 * ((1.0 - beta) * (1.0 - beta) * A[z] + beta * beta * B[z]);
                    rep.max_violation = std::max(rep.max_violation, lhs - rhs);
                    if (lhs > rhs + 1e-9)
                        ++rep.violations;
                    if (indep > rhs + 1e-9)
                        ++rep.independent_exceed;
                    rep.lhs_mean[bi] += lhs;
                    rep.rhs_mean[bi] += rhs;
                    rep.lhs_independent_mean[bi] += indep;
                }
            }
        }
        for (std::size_t bi = 0; bi < nb; ++bi)
        {
            rep.lhs_mean[bi] /= static_cast<double>(count);
            rep.rhs_mean[bi] /= static_cast<double>(count);
            rep.lhs_independent_mean[bi] /= static_cast<double>(count);
        }
        if (sumA + sumB > 0.0)
        {
            rep.beta_star_pooled = beta_star(sumA, sumB);
            rep.rhs_argmin_pooled = rhs_argmin(sumA, sumB, betas);
            if (std::abs(rep.rhs_argmin_pooled - rep.beta_star_pooled) > step + 1e-12)
                ++rep.argmin_misses;
        }
        rep.pass = rep.violations == 0 && rep.argmin_misses == 0;
        return rep;
    }

    FiniteModel tightness_model(double d, double delta)
    {
        FiniteModel m;
        m.delta = delta;
        m.n_z = 1;
        m.n_actions = 1;
        m.pool = {Vec::Constant(1, 0.0), Vec::Constant(1, d)};
        Mat H(2, 1);
        H << 0.0, d;
        m.memory = {H};
        m.next_z = {0};
        m.real_laws = {{{0}, Vec::Ones(1)}};
        m.scen_laws = {{{1}, Vec::Ones(1)}};
        m.real_of_z = {0};
        m.psi_of_z = {0};
        m.scen_mean = {1};
        m.reward.assign(m.num_states(), Mat::Zero(1, 2));
        m.policy = Mat::Ones(2, 1);
        m.validate();
        return m;
    }

    ModelCheck check_model(std::uint64_t root_seed, std::size_t index)
    {
        ModelCheck c;
        c.seed = root_seed;
        c.index = index;
        const FiniteModel m = suite_model(root_seed, index);
        c.delta = m.delta;
        c.states = m.num_states();

        // a smooth test function of (z, h)
        Rng rng = make_rng(root_seed, "theory.values", index);
        const Mat coef = Mat::NullaryExpr(static_cast<Eigen::Index>(m.n_z), 3, [&]() { return standard_normal(rng); });
        Vec V(static_cast<Eigen::Index>(m.num_states()));
        for (std::size_t s = 0; s < m.num_states(); ++s)
        {
            const auto z = static_cast<Eigen::Index>(m.z_of(s));
            const Vec h = m.h(s);
            V(static_cast<Eigen::Index>(s)) = 5.0 * coef(z, 0) + coef(z, 1) * h(0) + std::sin(coef(z, 2) * h(1));
        }

        const FixedPoint hyb = fixed_point(m, OperatorKind::Hybrid);
        const FixedPoint scen = fixed_point(m, OperatorKind::Scenario);
        c.iterations_hyb = hyb.iterations;
        c.iterations_scen = scen.iterations;
        c.contraction = std::max(hyb.max_contraction, scen.max_contraction);
        c.observed_ratio = std::max(hyb.max_observed_ratio, scen.max_observed_ratio);

        for (auto kind : {OperatorKind::Hybrid, OperatorKind::Scenario})
            for (int pair = 0; pair < 5; ++pair)
            {
                Vec V1(V.size()), V2(V.size());
                for (Eigen::Index i = 0; i < V.size(); ++i)
                {
                    V1(i) = 10.0 * standard_normal(rng);
                    V2(i) = 10.0 * standard_normal(rng);
                }
                c.random_pair_contraction = std::max(c.random_pair_contraction,
                                                     sup_norm(apply_operator(m, V1, kind) - apply_operator(m, V2, kind)) / sup_norm(V1 - V2));
            }

        c.lemma_residual = std::max(lemma_residual(m, V), lemma_residual(m, scen.V));
        c.lemma_pass = c.lemma_residual < 1e-12;
        c.contraction_pass = c.contraction <= m.delta + 1e-10 && c.random_pair_contraction <= m.delta + 1e-10;
        c.gap = check_operator_gap(m, V);
        c.gap_scen_value = check_operator_gap(m, scen.V);
        c.bias = check_fixed_point_bias(m, hyb, scen);
        c.mixing = check_mixing_bound(m, scen, default_beta_grid());
        c.pass = c.lemma_pass && c.contraction_pass && c.gap.pass && c.gap_scen_value.pass && c.bias.pass && c.mixing.pass;
        return c;
    }

    SuiteReport verify_theory(std::uint64_t root_seed, std::size_t n_models)
    {
        SuiteReport r;
        for (std::size_t i = 0; i < n_models; ++i)
        {
            r.models.push_back(check_model(root_seed, i));
            if (!r.models.back().pass)
                ++r.violations;
        }
        r.pass = r.violations == 0;
        return r;
    }

    namespace
    {
        nlohmann::json bound_json(const BoundReport &b)
        {
            return {{"lhs", b.lhs}, {"rhs", b.rhs}, {"L_V", b.lipschitz_v}, {"L_h", b.lipschitz_h},
                    {"delta_W", b.delta_w}, {"tightness", b.ratio()}, {"pass", b.pass}};
        }
    }

    nlohmann::json SuiteReport::to_json() const
    {
        nlohmann::json models_json = nlohmann::json::array();
        std::size_t lemma = 0, gap = 0, bias = 0, mix = 0, contraction = 0;
        for (const auto &c : models)
        {
            lemma += c.lemma_pass ? 0 : 1;
            contraction += c.contraction_pass ? 0 : 1;
            gap += c.gap.pass && c.gap_scen_value.pass ? 0 : 1;
            bias += c.bias.pass ? 0 : 1;
            mix += c.mixing.pass ? 0 : 1;
            models_json.push_back({
                {"index", c.index},
                {"delta", c.delta},
                {"states", c.states},
                {"pass", c.pass},
                {"lemma_residual", c.lemma_residual},
                {"contraction_factor", c.contraction},
                {"observed_step_ratio", c.observed_ratio},
                {"random_pair_contraction", c.random_pair_contraction},
                {"iterations", {{"hybrid", c.iterations_hyb}, {"scenario", c.iterations_scen}}},
                {"operator_gap", bound_json(c.gap)},
                {"operator_gap_at_v_scen", bound_json(c.gap_scen_value)},
                {"fixed_point_bias", bound_json(c.bias)},
                {"mixing",
                 {{"betas", c.mixing.betas},
                  {"lhs_mean", c.mixing.lhs_mean},
                  {"rhs_mean", c.mixing.rhs_mean},
                  {"lhs_independent_mean", c.mixing.lhs_independent_mean},
                  {"violations", c.mixing.violations},
                  {"max_violation", c.mixing.max_violation},
                  {"independent_exceed", c.mixing.independent_exceed},
                  {"delta_2_max", c.mixing.max_delta2},
                  {"sigma2_scen_max", c.mixing.max_sigma2},
                  {"L_V", c.mixing.lipschitz_v},
                  {"L_h", c.mixing.lipschitz_h},
                  {"beta_star", c.mixing.beta_star_pooled},
                  {"rhs_argmin", c.mixing.rhs_argmin_pooled},
                  {"argmin_misses", c.mixing.argmin_misses},
                  {"pass", c.mixing.pass}}},
            });
        }
        return {{"models", models_json},
                {"summary",
                 {{"n_models", models.size()},
                  {"violations", violations},
                  {"failed", {{"lemma", lemma}, {"contraction", contraction}, {"operator_gap", gap}, {"fixed_point_bias", bias}, {"mixing", mix}}},
                  {"pass", pass}}}};
    }
}
