#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mixcvar/core.hpp"
#include "mixcvar/distn.hpp"
#include "mixcvar/risk.hpp"

namespace mixcvar {

struct SolveConfig {
    /// Fixed-point residual ||x - P(x - grad)|| below which the solve stops.
    double grad_tolerance = 1e-7;
    int max_iters = 5000;
    double armijo_c = 1e-4;
    double backtrack = 0.5;
    double initial_step = 1.0;
    /// Interval tolerance of the inner VaR bisection in the exact solver.
    double inner_var_tolerance = 1e-10;

    void validate() const {
        if (!(grad_tolerance > 0.0) || !(inner_var_tolerance > 0.0) ||
            !(initial_step > 0.0) || max_iters < 1 || !(armijo_c > 0.0 && armijo_c < 1.0) ||
            !(backtrack > 0.0 && backtrack < 1.0)) {
            throw std::invalid_argument("SolveConfig: invalid parameters");
        }
    }
};

struct SolveResult {
    Portfolio x;
    double objective = 0.0;
    /// For the exact mixture solver, the optimal c* (the portfolio VaR).
    std::optional<double> var;
    double kkt_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Accepted objective values, nonincreasing by construction.
    std::vector<double> objective_history;
};

/// Euclidean projection onto the unit simplex by sort and threshold.
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    if (n < 1 || !v.allFinite()) {
        throw std::invalid_argument("project_simplex: finite nonempty vector required");
    }
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double running = 0.0;
    double threshold = u[0] - 1.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        running += u[k];
        const double candidate = (running - 1.0) / static_cast<double>(k + 1);
        if (u[k] - candidate > 0.0) threshold = candidate;
    }
    return (v.array() - threshold).cwiseMax(0.0);
}

/// Expected-return halfspace mu_hat' x >= mu0 used as an optional constraint.
struct ExpectedReturnFloor {
    Eigen::VectorXd mu_hat;
    double mu0 = 0.0;
};

namespace detail {

inline Eigen::VectorXd project_halfspace(const Eigen::VectorXd& v, const Eigen::VectorXd& a,
                                         double b) {
    const double g = a.dot(v);
    if (g >= b) return v;
    return v + (b - g) / a.squaredNorm() * a;
}

/// Dykstra's alternating projections onto simplex ∩ halfspace.
inline Eigen::VectorXd project_intersection(const Eigen::VectorXd& v,
                                            const ExpectedReturnFloor& floor) {
    Eigen::VectorXd x = v;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(v.size());
    Eigen::VectorXd q = Eigen::VectorXd::Zero(v.size());
    for (int it = 0; it < 500; ++it) {
        const Eigen::VectorXd y = project_simplex(x + p);
        p = x + p - y;
        const Eigen::VectorXd xn = project_halfspace(y + q, floor.mu_hat, floor.mu0);
        q = y + q - xn;
        const double delta = (xn - x).lpNorm<Eigen::Infinity>();
        x = xn;
        if (delta < 1e-14) break;
    }
    return x;
}

using ProjectFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using ValueFn = std::function<double(const Eigen::VectorXd&)>;
using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Projected gradient with Armijo backtracking; Barzilai-Borwein trial steps
/// are safeguarded by the line search, so accepted objective values never
/// increase. Terminates on the unit-step fixed-point residual.
inline SolveResult projected_gradient(Eigen::Index n, const ValueFn& f, const GradFn& grad,
                                      const ProjectFn& project, const SolveConfig& cfg) {
    cfg.validate();
    Eigen::VectorXd x = project(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
    double fx = f(x);
    Eigen::VectorXd g = grad(x);
    double step = cfg.initial_step;

    SolveResult result{Portfolio(project_simplex(x)), fx, std::nullopt, 0, 0, false, {fx}};
    int it = 0;
    for (; it < cfg.max_iters; ++it) {
        const double residual = (x - project(x - g)).norm();
        if (residual <= cfg.grad_tolerance) {
            result.converged = true;
            result.kkt_residual = residual;
            break;
        }
        result.kkt_residual = residual;

        double t = std::clamp(step, 1e-12, 1e12);
        Eigen::VectorXd xn;
        double fn = fx;
        bool accepted = false;
        // Decreases smaller than the evaluation noise of f are accepted so
        // the iterate can still be polished once f-differences hit the
        // double-precision floor.
        const double f_noise = 1e-14 * (1.0 + std::abs(fx));
        for (int ls = 0; ls < 80; ++ls) {
            xn = project(x - t * g);
            const Eigen::VectorXd d = xn - x;
            if (d.lpNorm<Eigen::Infinity>() < 1e-16) break;
            fn = f(xn);
            if (fn <= fx + cfg.armijo_c * g.dot(d) + f_noise) {
                accepted = true;
                break;
            }
            t *= cfg.backtrack;
        }
        if (!accepted) break;  // no usable decrease; residual reported as-is

        Eigen::VectorXd gn = grad(xn);
        const Eigen::VectorXd s = xn - x;
        const Eigen::VectorXd y = gn - g;
        const double sy = s.dot(y);
        step = (sy > 1e-18) ? s.squaredNorm() / sy : t * 2.0;

        x = xn;
        fx = fn;
        g = std::move(gn);
        result.objective_history.push_back(fx);
    }
    result.iterations = it;
    result.x = Portfolio(project_simplex(x));
    result.objective = fx;
    if (it == cfg.max_iters) {
        result.kkt_residual = (x - project(x - g)).norm();
        result.converged = result.kkt_residual <= cfg.grad_tolerance;
    }
    return result;
}

inline void check_psd(const Eigen::MatrixXd& sigma, const char* who) {
    if (sigma.rows() != sigma.cols()) throw std::invalid_argument(std::string(who) + ": square");
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw std::invalid_argument(std::string(who) + ": covariance not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = std::max(std::abs(lo), std::abs(es.eigenvalues().maxCoeff()));
    if (lo < -1e-10 * std::max(hi, 1.0)) {
        throw std::invalid_argument(std::string(who) + ": covariance not PSD");
    }
}

inline ProjectFn make_projector(Eigen::Index n, const std::optional<ExpectedReturnFloor>& floor,
                                const char* who) {
    if (!floor) {
        return [](const Eigen::VectorXd& v) { return project_simplex(v); };
    }
    if (floor->mu_hat.size() != n) {
        throw std::invalid_argument(std::string(who) + ": floor dimension mismatch");
    }
    const double best = floor->mu_hat.maxCoeff();
    if (floor->mu0 > best) {
        throw std::invalid_argument(std::string(who) + ": expected-return floor " +
                                    std::to_string(floor->mu0) +
                                    " infeasible; max achievable mean is " +
                                    std::to_string(best));
    }
    const ExpectedReturnFloor fl = *floor;
    return [fl](const Eigen::VectorXd& v) { return project_intersection(v, fl); };
}

inline ProjectedMixture project_raw(const MixtureModel& mix, const Eigen::VectorXd& x) {
    const int m = mix.components();
    Eigen::VectorXd nu(m), sd(m);
    for (int i = 0; i < m; ++i) {
        nu[i] = mix.mean(i).dot(x);
        sd[i] = std::sqrt(std::max(0.0, x.dot(mix.covariance(i) * x)));
    }
    return ProjectedMixture(mix.weights(), std::move(nu), std::move(sd));
}

/// VaR bisection reused by the exact objective/gradient at solver tolerance.
inline double inner_var(const MixtureModel& mix, const Eigen::VectorXd& x, double alpha,
                        double tol) {
    const ProjectedMixture pm = project_raw(mix, x);
    const double sd_max = pm.sd().maxCoeff();
    if (!(sd_max > 0.0)) {
        throw std::invalid_argument("min_cvar_mixture_exact: degenerate projected law");
    }
    double lo = -pm.nu().maxCoeff() - 12.0 * sd_max;
    double hi = -pm.nu().minCoeff() + 12.0 * sd_max;
    for (int k = 0; k < 64 && mixture_cdf(pm, -lo) < alpha; ++k) lo -= 2.0 * (hi - lo);
    for (int k = 0; k < 64 && mixture_cdf(pm, -hi) > alpha; ++k) hi += 2.0 * (hi - lo);
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (mixture_cdf(pm, -mid) - alpha > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Minimize the portfolio standard deviation sqrt(x' sigma x) over the
/// simplex (solved on the squared objective; identical argmin).
inline SolveResult min_stdev(const Eigen::MatrixXd& sigma_hat, const SolveConfig& cfg = {}) {
    detail::check_psd(sigma_hat, "min_stdev");
    const Eigen::Index n = sigma_hat.rows();
    auto f = [&sigma_hat](const Eigen::VectorXd& x) { return x.dot(sigma_hat * x); };
    auto g = [&sigma_hat](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return 2.0 * sigma_hat * x;
    };
    auto r = detail::projected_gradient(
        n, f, g, [](const Eigen::VectorXd& v) { return project_simplex(v); }, cfg);
    r.objective = std::sqrt(std::max(0.0, r.objective));
    for (double& v : r.objective_history) v = std::sqrt(std::max(0.0, v));
    return r;
}

/// Minimize the normal-model CVaR  -mu' x + z_factor(alpha) sqrt(x' sigma x)
/// over the simplex, optionally intersected with an expected-return floor.
inline SolveResult min_cvar_normal(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma_hat,
                                   Probability alpha, const SolveConfig& cfg = {},
                                   const std::optional<ExpectedReturnFloor>& floor = {}) {
    detail::check_psd(sigma_hat, "min_cvar_normal");
    if (mu.size() != sigma_hat.rows()) {
        throw std::invalid_argument("min_cvar_normal: dimension mismatch");
    }
    const double z = z_factor(alpha);
    auto f = [&, z](const Eigen::VectorXd& x) {
        return -mu.dot(x) + z * std::sqrt(std::max(0.0, x.dot(sigma_hat * x)));
    };
    auto g = [&, z](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const Eigen::VectorXd sx = sigma_hat * x;
        const double sd = std::sqrt(std::max(0.0, x.dot(sx)));
        if (sd > 0.0) return -mu + (z / sd) * sx;
        return -mu;
    };
    return detail::projected_gradient(mu.size(), f, g,
                                      detail::make_projector(mu.size(), floor, "min_cvar_normal"),
                                      cfg);
}

/// Minimize the exact mixture CVaR over the simplex. Implemented as a nested
/// scheme: the inner 1-D problem c(x) = VaR(x) is solved by bisection and the
/// outer projected gradient uses the envelope gradient of the
/// Rockafellar-Uryasev objective at fixed c. Returns the optimal c* (the VaR)
/// alongside the CVaR value.
inline SolveResult min_cvar_mixture_exact(const MixtureModel& mix, Probability alpha,
                                          const SolveConfig& cfg = {},
                                          const std::optional<ExpectedReturnFloor>& floor = {}) {
    const Eigen::Index n = mix.assets();
    const double a = alpha.value();
    auto f = [&](const Eigen::VectorXd& x) {
        const double c = detail::inner_var(mix, x, a, cfg.inner_var_tolerance);
        return cvar_objective(detail::project_raw(mix, x), c, alpha);
    };
    auto g = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const double c = detail::inner_var(mix, x, a, cfg.inner_var_tolerance);
        const ProjectedMixture pm = detail::project_raw(mix, x);
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < mix.components(); ++i) {
            const double rho = pm.weights()[i];
            const double nu = pm.nu()[i];
            const double sd = pm.sd()[i];
            if (sd > 0.0) {
                const double u = (-c - nu) / sd;
                grad += rho * (-normal_cdf(u) * mix.mean(i) +
                               (normal_pdf(u) / sd) * (mix.covariance(i) * x));
            } else if (-c >= nu) {
                grad -= rho * mix.mean(i);
            }
        }
        return grad / a;
    };
    auto r = detail::projected_gradient(
        n, f, g, detail::make_projector(n, floor, "min_cvar_mixture_exact"), cfg);
    const auto final_eval = cvar_mixture_exact(detail::project_raw(mix, r.x.weights()), alpha);
    r.objective = final_eval.cvar;
    r.var = final_eval.var;
    return r;
}

/// Minimize the component-wise over-approximation
///   sum_i ( -mu_i' x + z_factor(alpha/rho_i) sqrt(x' sigma_i x) )
/// over the simplex. Requires alpha < min_i rho_i.
inline SolveResult min_cvar_mixture_approx(const MixtureModel& mix, Probability alpha,
                                           const SolveConfig& cfg = {},
                                           const std::optional<ExpectedReturnFloor>& floor = {}) {
    const double a = alpha.value();
    if (a >= mix.weights().minCoeff()) {
        throw std::invalid_argument(
            "min_cvar_mixture_approx: requires alpha < min_i rho_i (alpha=" +
            std::to_string(a) + ", min rho=" + std::to_string(mix.weights().minCoeff()) + ")");
    }
    const Eigen::Index n = mix.assets();
    const int m = mix.components();
    std::vector<double> z(m);
    for (int i = 0; i < m; ++i) z[i] = z_factor(Probability(a / mix.weights()[i]));

    auto f = [&](const Eigen::VectorXd& x) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            acc += -mix.mean(i).dot(x) +
                   z[i] * std::sqrt(std::max(0.0, x.dot(mix.covariance(i) * x)));
        }
        return acc;
    };
    auto g = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < m; ++i) {
            grad -= mix.mean(i);
            const Eigen::VectorXd sx = mix.covariance(i) * x;
            const double sd = std::sqrt(std::max(0.0, x.dot(sx)));
            if (sd > 0.0) grad += (z[i] / sd) * sx;
        }
        return grad;
    };
    return detail::projected_gradient(
        n, f, g, detail::make_projector(n, floor, "min_cvar_mixture_approx"), cfg);
}

}  // namespace mixcvar
