#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "mixcvar/core.hpp"
#include "mixcvar/distn.hpp"

namespace mixcvar {

// Risk measures follow the left-tail convention: VaR_a(Z) is the negated
// a-quantile of the return Z, CVaR_a(Z) = -E[Z | Z <= -VaR_a(Z)]. Both are
// positive for loss-making tails and may legitimately be negative for deeply
// profitable ones. Levels beta >= 1 use the conventions VaR_beta = -inf and
// CVaR_beta = -mean at beta = 1, -inf for beta > 1.

namespace detail {

inline double var_level(double nu, double sd, double beta) {
    if (beta >= 1.0) return -std::numeric_limits<double>::infinity();
    return -nu - normal_quantile(Probability(beta)) * sd;
}

inline double cvar_level(double nu, double sd, double beta) {
    if (beta > 1.0) return -std::numeric_limits<double>::infinity();
    if (beta == 1.0) return -nu;
    return -nu + z_factor(Probability(beta)) * sd;
}

}  // namespace detail

/// VaR of a normal return with mean nu and deviation sd.
inline double var_normal(double nu, double sd, Probability alpha) {
    if (sd < 0.0) throw std::invalid_argument("var_normal: sd >= 0");
    return -nu - normal_quantile(alpha) * sd;
}

/// CVaR of a normal return: -nu + z_factor(alpha) * sd.
inline double cvar_normal(double nu, double sd, Probability alpha) {
    if (sd < 0.0) throw std::invalid_argument("cvar_normal: sd >= 0");
    return -nu + z_factor(alpha) * sd;
}

/// Cdf of the projected mixture at y. Zero-deviation components contribute a
/// step at their mean.
inline double mixture_cdf(const ProjectedMixture& pm, double y) {
    double acc = 0.0;
    for (int i = 0; i < pm.components(); ++i) {
        if (pm.sd()[i] > 0.0) {
            acc += pm.weights()[i] * normal_cdf((y - pm.nu()[i]) / pm.sd()[i]);
        } else if (y >= pm.nu()[i]) {
            acc += pm.weights()[i];
        }
    }
    return acc;
}

/// VaR lower/upper bounds for the mixture from the per-component tail levels.
/// The lower bound max_i VaR_{alpha/rho_i} is always valid; the upper bound
/// max_i VaR_{alpha*theta_i/rho_i} requires interior simplex weights theta
/// with alpha*theta_i <= rho_i and defaults to theta = rho.
inline std::pair<double, double> var_bounds(
    const ProjectedMixture& pm, Probability alpha,
    const std::optional<Eigen::VectorXd>& theta = std::nullopt) {
    const int m = pm.components();
    const double a = alpha.value();

    Eigen::VectorXd th;
    if (theta) {
        th = *theta;
        if (th.size() != m) throw std::invalid_argument("var_bounds: theta size mismatch");
        double sum = 0.0;
        for (int i = 0; i < m; ++i) {
            if (!(th[i] > 0.0)) throw std::invalid_argument("var_bounds: theta must be > 0");
            if (a * th[i] > pm.weights()[i] * (1.0 + 1e-15)) {
                throw std::invalid_argument("var_bounds: alpha*theta_i exceeds rho_i");
            }
            sum += th[i];
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("var_bounds: theta must sum to 1");
        }
    } else {
        th = pm.weights();
    }

    double lower = -std::numeric_limits<double>::infinity();
    double upper = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
        lower = std::max(lower, detail::var_level(pm.nu()[i], pm.sd()[i], a / pm.weights()[i]));
        upper = std::max(upper,
                         detail::var_level(pm.nu()[i], pm.sd()[i], a * th[i] / pm.weights()[i]));
    }
    return {lower, upper};
}

/// VaR of the projected mixture by bisection on the cdf, bracketed by the
/// component bounds widened by ten deviations. Requires a nondegenerate
/// component; 200 iterations with 1e-12 interval tolerance.
inline double var_mixture(const ProjectedMixture& pm, Probability alpha) {
    const double sd_max = pm.sd().maxCoeff();
    if (!(sd_max > 0.0)) {
        throw std::invalid_argument("var_mixture: all components degenerate (discrete law)");
    }
    const double a = alpha.value();
    auto [blo, bhi] = var_bounds(pm, alpha);
    double lo = std::isfinite(blo) ? blo : (-pm.nu().maxCoeff() - 10.0 * sd_max);
    double hi = bhi;
    lo -= 10.0 * sd_max;
    hi += 10.0 * sd_max;

    // Expand until the root is bracketed: cdf(-V) - alpha changes sign from
    // >= 0 at lo to <= 0 at hi.
    for (int k = 0; k < 64 && mixture_cdf(pm, -lo) < a; ++k) lo -= 2.0 * (hi - lo);
    for (int k = 0; k < 64 && mixture_cdf(pm, -hi) > a; ++k) hi += 2.0 * (hi - lo);

    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double g = mixture_cdf(pm, -mid) - a;
        if (g > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

/// The Rockafellar-Uryasev objective specialized to the mixture law:
///   c + (1/alpha) sum_i rho_i [sigma_i^2 pdf_i(-c) - (c + nu_i) cdf_i(-c)],
/// convex in c with minimizer c* = VaR and minimum value CVaR.
inline double cvar_objective(const ProjectedMixture& pm, double c, Probability alpha) {
    double acc = 0.0;
    for (int i = 0; i < pm.components(); ++i) {
        const double nu = pm.nu()[i];
        const double sd = pm.sd()[i];
        if (sd > 0.0) {
            const double u = (-c - nu) / sd;
            acc += pm.weights()[i] * (sd * normal_pdf(u) - (c + nu) * normal_cdf(u));
        } else if (-c >= nu) {
            acc += pm.weights()[i] * (-(c + nu));
        }
    }
    return c + acc / alpha.value();
}

struct MixtureCvar {
    double cvar;
    double var;
};

/// Exact mixture CVaR: locate V by bisection, then evaluate the analytic
/// truncated-moment expression
///   (1/alpha) sum_i rho_i [sigma_i^2 pdf_i(-V) - nu_i cdf_i(-V)].
inline MixtureCvar cvar_mixture_exact(const ProjectedMixture& pm, Probability alpha) {
    const double v = var_mixture(pm, alpha);
    double acc = 0.0;
    for (int i = 0; i < pm.components(); ++i) {
        const double nu = pm.nu()[i];
        const double sd = pm.sd()[i];
        if (sd > 0.0) {
            const double u = (-v - nu) / sd;
            acc += pm.weights()[i] * (sd * normal_pdf(u) - nu * normal_cdf(u));
        } else if (-v >= nu) {
            acc += pm.weights()[i] * (-nu);
        }
    }
    return {acc / alpha.value(), v};
}

struct CvarBounds {
    double lower;
    double upper;
    /// upper/lower; meaningful (and in [1, m]) only when lower > 0.
    std::optional<double> kappa;
};

/// CVaR under/over-approximations from the component tails:
/// lower = max_i CVaR_{alpha/rho_i}, upper = sum_i CVaR_{alpha/rho_i}.
/// The upper bound (and kappa) require alpha < min_i rho_i. The
/// over-approximation guarantee additionally needs every component VaR at
/// its adjusted level to be nonnegative (alpha <= rho_i * cdf(-nu_i/sd_i)),
/// which holds for the small tail levels risk-averse use cases employ; the
/// formula is evaluated regardless.
inline CvarBounds cvar_bounds(const ProjectedMixture& pm, Probability alpha) {
    const double a = alpha.value();
    if (a >= pm.weights().minCoeff()) {
        throw std::invalid_argument("cvar_bounds: requires alpha < min_i rho_i");
    }
    double lower = -std::numeric_limits<double>::infinity();
    double upper = 0.0;
    for (int i = 0; i < pm.components(); ++i) {
        const double ci = detail::cvar_level(pm.nu()[i], pm.sd()[i], a / pm.weights()[i]);
        lower = std::max(lower, ci);
        upper += ci;
    }
    CvarBounds out{lower, upper, std::nullopt};
    if (lower > 0.0) out.kappa = upper / lower;
    return out;
}

/// Percentage deviation of an over-approximation from the exact value:
/// 100 * (approx/exact - 1). Requires a positive exact value.
inline double approx_error(double exact, double approx) {
    if (!(exact > 0.0)) {
        throw std::invalid_argument("approx_error: exact value must be positive");
    }
    return 100.0 * (approx / exact - 1.0);
}

/// VaR/CVaR, their bounds, and the approximation factor in one record.
struct RiskResult {
    double var = 0.0;
    double cvar = 0.0;
    double var_lower = 0.0;
    double var_upper = 0.0;
    double cvar_lower = 0.0;
    std::optional<double> cvar_upper;
    std::optional<double> kappa;
};

inline RiskResult risk_profile(const ProjectedMixture& pm, Probability alpha,
                               const std::optional<Eigen::VectorXd>& theta = std::nullopt) {
    RiskResult r;
    const auto exact = cvar_mixture_exact(pm, alpha);
    r.var = exact.var;
    r.cvar = exact.cvar;
    std::tie(r.var_lower, r.var_upper) = var_bounds(pm, alpha, theta);
    const double a = alpha.value();
    if (a < pm.weights().minCoeff()) {
        const auto cb = cvar_bounds(pm, alpha);
        r.cvar_lower = cb.lower;
        r.cvar_upper = cb.upper;
        r.kappa = cb.kappa;
    } else {
        double lower = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < pm.components(); ++i) {
            lower = std::max(lower,
                             detail::cvar_level(pm.nu()[i], pm.sd()[i], a / pm.weights()[i]));
        }
        r.cvar_lower = lower;
    }
    return r;
}

}  // namespace mixcvar
