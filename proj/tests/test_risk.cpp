#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mixcvar/risk.hpp"
#include "support/oracles.hpp"
#include "support/reference_model.hpp"

using Eigen::VectorXd;
using mixcvar::Probability;
using mixcvar::ProjectedMixture;
using mixcvar::approx_error;
using mixcvar::cvar_bounds;
using mixcvar::cvar_mixture_exact;
using mixcvar::cvar_normal;
using mixcvar::cvar_objective;
using mixcvar::mixture_cdf;
using mixcvar::var_bounds;
using mixcvar::var_mixture;
using mixcvar::var_normal;

namespace {

ProjectedMixture make_pm(std::initializer_list<double> rho, std::initializer_list<double> nu,
                         std::initializer_list<double> sd) {
    auto tov = [](std::initializer_list<double> v) {
        VectorXd out(static_cast<Eigen::Index>(v.size()));
        Eigen::Index i = 0;
        for (double x : v) out[i++] = x;
        return out;
    };
    return ProjectedMixture(tov(rho), tov(nu), tov(sd));
}

ProjectedMixture energy_pm() {
    return make_pm({0.19, 0.81}, {-0.0686, 1.4687}, {8.5162, 5.5799});
}

// Independent VaR oracle: plain bisection of the oracle cdf on a fixed wide
// bracket, refined to 1e-13.
double oracle_var(const ProjectedMixture& pm, double alpha) {
    const double span = 60.0 * pm.sd().maxCoeff() + 1.0;
    double qlo = pm.nu().minCoeff() - span;
    double qhi = pm.nu().maxCoeff() + span;
    auto cdf = [&](double y) {
        double acc = 0.0;
        for (int i = 0; i < pm.components(); ++i) {
            acc += pm.weights()[i] * oracles::std_normal_cdf((y - pm.nu()[i]) / pm.sd()[i]);
        }
        return acc;
    };
    for (int it = 0; it < 300 && qhi - qlo > 1e-13; ++it) {
        const double mid = 0.5 * (qlo + qhi);
        (cdf(mid) < alpha ? qlo : qhi) = mid;
    }
    return -0.5 * (qlo + qhi);
}

ProjectedMixture random_pm(unsigned seed, int max_m = 3) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> mdist(1, max_m);
    const int m = mdist(gen);
    VectorXd rho(m), nu(m), sd(m);
    for (int i = 0; i < m; ++i) {
        rho[i] = 0.1 + unif(gen);
        nu[i] = 4.0 * unif(gen) - 2.0;
        sd[i] = 0.5 + 3.0 * unif(gen);
    }
    rho /= rho.sum();
    return ProjectedMixture(rho, nu, sd);
}

// Largest tail level for which the component over-approximation is backed by
// its guarantee: every per-component VaR at level alpha/rho_i must stay
// nonnegative, i.e. alpha <= rho_i * cdf(-nu_i/sd_i) for all i.
double max_guaranteed_alpha(const ProjectedMixture& pm) {
    double a = pm.weights().minCoeff();
    for (int i = 0; i < pm.components(); ++i) {
        a = std::min(a, pm.weights()[i] * mixcvar::normal_cdf(-pm.nu()[i] / pm.sd()[i]));
    }
    return a;
}

}  // namespace

TEST(VarNormal, ClosedFormAgainstBisectionOracle) {
    // Frozen from bisection on the cdf.
    EXPECT_NEAR(var_normal(0.0, 1.0, Probability(0.05)), 1.644854, 1e-6);
    EXPECT_NEAR(var_normal(0.0, 1.0, Probability(0.05)),
                -oracles::bisect_normal_quantile(0.05), 1e-10);
    // Deterministic return.
    EXPECT_DOUBLE_EQ(var_normal(0.7, 0.0, Probability(0.01)), -0.7);
    // Energy single-normal fit at the 1% level.
    EXPECT_NEAR(var_normal(1.1769, 6.2823, Probability(0.01)), 13.438, 1e-3);
    EXPECT_NEAR(var_normal(1.1769, 6.2823, Probability(0.01)),
                -1.1769 - oracles::bisect_normal_quantile(0.01) * 6.2823, 1e-9);
}

TEST(CvarNormal, ClosedFormAgainstQuadratureOracle) {
    EXPECT_NEAR(cvar_normal(0.0, 1.0, Probability(0.01)), 2.665214, 1e-6);
    EXPECT_NEAR(cvar_normal(0.0, 1.0, Probability(0.01)),
                oracles::normal_tail_expectation(0.01), 1e-9);
    EXPECT_DOUBLE_EQ(cvar_normal(-0.4, 0.0, Probability(0.05)), 0.4);
    EXPECT_NEAR(cvar_normal(1.1769, 6.2823, Probability(0.01)), 15.567, 1e-3);
    EXPECT_GE(cvar_normal(1.1769, 6.2823, Probability(0.01)),
              var_normal(1.1769, 6.2823, Probability(0.01)));
}

TEST(MixtureCdf, CollapsesLimitsAndSymmetry) {
    auto same = make_pm({0.3, 0.7}, {0.5, 0.5}, {2.0, 2.0});
    for (double y = -5.0; y <= 5.0; y += 0.5) {
        EXPECT_NEAR(mixture_cdf(same, y), mixcvar::normal_cdf((y - 0.5) / 2.0), 1e-15);
    }
    auto pm = energy_pm();
    const double lo = pm.nu().minCoeff() - 40.0 * pm.sd().maxCoeff();
    const double hi = pm.nu().maxCoeff() + 40.0 * pm.sd().maxCoeff();
    EXPECT_NEAR(mixture_cdf(pm, lo), 0.0, 1e-300);
    EXPECT_NEAR(mixture_cdf(pm, hi), 1.0, 1e-15);

    auto sym = make_pm({0.5, 0.5}, {0.0, 2.0}, {1.0, 1.0});
    EXPECT_NEAR(mixture_cdf(sym, 1.0), 0.5, 1e-15);
}

TEST(MixtureCdf, DegenerateComponentIsAStep) {
    auto pm = make_pm({0.5, 0.5}, {1.0, 0.0}, {0.0, 1.0});
    EXPECT_NEAR(mixture_cdf(pm, 0.999), 0.5 * mixcvar::normal_cdf(0.999), 1e-15);
    EXPECT_NEAR(mixture_cdf(pm, 1.0), 0.5 + 0.5 * mixcvar::normal_cdf(1.0), 1e-15);
}

TEST(VarMixture, IdenticalComponentsCollapseToNormal) {
    auto pm = make_pm({0.4, 0.6}, {1.2, 1.2}, {3.0, 3.0});
    EXPECT_NEAR(var_mixture(pm, Probability(0.01)), var_normal(1.2, 3.0, Probability(0.01)),
                1e-10);
}

TEST(VarMixture, SymmetricMedianIsZero) {
    auto pm = make_pm({0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0});
    EXPECT_NEAR(var_mixture(pm, Probability(0.5)), 0.0, 1e-11);
}

TEST(VarMixture, EnergyAgainstOracleAndBounds) {
    auto pm = energy_pm();
    const Probability alpha(0.01);
    const double v = var_mixture(pm, alpha);
    EXPECT_NEAR(v, oracle_var(pm, 0.01), 1e-9);
    auto [lo, hi] = var_bounds(pm, alpha);
    EXPECT_LE(lo, v + 1e-12);
    EXPECT_LE(v, hi + 1e-12);
}

TEST(VarMixture, AllDegenerateRejected) {
    auto pm = make_pm({0.5, 0.5}, {0.0, 1.0}, {0.0, 0.0});
    EXPECT_THROW(var_mixture(pm, Probability(0.1)), std::invalid_argument);
}

TEST(CvarObjective, FirstOrderConditionAtVar) {
    for (unsigned seed : {1u, 2u, 3u, 4u, 5u, 6u}) {
        auto pm = random_pm(seed);
        const Probability alpha(0.03);
        const double v = var_mixture(pm, alpha);
        // Analytic derivative of the objective: 1 - cdf(-c)/alpha.
        const double deriv = 1.0 - mixture_cdf(pm, -v) / alpha.value();
        EXPECT_NEAR(deriv, 0.0, 1e-8);
    }
}

TEST(CvarObjective, SingleComponentMinimumIsNormalCvar) {
    auto pm = make_pm({1.0}, {0.3}, {1.7});
    const Probability alpha(0.02);
    const double vn = var_normal(0.3, 1.7, alpha);
    const double cmin = oracles::golden_section_min(
        [&](double c) { return cvar_objective(pm, c, alpha); }, vn - 5.0, vn + 5.0, 1e-11);
    EXPECT_NEAR(cvar_objective(pm, cmin, alpha), cvar_normal(0.3, 1.7, alpha), 1e-10);
}

TEST(CvarObjective, SymmetricMixtureMinimizedAtZero) {
    auto pm = make_pm({0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0});
    const Probability alpha(0.5);
    const double cmin = oracles::golden_section_min(
        [&](double c) { return cvar_objective(pm, c, alpha); }, -3.0, 3.0, 1e-11);
    EXPECT_NEAR(cvar_objective(pm, 0.0, alpha), cvar_objective(pm, cmin, alpha), 1e-10);
}

TEST(CvarMixtureExact, CollapsesAndMatchesObjectiveMinimum) {
    auto same = make_pm({0.25, 0.75}, {0.8, 0.8}, {2.5, 2.5});
    const Probability alpha(0.01);
    auto r = cvar_mixture_exact(same, alpha);
    EXPECT_NEAR(r.cvar, cvar_normal(0.8, 2.5, alpha), 1e-10);

    auto single = make_pm({1.0}, {0.0}, {1.0});
    auto s = cvar_mixture_exact(single, alpha);
    EXPECT_NEAR(s.cvar, 2.665214, 1e-6);
    EXPECT_NEAR(s.var, 2.326348, 1e-6);

    // Analytic value equals the minimized objective.
    for (unsigned seed : {11u, 12u, 13u}) {
        auto pm = random_pm(seed);
        auto e = cvar_mixture_exact(pm, alpha);
        EXPECT_NEAR(e.cvar, cvar_objective(pm, e.var, alpha), 1e-9);
        const double cmin = oracles::golden_section_min(
            [&](double c) { return cvar_objective(pm, c, alpha); }, e.var - 2.0, e.var + 2.0,
            1e-11);
        EXPECT_LE(e.cvar, cvar_objective(pm, cmin, alpha) + 1e-9);
    }
}

TEST(CvarMixtureExact, EnergyMatchesMonteCarloTailMean) {
    auto pm = energy_pm();
    const double exact = cvar_mixture_exact(pm, Probability(0.01)).cvar;
    auto draws = oracles::sample_scalar_mixture({0.19, 0.81}, {-0.0686, 1.4687},
                                                {8.5162, 5.5799}, 10'000'000, 31415);
    const double mc = oracles::empirical_cvar(std::move(draws), 0.01);
    EXPECT_NEAR(exact, mc, 0.01 * std::abs(mc));
}

TEST(VarBounds, ThetaDefaultsAndSingleComponent) {
    auto pm = energy_pm();
    const Probability alpha(0.01);
    VectorXd theta = pm.weights();
    auto [lo_default, hi_default] = var_bounds(pm, alpha);
    auto [lo_theta, hi_theta] = var_bounds(pm, alpha, theta);
    EXPECT_DOUBLE_EQ(hi_default, hi_theta);
    // theta = rho reduces the upper bound to max_i VaR_alpha(component i).
    const double expected_hi = std::max(var_normal(-0.0686, 8.5162, alpha),
                                        var_normal(1.4687, 5.5799, alpha));
    EXPECT_DOUBLE_EQ(hi_default, expected_hi);

    auto single = make_pm({1.0}, {0.5}, {2.0});
    VectorXd one(1);
    one << 1.0;
    auto [lo, hi] = var_bounds(single, alpha, one);
    EXPECT_NEAR(lo, var_normal(0.5, 2.0, alpha), 1e-12);
    EXPECT_NEAR(hi, var_normal(0.5, 2.0, alpha), 1e-12);
}

TEST(VarBounds, RejectsBadTheta) {
    auto pm = energy_pm();
    VectorXd neg(2), offsum(2), infeasible(2);
    neg << -0.1, 1.1;
    offsum << 0.6, 0.6;
    EXPECT_THROW(var_bounds(pm, Probability(0.01), neg), std::invalid_argument);
    EXPECT_THROW(var_bounds(pm, Probability(0.01), offsum), std::invalid_argument);
    // alpha*theta_i > rho_i: alpha=0.5, theta=(0.9,0.1), rho_1=0.19 < 0.45.
    infeasible << 0.9, 0.1;
    EXPECT_THROW(var_bounds(pm, Probability(0.5), infeasible), std::invalid_argument);
}

TEST(CvarBoundsOp, SingleAndIdenticalComponents) {
    auto single = make_pm({1.0}, {0.1}, {1.3});
    const Probability alpha(0.05);
    auto b1 = cvar_bounds(single, alpha);
    EXPECT_NEAR(b1.lower, cvar_normal(0.1, 1.3, alpha), 1e-12);
    EXPECT_NEAR(b1.upper, cvar_normal(0.1, 1.3, alpha), 1e-12);
    ASSERT_TRUE(b1.kappa.has_value());
    EXPECT_NEAR(*b1.kappa, 1.0, 1e-12);

    auto twin = make_pm({0.5, 0.5}, {0.0, 0.0}, {1.0, 1.0});
    auto b2 = cvar_bounds(twin, Probability(0.01));
    const double c2a = cvar_normal(0.0, 1.0, Probability(0.02));
    EXPECT_NEAR(b2.upper, 2.0 * c2a, 1e-12);
    EXPECT_NEAR(b2.lower, c2a, 1e-12);
    ASSERT_TRUE(b2.kappa.has_value());
    EXPECT_NEAR(*b2.kappa, 2.0, 1e-12);
}

TEST(CvarBoundsOp, EnergySandwichAndGuaranteeFactor) {
    auto pm = energy_pm();
    const Probability alpha(0.01);
    const double exact = cvar_mixture_exact(pm, alpha).cvar;
    auto b = cvar_bounds(pm, alpha);
    EXPECT_LE(b.lower, exact + 1e-9);
    EXPECT_LE(exact, b.upper + 1e-9);
    ASSERT_TRUE(b.kappa.has_value());
    // Both regimes contribute comparable tails for a single asset, so the
    // additive bound roughly double-counts; the factor stays within the
    // two-component guarantee. Value frozen from the exact evaluator.
    EXPECT_NEAR(*b.kappa, 1.74, 0.02);
    EXPECT_GE(*b.kappa, 1.0);
    EXPECT_LE(*b.kappa, 2.0);
    EXPECT_LE(b.upper, *b.kappa * exact + 1e-9);
}

TEST(CvarBoundsOp, RejectsLargeAlpha) {
    auto pm = energy_pm();  // min rho = 0.19
    EXPECT_THROW(cvar_bounds(pm, Probability(0.19)), std::invalid_argument);
    EXPECT_THROW(cvar_bounds(pm, Probability(0.5)), std::invalid_argument);
}

TEST(ApproxError, FrozenArithmetic) {
    EXPECT_DOUBLE_EQ(approx_error(5.0, 5.0), 0.0);
    EXPECT_NEAR(approx_error(10.0, 10.24), 2.40, 1e-12);
    EXPECT_NEAR(approx_error(10.0, 10.045), 0.45, 1e-12);
    EXPECT_THROW(approx_error(0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(approx_error(-2.0, 1.0), std::invalid_argument);
}

TEST(RiskInvariants, TranslationAndScaleEquivariance) {
    const Probability alpha(0.02);
    for (unsigned seed = 0; seed < 30; ++seed) {
        auto pm = random_pm(seed);
        auto base = cvar_mixture_exact(pm, alpha);

        const double t = 0.37;
        ProjectedMixture shifted(pm.weights(), pm.nu().array() + t, pm.sd());
        auto sh = cvar_mixture_exact(shifted, alpha);
        EXPECT_NEAR(sh.var, base.var - t, 1e-9);
        EXPECT_NEAR(sh.cvar, base.cvar - t, 1e-9);

        const double s = 2.5;
        ProjectedMixture scaled(pm.weights(), s * pm.nu(), s * pm.sd());
        auto sc = cvar_mixture_exact(scaled, alpha);
        EXPECT_NEAR(sc.var, s * base.var, 1e-9);
        EXPECT_NEAR(sc.cvar, s * base.cvar, 1e-9);

        EXPECT_GE(base.cvar, base.var - 1e-12);
    }
}

TEST(RiskInvariants, SandwichFuzz) {
    int checked = 0;
    for (unsigned seed = 100; seed < 400; ++seed) {
        auto pm = random_pm(seed);
        // Stay inside the guarantee region of the component bounds.
        const Probability alpha(0.5 * max_guaranteed_alpha(pm));
        auto e = cvar_mixture_exact(pm, alpha);
        auto [vlo, vhi] = var_bounds(pm, alpha);
        EXPECT_LE(vlo, e.var + 1e-9);
        EXPECT_LE(e.var, vhi + 1e-9);
        auto cb = cvar_bounds(pm, alpha);
        EXPECT_LE(cb.lower, e.cvar + 1e-9);
        EXPECT_LE(e.cvar, cb.upper + 1e-9);
        if (cb.kappa) {
            EXPECT_LE(*cb.kappa, pm.components() + 1e-12);
            EXPECT_GE(*cb.kappa, 1.0 - 1e-12);
            EXPECT_LE(cb.upper, *cb.kappa * e.cvar + 1e-9);
        }
        ++checked;
    }
    EXPECT_EQ(checked, 300);
}

TEST(RiskProfile, AssemblesBoundsAndFlagsUndefinedUpper) {
    auto pm = energy_pm();
    auto r = risk_profile(pm, Probability(0.01));
    EXPECT_LE(r.var_lower, r.var);
    EXPECT_LE(r.var, r.var_upper);
    EXPECT_LE(r.cvar_lower, r.cvar);
    ASSERT_TRUE(r.cvar_upper.has_value());
    EXPECT_LE(r.cvar, *r.cvar_upper + 1e-9);
    ASSERT_TRUE(r.kappa.has_value());

    auto wide = risk_profile(pm, Probability(0.5));
    EXPECT_FALSE(wide.cvar_upper.has_value());
    EXPECT_FALSE(wide.kappa.has_value());
    EXPECT_LE(wide.var_lower, wide.var);
}
