#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixcvar/core.hpp"
#include "mixcvar/distn.hpp"

namespace mixcvar {

struct BLConfig {
    /// Market-equilibrium confidence; smaller values weight the equilibrium
    /// equation more heavily.
    double tau = 1.0;
    /// Risk aversion of the mean-variance equilibrium; used only by the
    /// classical implied-return computation, not by the CVaR pipelines.
    double delta = 1.0;
    double alpha = 0.01;

    void validate() const {
        if (!(tau > 0.0) || !(delta > 0.0) || !(alpha > 0.0 && alpha < 1.0)) {
            throw std::invalid_argument("BLConfig: tau > 0, delta > 0, alpha in (0,1)");
        }
    }
};

/// Investor views P mu = q with independent confidences: Omega is diagonal
/// with positive entries, stored as its diagonal. k = 0 (no views) is valid.
struct ViewSet {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::VectorXd omega;

    int count() const { return static_cast<int>(q.size()); }

    void validate(Eigen::Index n) const {
        if (P.rows() != q.size() || P.rows() != omega.size() ||
            (P.rows() > 0 && P.cols() != n)) {
            throw std::invalid_argument("ViewSet: inconsistent dimensions");
        }
        for (Eigen::Index i = 0; i < omega.size(); ++i) {
            if (!(omega[i] > 0.0)) throw std::invalid_argument("ViewSet: omega must be > 0");
        }
    }
};

/// Implied equilibrium returns of a mean-variance market: 2 delta Sigma x^m.
inline Eigen::VectorXd implied_returns(const Eigen::MatrixXd& sigma_hat,
                                       const Eigen::VectorXd& x_m, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("implied_returns: delta > 0");
    if (sigma_hat.rows() != sigma_hat.cols() || sigma_hat.cols() != x_m.size()) {
        throw std::invalid_argument("implied_returns: dimension mismatch");
    }
    return 2.0 * delta * sigma_hat * x_m;
}

namespace detail {

/// Whitened design W = Omega^{-1} A and the normal matrix A^T Omega^{-1} A.
struct GlsParts {
    Eigen::MatrixXd normal;  // A^T Omega^{-1} A
    Eigen::VectorXd rhs;     // A^T Omega^{-1} b
};

inline GlsParts gls_parts(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                          const Eigen::MatrixXd& omega) {
    if (a.rows() != b.size() || a.rows() != omega.rows() || omega.rows() != omega.cols()) {
        throw std::invalid_argument("gls_solve: dimension mismatch");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("gls_solve: Omega is not positive definite");
    }
    GlsParts parts;
    const Eigen::MatrixXd y = llt.solve(a);
    parts.normal = a.transpose() * y;
    parts.normal = 0.5 * (parts.normal + parts.normal.transpose()).eval();
    parts.rhs = a.transpose() * llt.solve(b);
    return parts;
}

/// Minimum-norm solution of the (possibly rank-deficient) weighted least
/// squares problem, used where the stacked system is underdetermined.
inline Eigen::VectorXd gls_minnorm(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                   const Eigen::MatrixXd& omega) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
        throw std::invalid_argument("gls_solve: Omega is not positive definite");
    }
    const Eigen::MatrixXd white =
        es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
        es.eigenvectors().transpose();
    return (white * a).completeOrthogonalDecomposition().solve(white * b);
}

}  // namespace detail

/// Generalized least squares: the minimizer (A' Omega^{-1} A)^{-1} A'
/// Omega^{-1} b of the Omega-weighted residual norm, computed through a
/// symmetric factorization of the normal matrix. Throws on rank-deficient A
/// or non-PD Omega.
inline Eigen::VectorXd gls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                 const Eigen::MatrixXd& omega) {
    auto parts = detail::gls_parts(a, b, omega);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(parts.normal);
    if (ldlt.info() != Eigen::Success) {
        throw std::invalid_argument("gls_solve: A is rank deficient");
    }
    // The normal system is consistent even for singular N, so rank loss is
    // detected from the pivot spread instead of a residual.
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    if (!(d.minCoeff() > 1e-13 * d.maxCoeff()) || !d.allFinite()) {
        throw std::invalid_argument("gls_solve: A is rank deficient");
    }
    const Eigen::VectorXd x = ldlt.solve(parts.rhs);
    if (!x.allFinite()) throw std::invalid_argument("gls_solve: solve failed");
    return x;
}

/// Theil mixed-estimation stack of the classical model: prior rows I mu =
/// Pi with covariance tau Sigma, view rows P mu = q with covariance Omega.
struct TheilStack {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    Eigen::MatrixXd omega;
};

inline TheilStack theil_stack(const Eigen::VectorXd& pi, double tau,
                              const Eigen::MatrixXd& sigma_hat, const ViewSet& views) {
    const Eigen::Index n = pi.size();
    views.validate(n);
    const Eigen::Index k = views.q.size();
    TheilStack st;
    st.a.setZero(n + k, n);
    st.a.topRows(n).setIdentity();
    st.a.bottomRows(k) = views.P;
    st.b.resize(n + k);
    st.b.head(n) = pi;
    st.b.tail(k) = views.q;
    st.omega.setZero(n + k, n + k);
    st.omega.topLeftCorner(n, n) = tau * sigma_hat;
    st.omega.bottomRightCorner(k, k) = views.omega.asDiagonal();
    return st;
}

/// Classical posterior mean
///   ((tau Sigma)^{-1} + P' Omega^{-1} P)^{-1} ((tau Sigma)^{-1} Pi + P' Omega^{-1} q),
/// equal to the GLS solution of the Theil stack.
inline Eigen::VectorXd classical_bl(const Eigen::VectorXd& pi, double tau,
                                    const Eigen::MatrixXd& sigma_hat, const ViewSet& views) {
    if (!(tau > 0.0)) throw std::invalid_argument("classical_bl: tau > 0");
    const Eigen::Index n = pi.size();
    views.validate(n);
    Eigen::LLT<Eigen::MatrixXd> llt(tau * sigma_hat);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("classical_bl: sigma_hat is not positive definite");
    }
    const Eigen::MatrixXd prior_precision = llt.solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::MatrixXd precision = prior_precision;
    Eigen::VectorXd rhs = prior_precision * pi;
    if (views.count() > 0) {
        const Eigen::MatrixXd pw = views.omega.cwiseInverse().asDiagonal() * views.P;
        precision += views.P.transpose() * pw;
        rhs += pw.transpose() * views.q;
    }
    precision = 0.5 * (precision + precision.transpose()).eval();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(precision);
    if (ldlt.info() != Eigen::Success) {
        throw std::invalid_argument("classical_bl: singular posterior precision");
    }
    return ldlt.solve(rhs);
}

/// Market equilibrium target of the normal CVaR program:
///   z_factor(alpha) * Sigma x^m / sqrt(x^m' Sigma x^m).
/// Requires strictly positive market weights (which pins the inequality
/// multipliers of the inverse problem at zero) and positive market variance.
inline Eigen::VectorXd equilibrium_target_normal(const Eigen::MatrixXd& sigma_hat,
                                                 const Portfolio& x_m, Probability alpha) {
    const Eigen::VectorXd& w = x_m.weights();
    if (sigma_hat.rows() != w.size() || sigma_hat.cols() != w.size()) {
        throw std::invalid_argument("equilibrium_target_normal: dimension mismatch");
    }
    if (w.minCoeff() <= 0.0) {
        throw std::invalid_argument(
            "equilibrium_target_normal: market weights must be strictly positive");
    }
    const double market_var = w.dot(sigma_hat * w);
    if (!(market_var > 0.0)) {
        throw std::invalid_argument("equilibrium_target_normal: zero market variance");
    }
    return z_factor(alpha) / std::sqrt(market_var) * (sigma_hat * w);
}

struct AdjustedNormal {
    Eigen::VectorXd mu;
    double lambda = 0.0;
};

/// Blend the equilibrium target with the sample-mean view by GLS on the
/// stacked system [I e; I 0] (mu, lambda) = (mu_tilde; mu_hat) with error
/// covariance diag(tau Sigma, Sigma). Small tau recovers the equilibrium,
/// large tau the sample mean.
inline AdjustedNormal adjusted_mu_normal(const Eigen::VectorXd& mu_tilde,
                                         const Eigen::VectorXd& mu_hat,
                                         const Eigen::MatrixXd& sigma_hat, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("adjusted_mu_normal: tau > 0");
    const Eigen::Index n = mu_tilde.size();
    if (mu_hat.size() != n || sigma_hat.rows() != n || sigma_hat.cols() != n) {
        throw std::invalid_argument("adjusted_mu_normal: dimension mismatch");
    }
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, n + 1);
    a.topLeftCorner(n, n).setIdentity();
    a.block(0, n, n, 1).setOnes();
    a.bottomLeftCorner(n, n).setIdentity();
    Eigen::VectorXd b(2 * n);
    b.head(n) = mu_tilde;
    b.tail(n) = mu_hat;
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    omega.topLeftCorner(n, n) = tau * sigma_hat;
    omega.bottomRightCorner(n, n) = sigma_hat;
    const Eigen::VectorXd sol = gls_solve(a, b, omega);
    return {sol.head(n), sol[n]};
}

/// General-view variant: stacked system [I e; P 0] (mu, lambda) =
/// (mu_tilde; q) with error covariance diag(tau Sigma, Omega). With no views
/// the system is underdetermined and resolved by the minimum-norm solution.
inline AdjustedNormal adjusted_mu_normal_views(const Eigen::VectorXd& mu_tilde,
                                               const ViewSet& views,
                                               const Eigen::MatrixXd& sigma_hat, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("adjusted_mu_normal_views: tau > 0");
    const Eigen::Index n = mu_tilde.size();
    views.validate(n);
    const Eigen::Index k = views.q.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + k, n + 1);
    a.topLeftCorner(n, n).setIdentity();
    a.block(0, n, n, 1).setOnes();
    if (k > 0) a.bottomLeftCorner(k, n) = views.P;
    Eigen::VectorXd b(n + k);
    b.head(n) = mu_tilde;
    b.tail(k) = views.q;
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(n + k, n + k);
    omega.topLeftCorner(n, n) = tau * sigma_hat;
    if (k > 0) omega.bottomRightCorner(k, k) = views.omega.asDiagonal();
    const Eigen::VectorXd sol =
        (k == 0) ? detail::gls_minnorm(a, b, omega) : gls_solve(a, b, omega);
    return {sol.head(n), sol[n]};
}

/// Market equilibrium target of the approximate mixture CVaR program:
///   sum_i z_factor(alpha/rho_i) Sigma^i x^m / sqrt(x^m' Sigma^i x^m).
/// Requires alpha < min_i rho_i, strictly positive market weights, and
/// positive per-component market variance.
inline Eigen::VectorXd equilibrium_target_mixture(const MixtureModel& mix_hat,
                                                  const Portfolio& x_m, Probability alpha) {
    const Eigen::VectorXd& w = x_m.weights();
    if (x_m.size() != mix_hat.assets()) {
        throw std::invalid_argument("equilibrium_target_mixture: dimension mismatch");
    }
    if (alpha.value() >= mix_hat.weights().minCoeff()) {
        throw std::invalid_argument(
            "equilibrium_target_mixture: requires alpha < min_i rho_i");
    }
    if (w.minCoeff() <= 0.0) {
        throw std::invalid_argument(
            "equilibrium_target_mixture: market weights must be strictly positive");
    }
    Eigen::VectorXd target = Eigen::VectorXd::Zero(w.size());
    for (int i = 0; i < mix_hat.components(); ++i) {
        const Eigen::VectorXd sw = mix_hat.covariance(i) * w;
        const double market_var = w.dot(sw);
        if (!(market_var > 0.0)) {
            throw std::invalid_argument(
                "equilibrium_target_mixture: degenerate component market variance");
        }
        const double z = z_factor(Probability(alpha.value() / mix_hat.weights()[i]));
        target += z / std::sqrt(market_var) * sw;
    }
    return target;
}

struct AdjustedMixture {
    std::vector<Eigen::VectorXd> mu;
    double lambda = 0.0;
};

/// Mixture analogue of the mean adjustment: GLS on
///   [I ... I e; blkdiag(I) 0] (mu^1..mu^m, lambda) = (mu_tilde; mu_hat^1..mu_hat^m)
/// with error covariance diag(tau Sigma_pooled, Sigma^1..Sigma^m). Sigma
/// pooled is the sample covariance of the pooled data. Large tau recovers
/// the per-component sample means; small tau binds the equilibrium row
/// (without necessarily recovering the market portfolio).
inline AdjustedMixture adjusted_mu_mixture(const Eigen::VectorXd& mu_tilde,
                                           const std::vector<Eigen::VectorXd>& mu_hat,
                                           const Eigen::MatrixXd& sigma_pooled,
                                           const std::vector<Eigen::MatrixXd>& sigma_hat,
                                           double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("adjusted_mu_mixture: tau > 0");
    const int m = static_cast<int>(mu_hat.size());
    if (m < 1 || sigma_hat.size() != mu_hat.size()) {
        throw std::invalid_argument("adjusted_mu_mixture: need matching mu/sigma lists");
    }
    const Eigen::Index n = mu_tilde.size();
    for (int i = 0; i < m; ++i) {
        if (mu_hat[i].size() != n || sigma_hat[i].rows() != n || sigma_hat[i].cols() != n) {
            throw std::invalid_argument("adjusted_mu_mixture: dimension mismatch");
        }
    }
    const Eigen::Index rows = n * (m + 1);
    const Eigen::Index cols = n * m + 1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, cols);
    for (int i = 0; i < m; ++i) {
        a.block(0, i * n, n, n).setIdentity();
        a.block((i + 1) * n, i * n, n, n).setIdentity();
    }
    a.block(0, n * m, n, 1).setOnes();
    Eigen::VectorXd b(rows);
    b.head(n) = mu_tilde;
    for (int i = 0; i < m; ++i) b.segment((i + 1) * n, n) = mu_hat[i];
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(rows, rows);
    omega.topLeftCorner(n, n) = tau * sigma_pooled;
    for (int i = 0; i < m; ++i) {
        omega.block((i + 1) * n, (i + 1) * n, n, n) = sigma_hat[i];
    }
    const Eigen::VectorXd sol = gls_solve(a, b, omega);
    AdjustedMixture out;
    out.mu.reserve(m);
    for (int i = 0; i < m; ++i) out.mu.push_back(sol.segment(i * n, n));
    out.lambda = sol[n * m];
    return out;
}

}  // namespace mixcvar
