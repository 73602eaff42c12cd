#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mixcvar/core.hpp"
#include "mixcvar/rng.hpp"

namespace mixcvar {

struct EmConfig {
    int components = 2;
    int max_iters = 500;
    /// Relative log-likelihood change below which the fit stops.
    double ll_tolerance = 1e-8;
    int restarts = 4;
    /// Relative covariance regularizer: ridge * trace/n is added to every
    /// M-step covariance diagonal. Short windows need this to stay invertible.
    double ridge = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (components < 1) throw std::invalid_argument("EmConfig: components >= 1");
        if (max_iters < 1) throw std::invalid_argument("EmConfig: max_iters >= 1");
        if (!(ll_tolerance > 0.0)) throw std::invalid_argument("EmConfig: ll_tolerance > 0");
        if (restarts < 1) throw std::invalid_argument("EmConfig: restarts >= 1");
        if (ridge < 0.0) throw std::invalid_argument("EmConfig: ridge >= 0");
    }
};

/// Mean vector and covariance matrix of the rows, covariance normalized by
/// 1/T (the maximum-likelihood convention, matching the EM M-step). An
/// optional relative ridge is added to the covariance diagonal.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> sample_moments(
    const Eigen::Ref<const Eigen::MatrixXd>& returns, double ridge = 0.0) {
    const Eigen::Index t = returns.rows();
    const Eigen::Index n = returns.cols();
    if (t < 2) throw std::invalid_argument("sample_moments: need at least two rows");
    Eigen::VectorXd mu = returns.colwise().mean();
    Eigen::MatrixXd centered = returns.rowwise() - mu.transpose();
    Eigen::MatrixXd sigma = centered.transpose() * centered / static_cast<double>(t);
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    if (ridge > 0.0) {
        const double tr = sigma.trace();
        const double bump = ridge * (tr > 0.0 ? tr / static_cast<double>(n) : 1.0);
        sigma.diagonal().array() += bump;
    }
    return {std::move(mu), std::move(sigma)};
}

namespace detail {

struct ComponentDensity {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double log_norm;  // -0.5 * (n log 2pi + logdet)
};

inline std::optional<ComponentDensity> factor_component(const Eigen::MatrixXd& sigma) {
    ComponentDensity cd{Eigen::LLT<Eigen::MatrixXd>(sigma), 0.0};
    if (cd.llt.info() != Eigen::Success) return std::nullopt;
    double logdet = 0.0;
    const auto& l = cd.llt.matrixLLT();
    for (Eigen::Index k = 0; k < sigma.rows(); ++k) {
        const double d = l(k, k);
        if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
        logdet += 2.0 * std::log(d);
    }
    cd.log_norm = -0.5 * (static_cast<double>(sigma.rows()) * std::log(2.0 * M_PI) + logdet);
    return cd;
}

/// Row-wise log density of N(mu, sigma) for every row of `x`, batched through
/// one triangular solve.
inline Eigen::VectorXd log_density_rows(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                        const Eigen::VectorXd& mu, const ComponentDensity& cd) {
    Eigen::MatrixXd centered = (x.rowwise() - mu.transpose()).transpose();  // n x T
    cd.llt.matrixL().solveInPlace(centered);
    return (centered.colwise().squaredNorm().transpose() * -0.5).array() + cd.log_norm;
}

}  // namespace detail

/// Sum over rows of log sum_i rho_i N(row; mu^i, sigma^i), computed in log
/// space. Throws on a covariance that cannot be factored.
inline double log_likelihood(const MixtureModel& model,
                             const Eigen::Ref<const Eigen::MatrixXd>& returns) {
    if (returns.cols() != model.assets()) {
        throw std::invalid_argument("log_likelihood: dimension mismatch");
    }
    const int m = model.components();
    const Eigen::Index t = returns.rows();
    Eigen::MatrixXd logp(t, m);
    for (int i = 0; i < m; ++i) {
        auto cd = detail::factor_component(model.covariance(i));
        if (!cd) throw std::runtime_error("log_likelihood: singular component covariance");
        logp.col(i) = detail::log_density_rows(returns, model.mean(i), *cd).array() +
                      std::log(model.weights()[i]);
    }
    double ll = 0.0;
    for (Eigen::Index r = 0; r < t; ++r) {
        const double mx = logp.row(r).maxCoeff();
        ll += mx + std::log((logp.row(r).array() - mx).exp().sum());
    }
    return ll;
}

struct FitReport {
    MixtureModel model;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
    int restart_index = 0;
    /// Log-likelihood after each iteration; nondecreasing up to the ridge's
    /// sub-1e-8 perturbation.
    std::vector<double> ll_history;
};

namespace detail {

struct EmState {
    Eigen::VectorXd rho;
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> sigma;
};

inline Eigen::MatrixXd init_responsibilities_random(Eigen::Index t, int m, RngStream& rng) {
    Eigen::MatrixXd gamma(t, m);
    for (Eigen::Index r = 0; r < t; ++r) {
        double sum = 0.0;
        for (int i = 0; i < m; ++i) {
            gamma(r, i) = rng.uniform01();
            sum += gamma(r, i);
        }
        gamma.row(r) /= sum;
    }
    return gamma;
}

/// Distance-weighted center seeding with soft distance-based assignment.
/// Softness is scaled by the data's own dispersion so overlapping windows
/// start from balanced responsibilities instead of starving a component.
inline Eigen::MatrixXd init_responsibilities_kmeanspp(
    const Eigen::Ref<const Eigen::MatrixXd>& x, int m, RngStream& rng) {
    const Eigen::Index t = x.rows();
    std::vector<Eigen::Index> centers;
    centers.push_back(static_cast<Eigen::Index>(rng.uniform01() * t));
    Eigen::VectorXd dist2 =
        (x.rowwise() - x.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < m) {
        const double total = dist2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double target = rng.uniform01() * total;
            for (; pick < t - 1; ++pick) {
                target -= dist2[pick];
                if (target <= 0.0) break;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.uniform01() * t);
        }
        centers.push_back(pick);
        dist2 = dist2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
    }

    Eigen::MatrixXd d2(t, m);
    for (int i = 0; i < m; ++i) {
        d2.col(i) = (x.rowwise() - x.row(centers[i])).rowwise().squaredNorm();
    }
    const double scale = std::max(d2.rowwise().minCoeff().mean(), 1e-12);
    Eigen::MatrixXd gamma(t, m);
    for (Eigen::Index r = 0; r < t; ++r) {
        const double lo = d2.row(r).minCoeff();
        Eigen::ArrayXd w = (-(d2.row(r).array() - lo) / (2.0 * scale)).exp();
        gamma.row(r) = (w / w.sum()).matrix().transpose();
    }
    return gamma;
}

/// One M-step; returns false when a component collapses below the
/// identifiability floor of n+1 effective points.
inline bool m_step(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::MatrixXd& gamma,
                   double ridge, EmState& st) {
    const Eigen::Index t = x.rows();
    const Eigen::Index n = x.cols();
    const int m = static_cast<int>(gamma.cols());
    st.rho.resize(m);
    st.mu.resize(m);
    st.sigma.resize(m);
    for (int i = 0; i < m; ++i) {
        const double count = gamma.col(i).sum();
        if (!(count >= static_cast<double>(n + 1))) return false;
        st.rho[i] = count / static_cast<double>(t);
        st.mu[i] = x.transpose() * gamma.col(i) / count;
        Eigen::MatrixXd centered = x.rowwise() - st.mu[i].transpose();
        Eigen::MatrixXd weighted = centered.array().colwise() * gamma.col(i).array();
        Eigen::MatrixXd sigma = centered.transpose() * weighted / count;
        sigma = 0.5 * (sigma + sigma.transpose()).eval();
        const double tr = sigma.trace();
        sigma.diagonal().array() += ridge * (tr > 0.0 ? tr / static_cast<double>(n) : 1.0);
        st.sigma[i] = std::move(sigma);
    }
    st.rho /= st.rho.sum();
    return true;
}

/// One E-step; fills responsibilities and returns the log-likelihood, or
/// nullopt when a covariance cannot be factored.
inline std::optional<double> e_step(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const EmState& st, Eigen::MatrixXd& gamma) {
    const Eigen::Index t = x.rows();
    const int m = static_cast<int>(st.rho.size());
    Eigen::MatrixXd logp(t, m);
    for (int i = 0; i < m; ++i) {
        auto cd = factor_component(st.sigma[i]);
        if (!cd) return std::nullopt;
        logp.col(i) = log_density_rows(x, st.mu[i], *cd).array() + std::log(st.rho[i]);
    }
    double ll = 0.0;
    gamma.resize(t, m);
    for (Eigen::Index r = 0; r < t; ++r) {
        const double mx = logp.row(r).maxCoeff();
        Eigen::ArrayXd w = (logp.row(r).array() - mx).exp();
        const double sum = w.sum();
        gamma.row(r) = (w / sum).matrix().transpose();
        ll += mx + std::log(sum);
    }
    return ll;
}

}  // namespace detail

/// Maximum-likelihood fit of an m-component Gaussian mixture by EM with
/// multiple restarts. The first half of the restarts seed from
/// distance-weighted centers, the rest from random responsibilities; each
/// restart draws its own stream from (seed, restart_index). Components of the
/// returned model are sorted by their equal-weight mean, ascending, so the
/// lowest-mean ("stressed") regime always comes first.
inline FitReport fit_mixture_em(const Eigen::Ref<const Eigen::MatrixXd>& returns,
                                const EmConfig& cfg) {
    cfg.validate();
    const Eigen::Index t = returns.rows();
    const Eigen::Index n = returns.cols();
    const int m = cfg.components;
    if (t < static_cast<Eigen::Index>(m) * (n + 1)) {
        throw std::invalid_argument("fit_mixture_em: need at least m*(n+1) rows, have " +
                                    std::to_string(t));
    }

    std::optional<FitReport> best;
    for (int r = 0; r < cfg.restarts; ++r) {
        RngStream rng(cfg.seed, static_cast<std::uint64_t>(r));
        Eigen::MatrixXd gamma = (r <= cfg.restarts / 2)
                                    ? detail::init_responsibilities_kmeanspp(returns, m, rng)
                                    : detail::init_responsibilities_random(t, m, rng);
        detail::EmState st;
        std::vector<double> history;
        bool degenerate = false;
        bool converged = false;
        double ll = -std::numeric_limits<double>::infinity();
        int iters = 0;
        for (int it = 0; it < cfg.max_iters; ++it) {
            if (!detail::m_step(returns, gamma, cfg.ridge, st)) {
                degenerate = true;
                break;
            }
            const auto next_ll = detail::e_step(returns, st, gamma);
            if (!next_ll) {
                degenerate = true;
                break;
            }
            history.push_back(*next_ll);
            iters = it + 1;
            if (it > 0 && std::abs(*next_ll - ll) <= cfg.ll_tolerance * (1.0 + std::abs(*next_ll))) {
                ll = *next_ll;
                converged = true;
                break;
            }
            ll = *next_ll;
        }
        if (degenerate || history.empty()) continue;

        if (!best || ll > best->log_likelihood) {
            // Sort components by equal-weight mean, ascending.
            std::vector<int> order(m);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                return st.mu[a].mean() < st.mu[b].mean();
            });
            Eigen::VectorXd rho(m);
            std::vector<Eigen::VectorXd> mu(m);
            std::vector<Eigen::MatrixXd> sigma(m);
            for (int i = 0; i < m; ++i) {
                rho[i] = st.rho[order[i]];
                mu[i] = st.mu[order[i]];
                sigma[i] = st.sigma[order[i]];
            }
            rho /= rho.sum();
            best = FitReport{MixtureModel(rho, std::move(mu), std::move(sigma)), ll, iters,
                             converged, r, std::move(history)};
        }
    }
    if (!best) {
        throw std::runtime_error("fit_mixture_em: every restart collapsed a component");
    }
    return std::move(*best);
}

}  // namespace mixcvar
