#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mixcvar/rng.hpp"

namespace mixcvar {

// Returns are handled in percent per period throughout (means in percent,
// covariances in percent squared); the convention is global and matches the
// shipped sample data.

/// Finite mixture of multivariate normals: with probability rho_i the return
/// vector is drawn from N(mu^i, sigma^i).
///
/// Values are immutable after construction and safe to share across threads.
/// Covariances are symmetrized on input; a matrix whose smallest eigenvalue
/// falls below -1e-10 * ||Sigma|| is repaired by clipping its spectrum at
/// 1e-10 * trace/n, and the repair is recorded per component so callers can
/// surface it.
class MixtureModel {
  public:
    MixtureModel(Eigen::VectorXd rho, std::vector<Eigen::VectorXd> mu,
                 std::vector<Eigen::MatrixXd> sigma)
        : rho_(std::move(rho)), mu_(std::move(mu)), sigma_(std::move(sigma)) {
        validate_and_prepare();
    }

    /// Single-component convenience: a plain multivariate normal.
    static MixtureModel normal(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
        Eigen::VectorXd rho(1);
        rho << 1.0;
        return MixtureModel(std::move(rho), {std::move(mu)}, {std::move(sigma)});
    }

    int components() const { return static_cast<int>(rho_.size()); }
    int assets() const { return static_cast<int>(mu_.front().size()); }

    const Eigen::VectorXd& weights() const { return rho_; }
    const Eigen::VectorXd& mean(int i) const { return mu_.at(i); }
    const Eigen::MatrixXd& covariance(int i) const { return sigma_.at(i); }

    /// Factor F_i with sigma^i = F_i F_i^T, valid for semidefinite matrices.
    const Eigen::MatrixXd& sampling_factor(int i) const { return factor_.at(i); }

    /// Whether component i's covariance needed eigenvalue clipping.
    bool repaired(int i) const { return repaired_.at(i); }
    int repaired_count() const {
        int c = 0;
        for (bool r : repaired_) c += r ? 1 : 0;
        return c;
    }

  private:
    void validate_and_prepare() {
        const int m = static_cast<int>(rho_.size());
        if (m < 1) throw std::invalid_argument("MixtureModel: need at least one component");
        if (static_cast<int>(mu_.size()) != m || static_cast<int>(sigma_.size()) != m) {
            throw std::invalid_argument("MixtureModel: rho/mu/sigma length mismatch");
        }
        double sum = 0.0;
        for (int i = 0; i < m; ++i) {
            if (!(rho_[i] > 0.0)) {
                throw std::invalid_argument("MixtureModel: mixing weights must be positive");
            }
            sum += rho_[i];
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("MixtureModel: mixing weights must sum to 1, got " +
                                        std::to_string(sum));
        }
        const Eigen::Index n = mu_.front().size();
        if (n < 1) throw std::invalid_argument("MixtureModel: empty mean vector");

        factor_.resize(m);
        repaired_.assign(m, false);
        for (int i = 0; i < m; ++i) {
            if (mu_[i].size() != n || sigma_[i].rows() != n || sigma_[i].cols() != n) {
                throw std::invalid_argument("MixtureModel: component " + std::to_string(i) +
                                            " has inconsistent dimensions");
            }
            Eigen::MatrixXd& s = sigma_[i];
            const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
            const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
            if (asym > 1e-12 * scale) {
                throw std::invalid_argument("MixtureModel: covariance " + std::to_string(i) +
                                            " is not symmetric");
            }
            s = 0.5 * (s + s.transpose()).eval();

            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
            if (es.info() != Eigen::Success) {
                throw std::runtime_error("MixtureModel: eigendecomposition failed");
            }
            Eigen::VectorXd evals = es.eigenvalues();
            const double norm = std::max(std::abs(evals.minCoeff()), std::abs(evals.maxCoeff()));
            const double floor = 1e-10 * s.trace() / static_cast<double>(n);
            if (evals.minCoeff() < -1e-10 * norm) {
                for (Eigen::Index k = 0; k < evals.size(); ++k) {
                    evals[k] = std::max(evals[k], floor);
                }
                s = es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose();
                s = 0.5 * (s + s.transpose()).eval();
                repaired_[i] = true;
            } else {
                evals = evals.cwiseMax(0.0);
            }
            factor_[i] = es.eigenvectors() * evals.cwiseSqrt().asDiagonal();
        }
    }

    Eigen::VectorXd rho_;
    std::vector<Eigen::VectorXd> mu_;
    std::vector<Eigen::MatrixXd> sigma_;
    std::vector<Eigen::MatrixXd> factor_;
    std::vector<bool> repaired_;
};

/// Long-only fully invested weight vector on the unit simplex.
class Portfolio {
  public:
    explicit Portfolio(Eigen::VectorXd x) : x_(std::move(x)) {
        if (x_.size() < 1) throw std::invalid_argument("Portfolio: empty weight vector");
        double sum = 0.0;
        for (Eigen::Index j = 0; j < x_.size(); ++j) {
            if (x_[j] < -1e-12 || !std::isfinite(x_[j])) {
                throw std::invalid_argument("Portfolio: negative weight at index " +
                                            std::to_string(j));
            }
            x_[j] = std::max(x_[j], 0.0);
            sum += x_[j];
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("Portfolio: weights sum to " + std::to_string(sum));
        }
    }

    static Portfolio equal_weight(int n) {
        return Portfolio(Eigen::VectorXd::Constant(n, 1.0 / n));
    }

    const Eigen::VectorXd& weights() const { return x_; }
    int size() const { return static_cast<int>(x_.size()); }

  private:
    Eigen::VectorXd x_;
};

/// Univariate law of a portfolio's return under a mixture model: component
/// weights with scalar means nu_i = mu^iT x and deviations sd_i = sqrt(x^T
/// sigma^i x). sd_i = 0 (degenerate component) is permitted.
class ProjectedMixture {
  public:
    ProjectedMixture(Eigen::VectorXd rho, Eigen::VectorXd nu, Eigen::VectorXd sd)
        : rho_(std::move(rho)), nu_(std::move(nu)), sd_(std::move(sd)) {
        const Eigen::Index m = rho_.size();
        if (m < 1 || nu_.size() != m || sd_.size() != m) {
            throw std::invalid_argument("ProjectedMixture: size mismatch");
        }
        double sum = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (!(rho_[i] > 0.0)) throw std::invalid_argument("ProjectedMixture: rho > 0");
            if (sd_[i] < 0.0) throw std::invalid_argument("ProjectedMixture: sd >= 0");
            sum += rho_[i];
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("ProjectedMixture: rho must sum to 1");
        }
    }

    int components() const { return static_cast<int>(rho_.size()); }
    const Eigen::VectorXd& weights() const { return rho_; }
    const Eigen::VectorXd& nu() const { return nu_; }
    const Eigen::VectorXd& sd() const { return sd_; }

    double mean() const { return rho_.dot(nu_); }

    /// Total variance by the scalar law of total variance.
    double variance() const {
        double v = rho_.dot(sd_.cwiseProduct(sd_));
        for (int i = 0; i < components(); ++i) {
            for (int j = i + 1; j < components(); ++j) {
                const double d = nu_[i] - nu_[j];
                v += rho_[i] * rho_[j] * d * d;
            }
        }
        return v;
    }

  private:
    Eigen::VectorXd rho_, nu_, sd_;
};

/// Expectation and covariance of the mixture return vector. The covariance
/// adds the pairwise mean-difference terms of the law of total covariance to
/// the weighted component covariances.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> mixture_moments(const MixtureModel& mix) {
    const int m = mix.components();
    const int n = mix.assets();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < m; ++i) mean += mix.weights()[i] * mix.mean(i);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < m; ++i) cov += mix.weights()[i] * mix.covariance(i);
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            const Eigen::VectorXd d = mix.mean(i) - mix.mean(j);
            cov += mix.weights()[i] * mix.weights()[j] * d * d.transpose();
        }
    }
    cov = 0.5 * (cov + cov.transpose()).eval();
    return {std::move(mean), std::move(cov)};
}

/// Project the mixture onto a portfolio, yielding the scalar return law.
inline ProjectedMixture project(const MixtureModel& mix, const Portfolio& x) {
    if (x.size() != mix.assets()) {
        throw std::invalid_argument("project: portfolio dimension " + std::to_string(x.size()) +
                                    " does not match model dimension " +
                                    std::to_string(mix.assets()));
    }
    const int m = mix.components();
    Eigen::VectorXd nu(m), sd(m);
    for (int i = 0; i < m; ++i) {
        nu[i] = mix.mean(i).dot(x.weights());
        sd[i] = std::sqrt(std::max(0.0, x.weights().dot(mix.covariance(i) * x.weights())));
    }
    return ProjectedMixture(mix.weights(), std::move(nu), std::move(sd));
}

/// Draw `count` return vectors (rows). Each row picks a component by its
/// mixing weight and then a multivariate normal through the component's
/// covariance factor. Deterministic given the stream.
inline Eigen::MatrixXd sample(const MixtureModel& mix, int count, RngStream& rng) {
    if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
    const int n = mix.assets();
    const int m = mix.components();
    Eigen::MatrixXd out(count, n);
    Eigen::VectorXd z(n);
    for (int r = 0; r < count; ++r) {
        const double u = rng.uniform01();
        int comp = m - 1;
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            acc += mix.weights()[i];
            if (u < acc) {
                comp = i;
                break;
            }
        }
        for (int j = 0; j < n; ++j) z[j] = rng.gaussian();
        out.row(r) = (mix.mean(comp) + mix.sampling_factor(comp) * z).transpose();
    }
    return out;
}

inline Eigen::MatrixXd sample(const MixtureModel& mix, int count, std::uint64_t seed) {
    RngStream rng(seed);
    return sample(mix, count, rng);
}

}  // namespace mixcvar
