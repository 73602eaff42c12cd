#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mixcvar/bl.hpp"
#include "mixcvar/core.hpp"
#include "mixcvar/fit.hpp"
#include "mixcvar/market_data.hpp"
#include "mixcvar/optimize.hpp"
#include "mixcvar/risk.hpp"

namespace mixcvar {

enum class StrategyKind { LstM, AvgM, StDev, CVaRNormal, CVaRMixture };

inline const char* strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::LstM: return "LstM";
        case StrategyKind::AvgM: return "AvgM";
        case StrategyKind::StDev: return "StDev";
        case StrategyKind::CVaRNormal: return "CVaR_N";
        case StrategyKind::CVaRMixture: return "CVaR_M";
    }
    return "?";
}

enum class MarketSource { Last, Average };

struct BlSettings {
    double tau = 1.0;
    /// Which window market portfolio anchors the equilibrium equation. The
    /// average typically blends best.
    MarketSource source = MarketSource::Average;
};

struct StrategySpec {
    StrategyKind kind = StrategyKind::CVaRMixture;
    /// Equilibrium blending; only the CVaR strategies accept it.
    std::optional<BlSettings> bl;
    /// Expected-return floor as a multiple of the window market mean
    /// mu_hat' x_m; only the CVaR strategies accept it.
    std::optional<double> floor_factor;
    double alpha = 0.01;
    EmConfig em;
    SolveConfig solve;

    void validate() const {
        const bool cvar_kind =
            kind == StrategyKind::CVaRNormal || kind == StrategyKind::CVaRMixture;
        if ((bl || floor_factor) && !cvar_kind) {
            throw std::invalid_argument(
                "StrategySpec: bl/floor apply only to the CVaR strategies");
        }
        if (!(alpha > 0.0 && alpha < 1.0)) {
            throw std::invalid_argument("StrategySpec: alpha in (0,1)");
        }
        em.validate();
        solve.validate();
    }
};

/// Summary statistics of a realized return series. The empirical CVaR is the
/// negated mean of the ceil(alpha*T) worst observations; ratios are absent
/// when their denominator vanishes.
struct Metrics {
    double avg = 0.0;
    double stdev = 0.0;
    double cvar = 0.0;
    std::optional<double> avg_over_stdev;
    std::optional<double> avg_over_cvar;
};

inline double empirical_cvar(const Eigen::VectorXd& series, Probability alpha) {
    const Eigen::Index t = series.size();
    const Eigen::Index k =
        static_cast<Eigen::Index>(std::ceil(alpha.value() * static_cast<double>(t)));
    std::vector<double> sorted(series.data(), series.data() + t);
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) acc += sorted[static_cast<std::size_t>(i)];
    return -acc / static_cast<double>(k);
}

inline Metrics metrics(const Eigen::VectorXd& series, Probability alpha_eval) {
    if (series.size() < 2) throw std::invalid_argument("metrics: need at least two returns");
    Metrics m;
    m.avg = series.mean();
    m.stdev = std::sqrt((series.array() - m.avg).square().mean());
    m.cvar = empirical_cvar(series, alpha_eval);
    if (m.stdev > 0.0) m.avg_over_stdev = m.avg / m.stdev;
    if (m.cvar != 0.0) m.avg_over_cvar = m.avg / m.cvar;
    return m;
}

/// Cap-weighted aggregation of individual instruments into groups: group
/// return is the cap-weighted mean of member returns, group cap the summed
/// member caps renormalized per period.
inline MarketData sector_aggregate(const Eigen::MatrixXd& stock_returns,
                                   const Eigen::MatrixXd& stock_caps,
                                   const std::vector<int>& sector_map,
                                   const std::vector<std::string>& sector_labels,
                                   const std::vector<std::string>& dates) {
    const Eigen::Index t = stock_returns.rows();
    const Eigen::Index s = stock_returns.cols();
    const int k = static_cast<int>(sector_labels.size());
    if (stock_caps.rows() != t || stock_caps.cols() != s ||
        static_cast<Eigen::Index>(sector_map.size()) != s ||
        static_cast<Eigen::Index>(dates.size()) != t) {
        throw std::invalid_argument("sector_aggregate: dimension mismatch");
    }
    for (int who : sector_map) {
        if (who < 0 || who >= k) throw std::invalid_argument("sector_aggregate: bad sector id");
    }
    if ((stock_caps.array() <= 0.0).any()) {
        throw std::invalid_argument("sector_aggregate: caps must be positive");
    }
    MarketData out;
    out.returns.setZero(t, k);
    out.caps.setZero(t, k);
    for (Eigen::Index row = 0; row < t; ++row) {
        for (Eigen::Index j = 0; j < s; ++j) {
            const int g = sector_map[static_cast<std::size_t>(j)];
            out.caps(row, g) += stock_caps(row, j);
            out.returns(row, g) += stock_caps(row, j) * stock_returns(row, j);
        }
        for (int g = 0; g < k; ++g) {
            if (!(out.caps(row, g) > 0.0)) {
                throw std::invalid_argument("sector_aggregate: sector '" + sector_labels[g] +
                                            "' is empty in period " + std::to_string(row));
            }
            out.returns(row, g) /= out.caps(row, g);
        }
        out.caps.row(row) /= out.caps.row(row).sum();
    }
    out.labels = sector_labels;
    out.dates = dates;
    out.validate();
    return out;
}

struct BuiltPortfolio {
    Portfolio x;
    /// False when an optimizer stopped at max_iters above tolerance.
    bool converged = true;
};

namespace detail {

inline Eigen::VectorXd window_market(const Eigen::Ref<const Eigen::MatrixXd>& caps,
                                     MarketSource source) {
    if (source == MarketSource::Last) return caps.row(caps.rows() - 1);
    return caps.colwise().mean();
}

}  // namespace detail

/// Build one portfolio from the trailing window [t-H, t-1]: market strategies
/// read the caps, estimation strategies fit moments or the mixture on the
/// window returns, optionally blending the equilibrium target (BL) and an
/// expected-return floor before solving.
inline BuiltPortfolio build_portfolio(const StrategySpec& spec,
                                      const Eigen::Ref<const Eigen::MatrixXd>& window_returns,
                                      const Eigen::Ref<const Eigen::MatrixXd>& window_caps) {
    spec.validate();
    const Eigen::Index h = window_returns.rows();
    const Eigen::Index n = window_returns.cols();
    if (window_caps.rows() != h || window_caps.cols() != n) {
        throw std::invalid_argument("build_portfolio: window shape mismatch");
    }
    const Probability alpha(spec.alpha);

    switch (spec.kind) {
        case StrategyKind::LstM:
            return {Portfolio(window_caps.row(h - 1)), true};
        case StrategyKind::AvgM:
            return {Portfolio(window_caps.colwise().mean()), true};
        default:
            break;
    }
    if (h < n + 2) {
        throw std::invalid_argument("build_portfolio: estimation strategies need H >= n+2");
    }
    auto [mu_hat, sigma_hat] = sample_moments(window_returns, spec.em.ridge);

    if (spec.kind == StrategyKind::StDev) {
        auto r = min_stdev(sigma_hat, spec.solve);
        return {r.x, r.converged};
    }

    const Eigen::VectorXd x_m = detail::window_market(
        window_caps, spec.bl ? spec.bl->source : MarketSource::Average);
    std::optional<ExpectedReturnFloor> floor;
    if (spec.floor_factor) {
        floor = ExpectedReturnFloor{mu_hat, *spec.floor_factor * mu_hat.dot(x_m)};
    }

    if (spec.kind == StrategyKind::CVaRNormal) {
        Eigen::VectorXd mu = mu_hat;
        if (spec.bl) {
            const Eigen::VectorXd mu_tilde =
                equilibrium_target_normal(sigma_hat, Portfolio(x_m), alpha);
            mu = adjusted_mu_normal(mu_tilde, mu_hat, sigma_hat, spec.bl->tau).mu;
        }
        auto r = min_cvar_normal(mu, sigma_hat, alpha, spec.solve, floor);
        return {r.x, r.converged};
    }

    // CVaRMixture
    auto fit = fit_mixture_em(window_returns, spec.em);
    MixtureModel model = fit.model;
    if (spec.bl) {
        const Eigen::VectorXd mu_tilde =
            equilibrium_target_mixture(model, Portfolio(x_m), alpha);
        std::vector<Eigen::VectorXd> mu_hats;
        std::vector<Eigen::MatrixXd> sigmas;
        for (int i = 0; i < model.components(); ++i) {
            mu_hats.push_back(model.mean(i));
            sigmas.push_back(model.covariance(i));
        }
        auto adj = adjusted_mu_mixture(mu_tilde, mu_hats, sigma_hat, sigmas, spec.bl->tau);
        model = MixtureModel(model.weights(), adj.mu, sigmas);
    }
    auto r = min_cvar_mixture_exact(model, alpha, spec.solve, floor);
    return {r.x, r.converged};
}

struct BacktestReport {
    std::vector<Eigen::VectorXd> portfolios;
    Eigen::VectorXd realized;
    std::vector<std::string> dates;
    Metrics summary;
    int solver_flags = 0;
};

/// Roll the strategy through [eval_begin, eval_end): period t's portfolio
/// uses only rows [t-H, t-1], is evaluated on row t, and EM seeds derive from
/// (em.seed, t) so periods are independent and reproducible.
inline BacktestReport rolling_backtest(const MarketData& data, const StrategySpec& spec, int h,
                                       Eigen::Index eval_begin, Eigen::Index eval_end) {
    spec.validate();
    data.validate();
    if (h < 1 || eval_begin < h || eval_end > data.periods() || eval_begin >= eval_end) {
        throw std::invalid_argument("rolling_backtest: evaluation range needs H periods of "
                                    "history inside the data");
    }
    BacktestReport report;
    const Eigen::Index count = eval_end - eval_begin;
    report.portfolios.reserve(count);
    report.realized.resize(count);
    report.dates.reserve(count);
    for (Eigen::Index t = eval_begin; t < eval_end; ++t) {
        StrategySpec period_spec = spec;
        period_spec.em.seed = RngStream(spec.em.seed, static_cast<std::uint64_t>(t)).next_u64();
        auto built = build_portfolio(period_spec, data.returns.middleRows(t - h, h),
                                     data.caps.middleRows(t - h, h));
        if (!built.converged) ++report.solver_flags;
        report.portfolios.push_back(built.x.weights());
        report.realized[t - eval_begin] = data.returns.row(t).dot(built.x.weights());
        report.dates.push_back(data.dates[static_cast<std::size_t>(t)]);
    }
    if (count >= 2) {
        report.summary = metrics(report.realized, Probability(spec.alpha));
    } else {
        report.summary.avg = report.realized[0];
        report.summary.stdev = 0.0;
        report.summary.cvar = -report.realized[0];
    }
    return report;
}

// ---------------------------------------------------------------------------
// Synthetic studies against a known generating model.

/// One row of a study table: a labeled strategy with either population or
/// replication statistics.
struct StudyStrategy {
    enum class Kind { Market, CVaRNormal, CVaRMixture };
    std::string label;
    Kind kind = Kind::Market;
    /// Equilibrium confidence; absent means the pure risk minimizer.
    std::optional<double> tau;
    /// Expected-return floor as a multiple of mu_hat' x_m.
    std::optional<double> floor_factor;
};

/// Canonical strategy list: market first, then the mixture family (blended
/// variants by ascending tau, then pure), then the normal family.
inline std::vector<StudyStrategy> default_study_strategies(const std::vector<double>& taus,
                                                           std::optional<double> floor_factor) {
    std::vector<StudyStrategy> out;
    out.push_back({"Market", StudyStrategy::Kind::Market, std::nullopt, std::nullopt});
    std::vector<double> sorted = taus;
    std::sort(sorted.begin(), sorted.end());
    auto add_family = [&](StudyStrategy::Kind kind, const std::string& base) {
        for (double tau : sorted) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%g", tau);
            out.push_back({base + "(tau=" + buf + ")", kind, tau, floor_factor});
        }
        out.push_back({base, kind, std::nullopt, floor_factor});
    };
    add_family(StudyStrategy::Kind::CVaRMixture, "CVaR_M");
    add_family(StudyStrategy::Kind::CVaRNormal, "CVaR_N");
    return out;
}

struct StudyRow {
    std::string label;
    double avg = 0.0;
    double stdev = 0.0;
    double cvar = 0.0;
    std::optional<double> avg_over_stdev;
    std::optional<double> avg_over_cvar;
};

namespace detail {

/// Portfolio of one study strategy given model parameters (true or fitted).
/// x_m is the equally weighted market unless the caller supplies one.
inline Portfolio study_portfolio(const StudyStrategy& strat, const MixtureModel& model,
                                 const Eigen::VectorXd& mu_hat, const Eigen::MatrixXd& sigma_hat,
                                 const Eigen::VectorXd& x_m, Probability alpha,
                                 const SolveConfig& solve) {
    std::optional<ExpectedReturnFloor> floor;
    if (strat.floor_factor) {
        floor = ExpectedReturnFloor{mu_hat, *strat.floor_factor * mu_hat.dot(x_m)};
    }
    switch (strat.kind) {
        case StudyStrategy::Kind::Market:
            return Portfolio(x_m);
        case StudyStrategy::Kind::CVaRNormal: {
            Eigen::VectorXd mu = mu_hat;
            if (strat.tau) {
                const Eigen::VectorXd mu_tilde =
                    equilibrium_target_normal(sigma_hat, Portfolio(x_m), alpha);
                mu = adjusted_mu_normal(mu_tilde, mu_hat, sigma_hat, *strat.tau).mu;
            }
            return min_cvar_normal(mu, sigma_hat, alpha, solve, floor).x;
        }
        case StudyStrategy::Kind::CVaRMixture: {
            MixtureModel solving = model;
            if (strat.tau) {
                const Eigen::VectorXd mu_tilde =
                    equilibrium_target_mixture(model, Portfolio(x_m), alpha);
                std::vector<Eigen::VectorXd> mu_hats;
                std::vector<Eigen::MatrixXd> sigmas;
                for (int i = 0; i < model.components(); ++i) {
                    mu_hats.push_back(model.mean(i));
                    sigmas.push_back(model.covariance(i));
                }
                auto adj =
                    adjusted_mu_mixture(mu_tilde, mu_hats, sigma_hat, sigmas, *strat.tau);
                solving = MixtureModel(model.weights(), adj.mu, sigmas);
            }
            return min_cvar_mixture_exact(solving, alpha, solve, floor).x;
        }
    }
    throw std::logic_error("study_portfolio: unreachable");
}

}  // namespace detail

/// Population statistics of each strategy under a known generating model:
/// exact mean, deviation, and tail CVaR of the portfolio return, no sampling
/// involved. The market is the equally weighted portfolio.
inline std::vector<StudyRow> true_distribution_study(const MixtureModel& truth,
                                                     Probability alpha,
                                                     const std::vector<StudyStrategy>& strategies,
                                                     const SolveConfig& solve = {}) {
    const int n = truth.assets();
    const Eigen::VectorXd x_m = Eigen::VectorXd::Constant(n, 1.0 / n);
    const auto [mean, cov] = mixture_moments(truth);
    std::vector<StudyRow> rows;
    rows.reserve(strategies.size());
    for (const auto& strat : strategies) {
        const Portfolio x =
            detail::study_portfolio(strat, truth, mean, cov, x_m, alpha, solve);
        StudyRow row;
        row.label = strat.label;
        row.avg = mean.dot(x.weights());
        row.stdev = std::sqrt(std::max(0.0, x.weights().dot(cov * x.weights())));
        row.cvar = cvar_mixture_exact(project(truth, x), alpha).cvar;
        if (row.stdev > 0.0) row.avg_over_stdev = row.avg / row.stdev;
        if (row.cvar != 0.0) row.avg_over_cvar = row.avg / row.cvar;
        rows.push_back(std::move(row));
    }
    return rows;
}

struct ReplicationRow {
    std::string label;
    double avg = 0.0;
    std::optional<double> stdev;
    /// Empirical CVaR at the 1%, 0.1%, and 0.05% levels.
    double cvar_1 = 0.0;
    double cvar_01 = 0.0;
    double cvar_005 = 0.0;
    std::optional<double> avg_over_stdev;
    std::optional<double> avg_over_cvar;
};

struct ReplicationTable {
    std::vector<ReplicationRow> rows;
    int reps_requested = 0;
    int reps_used = 0;
    /// Replications dropped because the mixture fit collapsed.
    int fit_failures = 0;
};

/// Out-of-sample replication study: each replication draws train+1 vectors
/// from the truth, fits the normal and mixture models on the first `train`,
/// builds every strategy, and evaluates on the held-back last vector.
/// Replication r uses streams derived from (seed, r), so the table is
/// bit-identical for a fixed (seed, spec) regardless of thread count.
inline ReplicationTable replication_study(const MixtureModel& truth, int reps, int train,
                                          const std::vector<StudyStrategy>& strategies,
                                          Probability alpha, const EmConfig& em,
                                          const SolveConfig& solve, std::uint64_t seed,
                                          int threads = 0) {
    if (reps < 1) throw std::invalid_argument("replication_study: reps >= 1");
    if (train < truth.assets() + 2) {
        throw std::invalid_argument("replication_study: train >= n+2");
    }
    const int n = truth.assets();
    const int s = static_cast<int>(strategies.size());
    const Eigen::VectorXd x_m = Eigen::VectorXd::Constant(n, 1.0 / n);

    Eigen::MatrixXd outcomes(reps, s);
    std::vector<char> ok(reps, 0);

    auto run_block = [&](int begin, int end) {
        for (int r = begin; r < end; ++r) {
            RngStream draw_stream(seed, 2 * static_cast<std::uint64_t>(r));
            const Eigen::MatrixXd draws = sample(truth, train + 1, draw_stream);
            const auto window = draws.topRows(train);
            const Eigen::VectorXd last = draws.row(train);
            try {
                auto [mu_hat, sigma_hat] = sample_moments(window, em.ridge);
                EmConfig em_r = em;
                em_r.seed = RngStream(seed, 2 * static_cast<std::uint64_t>(r) + 1).next_u64();
                auto fit = fit_mixture_em(window, em_r);
                for (int k = 0; k < s; ++k) {
                    const Portfolio x = detail::study_portfolio(
                        strategies[static_cast<std::size_t>(k)], fit.model, mu_hat, sigma_hat,
                        x_m, alpha, solve);
                    outcomes(r, k) = last.dot(x.weights());
                }
                ok[static_cast<std::size_t>(r)] = 1;
            } catch (const std::exception&) {
                ok[static_cast<std::size_t>(r)] = 0;
            }
        }
    };

    int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, std::max(1, reps));
    if (workers == 1) {
        run_block(0, reps);
    } else {
        std::vector<std::future<void>> futures;
        const int chunk = (reps + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int begin = w * chunk;
            const int end = std::min(reps, begin + chunk);
            if (begin >= end) break;
            futures.push_back(std::async(std::launch::async, run_block, begin, end));
        }
        for (auto& f : futures) f.get();
    }

    ReplicationTable table;
    table.reps_requested = reps;
    for (int r = 0; r < reps; ++r) table.reps_used += ok[static_cast<std::size_t>(r)];
    table.fit_failures = reps - table.reps_used;
    if (table.reps_used == 0) {
        throw std::runtime_error("replication_study: every replication failed to fit");
    }

    for (int k = 0; k < s; ++k) {
        Eigen::VectorXd series(table.reps_used);
        int idx = 0;
        for (int r = 0; r < reps; ++r) {
            if (ok[static_cast<std::size_t>(r)]) series[idx++] = outcomes(r, k);
        }
        ReplicationRow row;
        row.label = strategies[static_cast<std::size_t>(k)].label;
        row.avg = series.mean();
        row.cvar_1 = empirical_cvar(series, Probability(0.01));
        row.cvar_01 = empirical_cvar(series, Probability(0.001));
        row.cvar_005 = empirical_cvar(series, Probability(0.0005));
        if (series.size() >= 2) {
            row.stdev = std::sqrt((series.array() - row.avg).square().mean());
            if (*row.stdev > 0.0) row.avg_over_stdev = row.avg / *row.stdev;
        }
        if (row.cvar_1 != 0.0) row.avg_over_cvar = row.avg / row.cvar_1;
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace mixcvar
