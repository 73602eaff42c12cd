#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mixcvar/backtest.hpp"
#include "mixcvar/data.hpp"
#include "support/oracles.hpp"
#include "support/reference_model.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using mixcvar::BlSettings;
using mixcvar::CapRule;
using mixcvar::MarketData;
using mixcvar::MarketSource;
using mixcvar::MixtureModel;
using mixcvar::Probability;
using mixcvar::StrategyKind;
using mixcvar::StrategySpec;
using mixcvar::StudyStrategy;
using mixcvar::build_portfolio;
using mixcvar::generate_synthetic;
using mixcvar::metrics;
using mixcvar::replication_study;
using mixcvar::rolling_backtest;
using mixcvar::sector_aggregate;
using mixcvar::true_distribution_study;

namespace {

StrategySpec make_spec(StrategyKind kind) {
    StrategySpec spec;
    spec.kind = kind;
    spec.em.restarts = 2;
    spec.em.max_iters = 300;
    return spec;
}

}  // namespace

TEST(SectorAggregate, PassthroughAndEqualWeights) {
    MatrixXd returns(2, 2), caps(2, 2);
    returns << 1.0, 3.0, -1.0, 2.0;
    caps << 5.0, 5.0, 2.0, 8.0;
    // One stock per sector: identity passthrough of returns.
    auto identity = sector_aggregate(returns, caps, {0, 1}, {"s1", "s2"}, {"1", "2"});
    EXPECT_LT((identity.returns - returns).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(identity.caps(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(identity.caps(1, 1), 0.8, 1e-15);

    // Two stocks, equal caps: sector return is the plain average.
    auto merged = sector_aggregate(returns, MatrixXd::Constant(2, 2, 3.0), {0, 0}, {"all"},
                                   {"1", "2"});
    EXPECT_NEAR(merged.returns(0, 0), 2.0, 1e-15);
    EXPECT_NEAR(merged.caps(0, 0), 1.0, 1e-15);
}

TEST(SectorAggregate, MatchesWeightedMeanOracle) {
    std::mt19937_64 gen(15);
    std::uniform_real_distribution<double> unif(0.1, 2.0);
    const int t = 6, s = 7;
    MatrixXd returns(t, s), caps(t, s);
    for (int r = 0; r < t; ++r)
        for (int j = 0; j < s; ++j) {
            returns(r, j) = 4.0 * unif(gen) - 4.0;
            caps(r, j) = unif(gen);
        }
    const std::vector<int> map = {0, 1, 0, 2, 1, 2, 0};
    auto agg = sector_aggregate(returns, caps, map, {"x", "y", "z"},
                                {"1", "2", "3", "4", "5", "6"});
    for (int r = 0; r < t; ++r) {
        for (int g = 0; g < 3; ++g) {
            double wsum = 0.0, rsum = 0.0;
            for (int j = 0; j < s; ++j) {
                if (map[static_cast<std::size_t>(j)] == g) {
                    wsum += caps(r, j);
                    rsum += caps(r, j) * returns(r, j);
                }
            }
            EXPECT_NEAR(agg.returns(r, g), rsum / wsum, 1e-12);
        }
        EXPECT_NEAR(agg.caps.row(r).sum(), 1.0, 1e-12);
    }
}

TEST(SectorAggregate, RejectsEmptySector) {
    MatrixXd r = MatrixXd::Zero(1, 2), c = MatrixXd::Constant(1, 2, 1.0);
    EXPECT_THROW(sector_aggregate(r, c, {0, 0}, {"a", "b"}, {"1"}), std::invalid_argument);
}

TEST(MetricsOp, HandCases) {
    VectorXd flat = VectorXd::Ones(4);
    auto m = metrics(flat, Probability(0.25));
    EXPECT_DOUBLE_EQ(m.avg, 1.0);
    EXPECT_DOUBLE_EQ(m.stdev, 0.0);
    EXPECT_DOUBLE_EQ(m.cvar, -1.0);
    EXPECT_FALSE(m.avg_over_stdev.has_value());
    ASSERT_TRUE(m.avg_over_cvar.has_value());

    VectorXd spike = VectorXd::Zero(100);
    spike[17] = -10.0;
    auto s = metrics(spike, Probability(0.01));
    EXPECT_DOUBLE_EQ(s.cvar, 10.0);

    VectorXd one = VectorXd::Zero(1);
    EXPECT_THROW(metrics(one, Probability(0.5)), std::invalid_argument);
}

TEST(MetricsOp, CvarMatchesSortOracle) {
    std::mt19937_64 gen(77);
    std::normal_distribution<double> gauss(0.5, 2.0);
    VectorXd series(500);
    for (int i = 0; i < 500; ++i) series[i] = gauss(gen);
    for (double alpha : {0.01, 0.05, 0.25}) {
        std::vector<double> copy(series.data(), series.data() + 500);
        const double oracle = oracles::empirical_cvar(copy, alpha);
        EXPECT_NEAR(metrics(series, Probability(alpha)).cvar, oracle, 1e-12);
    }
}

TEST(BuildPortfolio, MarketStrategiesReadCaps) {
    MatrixXd returns = MatrixXd::Zero(4, 3);
    MatrixXd caps(4, 3);
    caps << 0.2, 0.3, 0.5, 0.25, 0.25, 0.5, 0.3, 0.3, 0.4, 0.2, 0.3, 0.5;
    auto last = build_portfolio(make_spec(StrategyKind::LstM), returns, caps);
    EXPECT_LT((last.x.weights() - caps.row(3).transpose()).cwiseAbs().maxCoeff(), 1e-15);

    auto avg = build_portfolio(make_spec(StrategyKind::AvgM), returns, caps);
    EXPECT_LT((avg.x.weights() - caps.colwise().mean().transpose()).cwiseAbs().maxCoeff(),
              1e-15);
}

TEST(BuildPortfolio, ValidatesSpecAndWindow) {
    StrategySpec bad = make_spec(StrategyKind::StDev);
    bad.bl = BlSettings{1.0, MarketSource::Last};
    MatrixXd r = MatrixXd::Zero(4, 2), c = MatrixXd::Constant(4, 2, 0.5);
    EXPECT_THROW(build_portfolio(bad, r, c), std::invalid_argument);
    // Estimation strategies need H >= n+2.
    EXPECT_THROW(build_portfolio(make_spec(StrategyKind::StDev), MatrixXd::Zero(3, 2),
                                 MatrixXd::Constant(3, 2, 0.5)),
                 std::invalid_argument);
}

TEST(BuildPortfolio, BlWithTinyTauRecoversMarket) {
    auto truth = testsupport::sector_mixture();
    auto data = generate_synthetic(truth, 80, CapRule::Dirichlet, 3u);
    StrategySpec spec = make_spec(StrategyKind::CVaRNormal);
    spec.bl = BlSettings{1e-8, MarketSource::Last};
    auto built = build_portfolio(spec, data.returns.topRows(60), data.caps.topRows(60));
    const VectorXd x_m = data.caps.row(59);
    EXPECT_LT((built.x.weights() - x_m).lpNorm<Eigen::Infinity>(), 1e-3);
}

TEST(RollingBacktest, SinglePeriodAndConstantData) {
    auto truth = testsupport::energy_mixture();
    auto data = generate_synthetic(truth, 30, CapRule::Equal, 11u);
    auto spec = make_spec(StrategyKind::LstM);
    EXPECT_THROW(rolling_backtest(data, spec, 20, 19, 30), std::invalid_argument);

    MarketData constant;
    constant.returns = MatrixXd::Constant(10, 2, 1.5);
    constant.caps = MatrixXd::Constant(10, 2, 0.5);
    constant.labels = {"a", "b"};
    constant.dates.resize(10, "d");
    auto report = rolling_backtest(constant, make_spec(StrategyKind::AvgM), 5, 5, 10);
    EXPECT_EQ(report.realized.size(), 5);
    EXPECT_DOUBLE_EQ(report.summary.stdev, 0.0);
    EXPECT_DOUBLE_EQ(report.summary.avg, 1.5);
    EXPECT_FALSE(report.summary.avg_over_stdev.has_value());

    auto single = rolling_backtest(data, make_spec(StrategyKind::LstM), 20, 20, 21);
    EXPECT_EQ(single.portfolios.size(), 1u);
}

TEST(RollingBacktest, LstMAverageMatchesDirectRecomputation) {
    auto truth = testsupport::sector_mixture();
    auto data = generate_synthetic(truth, 60, CapRule::Dirichlet, 17u);
    const int h = 12;
    auto report = rolling_backtest(data, make_spec(StrategyKind::LstM), h, h, 60);
    double acc = 0.0;
    for (Eigen::Index t = h; t < 60; ++t) {
        acc += data.returns.row(t).dot(data.caps.row(t - 1));
    }
    EXPECT_NEAR(report.summary.avg, acc / (60 - h), 1e-12);
}

TEST(RollingBacktest, NoLookAhead) {
    auto truth = testsupport::sector_mixture();
    auto data = generate_synthetic(truth, 40, CapRule::Dirichlet, 23u);
    auto spec = make_spec(StrategyKind::CVaRNormal);
    const int h = 20;
    auto base = rolling_backtest(data, spec, h, h, 40);

    // Perturbing the evaluation-period return must not move its portfolio.
    MarketData bumped = data;
    bumped.returns(25, 0) += 50.0;
    auto perturbed = rolling_backtest(bumped, spec, h, h, 40);
    EXPECT_EQ((perturbed.portfolios[25 - h] - base.portfolios[25 - h]).cwiseAbs().maxCoeff(),
              0.0);
    // Later windows do see the bump.
    EXPECT_GT((perturbed.portfolios[26 - h] - base.portfolios[26 - h]).cwiseAbs().maxCoeff(),
              0.0);
}

TEST(RollingBacktest, DeterministicGivenSeed) {
    Eigen::VectorXd rho(2), m1(2), m2(2);
    rho << 0.3, 0.7;
    m1 << -5.0, -4.0;
    m2 << 2.0, 3.0;
    Eigen::MatrixXd s1(2, 2), s2(2, 2);
    s1 << 4.0, 1.0, 1.0, 3.0;
    s2 << 2.0, -0.5, -0.5, 2.0;
    MixtureModel truth(rho, {m1, m2}, {s1, s2});
    auto data = generate_synthetic(truth, 80, CapRule::Equal, 29u);
    auto spec = make_spec(StrategyKind::CVaRMixture);
    spec.em.components = 2;
    spec.em.restarts = 4;
    spec.em.seed = 7;
    auto a = rolling_backtest(data, spec, 40, 40, 80);
    auto b = rolling_backtest(data, spec, 40, 40, 80);
    EXPECT_EQ((a.realized - b.realized).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TrueDistributionStudy, SingleAssetDegenerateUniverse) {
    auto truth = testsupport::energy_mixture();
    auto rows = true_distribution_study(
        truth, Probability(0.01),
        mixcvar::default_study_strategies({0.25, 1.0}, std::nullopt));
    ASSERT_EQ(rows.size(), 7u);
    for (const auto& row : rows) {
        EXPECT_NEAR(row.avg, rows[0].avg, 1e-9) << row.label;
        EXPECT_NEAR(row.cvar, rows[0].cvar, 1e-7) << row.label;
    }
}

TEST(TrueDistributionStudy, SectorModelMarketRow) {
    auto truth = testsupport::sector_mixture();
    auto rows = true_distribution_study(truth, Probability(0.01),
                                        {{"Market", StudyStrategy::Kind::Market, {}, {}}});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_NEAR(rows[0].avg, 1.31, 0.005);
    ASSERT_TRUE(rows[0].avg_over_stdev.has_value());
    ASSERT_TRUE(rows[0].avg_over_cvar.has_value());
}

TEST(ReplicationStudy, RejectsBadParameters) {
    auto truth = testsupport::energy_mixture();
    mixcvar::EmConfig em;
    auto strategies = mixcvar::default_study_strategies({}, std::nullopt);
    EXPECT_THROW(
        replication_study(truth, 0, 30, strategies, Probability(0.01), em, {}, 1u),
        std::invalid_argument);
    EXPECT_THROW(
        replication_study(truth, 5, 2, strategies, Probability(0.01), em, {}, 1u),
        std::invalid_argument);
}

TEST(ReplicationStudy, SmokeDeterminismAndSingleRep) {
    auto truth = testsupport::energy_mixture();
    mixcvar::EmConfig em;
    em.components = 2;
    em.restarts = 2;
    auto strategies = mixcvar::default_study_strategies({1.0}, std::nullopt);
    auto one = replication_study(truth, 1, 30, strategies, Probability(0.01), em, {}, 5u);
    EXPECT_EQ(one.reps_used + one.fit_failures, 1);
    if (one.reps_used == 1) EXPECT_FALSE(one.rows[0].stdev.has_value());

    auto a = replication_study(truth, 12, 30, strategies, Probability(0.01), em, {}, 5u, 2);
    auto b = replication_study(truth, 12, 30, strategies, Probability(0.01), em, {}, 5u, 1);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t k = 0; k < a.rows.size(); ++k) {
        EXPECT_EQ(a.rows[k].avg, b.rows[k].avg);
        EXPECT_EQ(a.rows[k].cvar_1, b.rows[k].cvar_1);
    }
}

TEST(ReplicationStudy, NormalTruthMakesModelsCoincide) {
    // Under a single-normal truth the mixture and normal risk minimizers
    // estimate the same population problem; their paired out-of-sample means
    // must be statistically indistinguishable.
    Eigen::VectorXd mu(3), sd(3);
    mu << 1.0, 1.3, 0.8;
    sd << 4.0, 5.0, 3.5;
    auto truth = MixtureModel::normal(mu, sd.cwiseProduct(sd).asDiagonal().toDenseMatrix());
    mixcvar::EmConfig em;
    em.components = 2;
    em.restarts = 2;
    std::vector<StudyStrategy> pair = {
        {"CVaR_M", StudyStrategy::Kind::CVaRMixture, {}, {}},
        {"CVaR_N", StudyStrategy::Kind::CVaRNormal, {}, {}},
    };
    const int reps = 400;
    auto table = replication_study(truth, reps, 60, pair, Probability(0.01), em, {}, 13u);
    ASSERT_GT(table.reps_used, reps / 2);
    const double diff = table.rows[0].avg - table.rows[1].avg;
    // Paired difference of nearly identical portfolios: tight tolerance via
    // the per-rep deviation scale.
    EXPECT_LT(std::abs(diff), 0.25);
}
