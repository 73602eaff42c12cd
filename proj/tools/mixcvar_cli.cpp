// Command-line front end: mixture fitting, tail-risk evaluation, portfolio
// optimization, equilibrium blending, rolling backtests, and synthetic
// studies. Tables print with two decimals; CSV outputs carry full precision
// and are written atomically. Exit code 0 on success, 1 with a single-line
// diagnostic on failure. All randomness is pinned by --seed.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mixcvar/mixcvar.hpp"

namespace {

using namespace mixcvar;

struct RunConfig {
    double alpha = 0.01;
    int horizon = 180;
    std::vector<double> taus = {1.0 / 16.0, 0.25, 1.0, 4.0};
    std::uint64_t seed = 0;
    int components = 2;
    int restarts = 4;
    int em_max_iters = 500;
    double ll_tolerance = 1e-8;
    double ridge = 1e-8;
    double grad_tolerance = 1e-7;
    int solve_max_iters = 5000;
    std::string out_dir = ".";
};

EmConfig em_config(const RunConfig& cfg) {
    EmConfig em;
    em.components = cfg.components;
    em.max_iters = cfg.em_max_iters;
    em.ll_tolerance = cfg.ll_tolerance;
    em.restarts = cfg.restarts;
    em.ridge = cfg.ridge;
    em.seed = cfg.seed;
    return em;
}

SolveConfig solve_config(const RunConfig& cfg) {
    SolveConfig sc;
    sc.grad_tolerance = cfg.grad_tolerance;
    sc.max_iters = cfg.solve_max_iters;
    return sc;
}

// Flat key-value config file, same dialect as the model file. Flags override
// config values, which override defaults.
void apply_config_file(const std::string& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "alpha") ls >> cfg.alpha;
        else if (key == "h") ls >> cfg.horizon;
        else if (key == "seed") ls >> cfg.seed;
        else if (key == "components") ls >> cfg.components;
        else if (key == "restarts") ls >> cfg.restarts;
        else if (key == "ridge") ls >> cfg.ridge;
        else if (key == "grad_tolerance") ls >> cfg.grad_tolerance;
        else if (key == "out_dir") ls >> cfg.out_dir;
        else if (key == "tau") {
            cfg.taus.clear();
            double v;
            while (ls >> v) cfg.taus.push_back(v);
        } else {
            throw std::runtime_error(path + ": unknown config key '" + key + "'");
        }
    }
}

std::string joined(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt2(const std::optional<double>& v) { return v ? fmt2(*v) : "-"; }

void print_row(const std::vector<std::string>& cells, const std::vector<int>& widths) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const int w = widths[std::min(i, widths.size() - 1)];
        std::string c = cells[i];
        if (static_cast<int>(c.size()) < w) c.insert(i == 0 ? c.end() : c.begin(),
                                                     w - c.size(), ' ');
        line += c;
        line += "  ";
    }
    std::cout << line << '\n';
}

Portfolio load_portfolio_csv(const std::string& path,
                             const std::vector<std::string>& expected_labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open weights file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    std::map<std::string, double> weights;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 'asset,weight'");
        }
        weights[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
    Eigen::VectorXd x(static_cast<Eigen::Index>(expected_labels.size()));
    for (std::size_t j = 0; j < expected_labels.size(); ++j) {
        auto it = weights.find(expected_labels[j]);
        if (it == weights.end()) {
            throw std::runtime_error(path + ": missing weight for asset '" +
                                     expected_labels[j] + "'");
        }
        x[static_cast<Eigen::Index>(j)] = it->second;
    }
    return Portfolio(x);
}

void save_portfolio_csv(const Portfolio& x, const std::vector<std::string>& labels,
                        const std::string& path) {
    std::ostringstream out;
    out << "asset,weight\n";
    for (int j = 0; j < x.size(); ++j) {
        out << labels[static_cast<std::size_t>(j)] << ','
            << mixcvar::detail::format_full(x.weights()[j]) << '\n';
    }
    mixcvar::detail::atomic_write(path, out.str());
}

std::vector<std::string> default_labels(int n) {
    std::vector<std::string> labels(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) labels[static_cast<std::size_t>(j)] = "a" + std::to_string(j + 1);
    return labels;
}

void print_portfolio(const Portfolio& x, const std::vector<std::string>& labels) {
    print_row({"asset", "weight"}, {12, 10});
    for (int j = 0; j < x.size(); ++j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", x.weights()[j]);
        print_row({labels[static_cast<std::size_t>(j)], buf}, {12, 10});
    }
}

// ---------------------------------------------------------------------- fit

int cmd_fit(const RunConfig& cfg, const std::string& returns_path,
            const std::string& out_model) {
    CsvTable table = load_csv(returns_path);
    auto report = fit_mixture_em(table.values, em_config(cfg));
    const auto& model = report.model;
    const int m = model.components();

    std::cout << "components " << m << "  log-likelihood " << fmt2(report.log_likelihood)
              << "  iterations " << report.iterations << "  converged "
              << (report.converged ? "yes" : "no") << "  restart " << report.restart_index
              << "\n";
    if (model.repaired_count() > 0) {
        std::cout << "note: " << model.repaired_count()
                  << " covariance(s) repaired to positive semidefinite\n";
    }
    std::cout << "rho";
    for (int i = 0; i < m; ++i) std::cout << ' ' << fmt2(model.weights()[i]);
    std::cout << "\n";

    std::vector<std::string> header = {"asset"};
    for (int i = 1; i <= m; ++i) header.push_back("mu[" + std::to_string(i) + "]");
    for (int i = 1; i <= m; ++i) header.push_back("sigma[" + std::to_string(i) + "]");
    print_row(header, {18, 10});
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
        std::vector<std::string> row = {table.labels[static_cast<std::size_t>(j)]};
        for (int i = 0; i < m; ++i) row.push_back(fmt2(model.mean(i)[j]));
        for (int i = 0; i < m; ++i) {
            row.push_back(fmt2(std::sqrt(model.covariance(i)(j, j))));
        }
        print_row(row, {18, 10});
    }
    if (!out_model.empty()) {
        save_model(model, out_model);
        std::cout << "model written to " << out_model << "\n";
    }
    return 0;
}

// --------------------------------------------------------------------- risk

int cmd_risk(const RunConfig& cfg, const std::string& model_path,
             const std::string& weights_path, bool equal) {
    auto model = load_model(model_path);
    Portfolio x = equal ? Portfolio::equal_weight(model.assets())
                        : load_portfolio_csv(weights_path, default_labels(model.assets()));
    const Probability alpha(cfg.alpha);
    auto pm = project(model, x);
    auto profile = risk_profile(pm, alpha);

    print_row({"measure", "lower", "exact", "upper"}, {8, 10});
    print_row({"VaR", fmt2(profile.var_lower), fmt2(profile.var), fmt2(profile.var_upper)},
              {8, 10});
    print_row({"CVaR", fmt2(profile.cvar_lower), fmt2(profile.cvar), fmt2(profile.cvar_upper)},
              {8, 10});
    if (profile.kappa) {
        std::cout << "kappa " << fmt2(*profile.kappa) << "\n";
    } else if (cfg.alpha >= model.weights().minCoeff()) {
        std::cout << "warning: alpha >= min component weight; additive upper bound and kappa "
                     "are undefined\n";
    }
    return 0;
}

// ----------------------------------------------------------------- optimize

int cmd_optimize(const RunConfig& cfg, const std::string& model_path,
                 const std::string& returns_path, const std::string& method,
                 std::optional<double> floor_mu0, const std::string& out_portfolio) {
    const Probability alpha(cfg.alpha);
    const SolveConfig solve = solve_config(cfg);

    std::optional<MixtureModel> model;
    std::vector<std::string> labels;
    if (!model_path.empty()) {
        model = load_model(model_path);
        labels = default_labels(model->assets());
    } else {
        CsvTable table = load_csv(returns_path);
        labels = table.labels;
        if (method == "cvar-mixture" || method == "cvar-mixture-approx") {
            model = fit_mixture_em(table.values, em_config(cfg)).model;
        } else {
            auto [mu, sigma] = sample_moments(table.values, cfg.ridge);
            model = MixtureModel::normal(mu, sigma);
        }
    }
    auto [mu, sigma] = mixture_moments(*model);
    std::optional<ExpectedReturnFloor> floor;
    if (floor_mu0) floor = ExpectedReturnFloor{mu, *floor_mu0};

    SolveResult result = [&] {
        if (method == "stdev") {
            if (floor) throw std::runtime_error("--floor applies to the cvar methods only");
            return min_stdev(sigma, solve);
        }
        if (method == "cvar-normal") return min_cvar_normal(mu, sigma, alpha, solve, floor);
        if (method == "cvar-mixture") return min_cvar_mixture_exact(*model, alpha, solve, floor);
        if (method == "cvar-mixture-approx") {
            return min_cvar_mixture_approx(*model, alpha, solve, floor);
        }
        throw std::runtime_error("unknown method '" + method + "'");
    }();

    std::cout << "objective " << fmt2(result.objective);
    if (result.var) std::cout << "  var " << fmt2(*result.var);
    std::cout << "  iterations " << result.iterations << "  converged "
              << (result.converged ? "yes" : "no") << "\n";
    print_portfolio(result.x, labels);
    if (!out_portfolio.empty()) {
        save_portfolio_csv(result.x, labels, out_portfolio);
        std::cout << "portfolio written to " << out_portfolio << "\n";
    }
    return 0;
}

// ----------------------------------------------------------------------- bl

int cmd_bl(const RunConfig& cfg, const std::string& model_path, const std::string& caps_path,
           const std::string& market_source, const std::string& market_weights_path,
           bool market_equal, double tau, const std::string& out_portfolio) {
    auto model = load_model(model_path);
    const int n = model.assets();
    const Probability alpha(cfg.alpha);
    std::vector<std::string> labels = default_labels(n);

    Eigen::VectorXd x_m;
    if (market_equal) {
        x_m = Eigen::VectorXd::Constant(n, 1.0 / n);
    } else if (!market_weights_path.empty()) {
        x_m = load_portfolio_csv(market_weights_path, labels).weights();
    } else if (!caps_path.empty()) {
        CsvTable caps = load_csv(caps_path);
        if (caps.values.cols() != n) throw std::runtime_error("caps column count mismatch");
        labels = caps.labels;
        Eigen::VectorXd row = (market_source == "last")
                                  ? Eigen::VectorXd(caps.values.row(caps.values.rows() - 1))
                                  : Eigen::VectorXd(caps.values.colwise().mean());
        x_m = row / row.sum();
    } else {
        throw std::runtime_error("choose a market: --caps, --market-weights, or --market-equal");
    }
    Portfolio market(x_m);

    auto [mu_pooled, sigma_pooled] = mixture_moments(model);
    const SolveConfig solve = solve_config(cfg);

    if (model.components() == 1) {
        const Eigen::VectorXd mu_tilde = equilibrium_target_normal(sigma_pooled, market, alpha);
        auto adj = adjusted_mu_normal(mu_tilde, model.mean(0), sigma_pooled, tau);
        std::cout << "lambda " << fmt2(adj.lambda) << "\n";
        print_row({"asset", "mu_hat", "mu_tilde", "mu_adj"}, {12, 10});
        for (int j = 0; j < n; ++j) {
            print_row({labels[static_cast<std::size_t>(j)], fmt2(model.mean(0)[j]),
                       fmt2(mu_tilde[j]), fmt2(adj.mu[j])},
                      {12, 10});
        }
        auto result = min_cvar_normal(adj.mu, sigma_pooled, alpha, solve);
        std::cout << "objective " << fmt2(result.objective) << "\n";
        print_portfolio(result.x, labels);
        std::cout << "market deviation |x - x_m|_inf = "
                  << (result.x.weights() - x_m).lpNorm<Eigen::Infinity>() << "\n";
        if (!out_portfolio.empty()) save_portfolio_csv(result.x, labels, out_portfolio);
        return 0;
    }

    const Eigen::VectorXd mu_tilde = equilibrium_target_mixture(model, market, alpha);
    std::vector<Eigen::VectorXd> mu_hats;
    std::vector<Eigen::MatrixXd> sigmas;
    for (int i = 0; i < model.components(); ++i) {
        mu_hats.push_back(model.mean(i));
        sigmas.push_back(model.covariance(i));
    }
    auto adj = adjusted_mu_mixture(mu_tilde, mu_hats, sigma_pooled, sigmas, tau);
    std::cout << "lambda " << fmt2(adj.lambda) << "\n";
    std::vector<std::string> header = {"asset", "mu_tilde"};
    for (int i = 1; i <= model.components(); ++i) {
        header.push_back("mu_hat[" + std::to_string(i) + "]");
        header.push_back("mu_adj[" + std::to_string(i) + "]");
    }
    print_row(header, {12, 10});
    for (int j = 0; j < n; ++j) {
        std::vector<std::string> row = {labels[static_cast<std::size_t>(j)], fmt2(mu_tilde[j])};
        for (int i = 0; i < model.components(); ++i) {
            row.push_back(fmt2(mu_hats[static_cast<std::size_t>(i)][j]));
            row.push_back(fmt2(adj.mu[static_cast<std::size_t>(i)][j]));
        }
        print_row(row, {12, 10});
    }
    MixtureModel adjusted(model.weights(), adj.mu, sigmas);
    auto result = min_cvar_mixture_exact(adjusted, alpha, solve);
    std::cout << "objective " << fmt2(result.objective) << "\n";
    print_portfolio(result.x, labels);
    // The mixture pipeline does not generally reproduce the market even as
    // tau vanishes; surface the deviation.
    std::cout << "market deviation |x - x_m|_inf = "
              << (result.x.weights() - x_m).lpNorm<Eigen::Infinity>() << "\n";
    if (!out_portfolio.empty()) save_portfolio_csv(result.x, labels, out_portfolio);
    return 0;
}

// ----------------------------------------------------------------- backtest

struct NamedReport {
    std::string label;
    BacktestReport report;
};

int cmd_backtest(const RunConfig& cfg, const std::string& returns_path,
                 const std::string& caps_path, std::vector<std::string> strategy_names,
                 const std::string& bl_market, std::optional<double> floor_factor) {
    auto data = load_market_data(returns_path, caps_path);
    const int h = cfg.horizon;
    if (data.periods() <= h) {
        throw std::runtime_error("need more than H=" + std::to_string(h) + " periods, have " +
                                 std::to_string(data.periods()));
    }
    if (strategy_names.empty()) {
        strategy_names = {"LstM", "AvgM", "StDev", "CVaR_N", "CVaR_M"};
    }
    const std::map<std::string, StrategyKind> kinds = {
        {"LstM", StrategyKind::LstM},
        {"AvgM", StrategyKind::AvgM},
        {"StDev", StrategyKind::StDev},
        {"CVaR_N", StrategyKind::CVaRNormal},
        {"CVaR_M", StrategyKind::CVaRMixture},
    };
    const MarketSource source =
        (bl_market == "last") ? MarketSource::Last : MarketSource::Average;

    std::vector<NamedReport> reports;
    std::sort(strategy_names.begin(), strategy_names.end());
    strategy_names.erase(std::unique(strategy_names.begin(), strategy_names.end()),
                         strategy_names.end());
    // Canonical order: plain strategies sorted by name, then BL variants by
    // ascending tau within each CVaR family.
    for (const auto& name : strategy_names) {
        auto it = kinds.find(name);
        if (it == kinds.end()) throw std::runtime_error("unknown strategy '" + name + "'");
        StrategySpec spec;
        spec.kind = it->second;
        spec.alpha = cfg.alpha;
        spec.em = em_config(cfg);
        spec.solve = solve_config(cfg);
        const bool cvar_kind =
            spec.kind == StrategyKind::CVaRNormal || spec.kind == StrategyKind::CVaRMixture;
        if (cvar_kind && floor_factor) spec.floor_factor = floor_factor;
        reports.push_back({name, rolling_backtest(data, spec, h, h, data.periods())});
        if (cvar_kind) {
            std::vector<double> taus = cfg.taus;
            std::sort(taus.begin(), taus.end());
            for (double tau : taus) {
                StrategySpec bl_spec = spec;
                bl_spec.bl = BlSettings{tau, source};
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%g", tau);
                reports.push_back({name + "(tau=" + std::string(buf) + ")",
                                   rolling_backtest(data, bl_spec, h, h, data.periods())});
            }
        }
    }

    print_row({"strategy", "Avg", "StDev", "CVaR", "Avg/StDev", "Avg/CVaR"}, {18, 9});
    for (const auto& nr : reports) {
        const auto& m = nr.report.summary;
        print_row({nr.label, fmt2(m.avg), fmt2(m.stdev), fmt2(m.cvar), fmt2(m.avg_over_stdev),
                   fmt2(m.avg_over_cvar)},
                  {18, 9});
        if (nr.report.solver_flags > 0) {
            std::cout << "note: " << nr.label << " had " << nr.report.solver_flags
                      << " non-converged solve(s)\n";
        }
    }

    // Plot-ready per-period realized returns, one column per strategy; the
    // file re-ingests through the CSV loader.
    CsvTable out;
    out.dates = reports.front().report.dates;
    out.values.resize(static_cast<Eigen::Index>(out.dates.size()),
                      static_cast<Eigen::Index>(reports.size()));
    for (std::size_t k = 0; k < reports.size(); ++k) {
        out.labels.push_back(reports[k].label);
        out.values.col(static_cast<Eigen::Index>(k)) = reports[k].report.realized;
    }
    const std::string returns_out = joined(cfg.out_dir, "backtest_returns.csv");
    save_csv(out, returns_out);

    CsvTable mt;
    mt.labels = {"Avg", "StDev", "CVaR", "AvgOverStDev", "AvgOverCVaR"};
    mt.values.resize(static_cast<Eigen::Index>(reports.size()), 5);
    for (std::size_t k = 0; k < reports.size(); ++k) {
        const auto& m = reports[k].report.summary;
        mt.dates.push_back(reports[k].label);
        mt.values.row(static_cast<Eigen::Index>(k))
            << m.avg, m.stdev, m.cvar, m.avg_over_stdev.value_or(std::nan("")),
            m.avg_over_cvar.value_or(std::nan(""));
    }
    // Metric ratios may be undefined; keep the CSV numeric by writing 0 there.
    for (Eigen::Index r = 0; r < mt.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < 5; ++c) {
            if (std::isnan(mt.values(r, c))) mt.values(r, c) = 0.0;
        }
    }
    const std::string metrics_out = joined(cfg.out_dir, "backtest_metrics.csv");
    save_csv(mt, metrics_out, "strategy");
    std::cout << "wrote " << returns_out << " and " << metrics_out << "\n";
    return 0;
}

// ----------------------------------------------------------------- simulate

int cmd_simulate(const RunConfig& cfg, const std::string& model_path, const std::string& study,
                 int reps, int train, std::optional<double> floor_factor, int threads) {
    auto model = load_model(model_path);
    const Probability alpha(cfg.alpha);
    auto strategies = default_study_strategies(cfg.taus, floor_factor);

    if (study == "true-dist") {
        auto rows = true_distribution_study(model, alpha, strategies, solve_config(cfg));
        print_row({"strategy", "Avg", "StDev", "CVaR", "Avg/StDev", "Avg/CVaR"}, {22, 9});
        CsvTable out;
        out.labels = {"Avg", "StDev", "CVaR", "AvgOverStDev", "AvgOverCVaR"};
        out.values.resize(static_cast<Eigen::Index>(rows.size()), 5);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto& r = rows[k];
            print_row({r.label, fmt2(r.avg), fmt2(r.stdev), fmt2(r.cvar),
                       fmt2(r.avg_over_stdev), fmt2(r.avg_over_cvar)},
                      {22, 9});
            out.dates.push_back(r.label);
            out.values.row(static_cast<Eigen::Index>(k)) << r.avg, r.stdev, r.cvar,
                r.avg_over_stdev.value_or(0.0), r.avg_over_cvar.value_or(0.0);
        }
        const std::string path = joined(cfg.out_dir, "simulate_true_dist.csv");
        save_csv(out, path, "strategy");
        std::cout << "wrote " << path << "\n";
        return 0;
    }
    if (study != "replication") {
        throw std::runtime_error("unknown study '" + study + "' (true-dist|replication)");
    }

    auto table = replication_study(model, reps, train, strategies, alpha, em_config(cfg),
                                   solve_config(cfg), cfg.seed, threads);
    std::cout << "replications " << table.reps_used << "/" << table.reps_requested
              << " (fit failures " << table.fit_failures << ")\n";
    print_row({"strategy", "Avg", "StDev", "CVaR1%", "CVaR0.1%", "CVaR0.05%", "Avg/StDev",
               "Avg/CVaR"},
              {22, 9});
    CsvTable out;
    out.labels = {"Avg", "StDev", "CVaR1", "CVaR01", "CVaR005", "AvgOverStDev", "AvgOverCVaR"};
    out.values.resize(static_cast<Eigen::Index>(table.rows.size()), 7);
    for (std::size_t k = 0; k < table.rows.size(); ++k) {
        const auto& r = table.rows[k];
        print_row({r.label, fmt2(r.avg), fmt2(r.stdev), fmt2(r.cvar_1), fmt2(r.cvar_01),
                   fmt2(r.cvar_005), fmt2(r.avg_over_stdev), fmt2(r.avg_over_cvar)},
                  {22, 9});
        out.dates.push_back(r.label);
        out.values.row(static_cast<Eigen::Index>(k))
            << r.avg, r.stdev.value_or(0.0), r.cvar_1, r.cvar_01, r.cvar_005,
            r.avg_over_stdev.value_or(0.0), r.avg_over_cvar.value_or(0.0);
    }
    const std::string path = joined(cfg.out_dir, "simulate_replication.csv");
    save_csv(out, path, "strategy");
    std::cout << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    if (const char* env_dir = std::getenv("MIXCVAR_OUT_DIR")) cfg.out_dir = env_dir;

    // Config file first so flags can override its values.
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            try {
                apply_config_file(argv[i + 1], cfg);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 1;
            }
        }
    }

    CLI::App app{"Mixture-model CVaR portfolio toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "flat key-value config file");
    app.add_option("--alpha", cfg.alpha, "tail level in (0,1)");
    app.add_option("--seed", cfg.seed, "seed for all stochastic output");
    app.add_option("--out-dir", cfg.out_dir, "output directory for generated files");
    app.add_option("--tau", cfg.taus, "equilibrium-confidence grid")->delimiter(',');
    app.add_option("--components", cfg.components, "mixture components for fits");
    app.add_option("--restarts", cfg.restarts, "EM restarts");
    app.add_option("--ridge", cfg.ridge, "relative covariance ridge");
    app.add_option("--grad-tolerance", cfg.grad_tolerance, "solver fixed-point tolerance");

    auto* fit = app.add_subcommand("fit", "fit a mixture model to a returns CSV");
    std::string fit_returns, fit_out;
    fit->add_option("returns", fit_returns, "returns CSV")->required();
    fit->add_option("--out", fit_out, "model file to write");

    auto* risk = app.add_subcommand("risk", "evaluate VaR/CVaR and bounds for a portfolio");
    std::string risk_model, risk_weights;
    bool risk_equal = false;
    risk->add_option("model", risk_model, "model file")->required();
    risk->add_option("--weights", risk_weights, "portfolio CSV (asset,weight)");
    risk->add_flag("--equal", risk_equal, "use the equal-weight portfolio");

    auto* opt = app.add_subcommand("optimize", "solve a risk-minimizing portfolio");
    std::string opt_model, opt_returns, opt_method = "cvar-mixture", opt_out;
    std::optional<double> opt_floor;
    opt->add_option("model", opt_model, "model file (omit when using --returns)");
    opt->add_option("--returns", opt_returns, "fit inputs from a returns CSV instead");
    opt->add_option("--method", opt_method,
                    "stdev | cvar-normal | cvar-mixture | cvar-mixture-approx");
    opt->add_option("--floor", opt_floor, "expected-return floor mu0");
    opt->add_option("--out", opt_out, "portfolio CSV to write");

    auto* bl = app.add_subcommand("bl", "equilibrium-adjusted means and portfolio");
    std::string bl_model, bl_caps, bl_source = "average", bl_weights, bl_out;
    bool bl_equal = false;
    double bl_tau = 1.0;
    bl->add_option("model", bl_model, "model file")->required();
    bl->add_option("--caps", bl_caps, "caps CSV for the market portfolio");
    bl->add_option("--market-source", bl_source, "last | average (with --caps)");
    bl->add_option("--market-weights", bl_weights, "explicit market portfolio CSV");
    bl->add_flag("--market-equal", bl_equal, "equally weighted market");
    bl->add_option("--tau", bl_tau, "equilibrium confidence");
    bl->add_option("--out", bl_out, "portfolio CSV to write");

    auto* bt = app.add_subcommand("backtest", "rolling-horizon strategy comparison");
    std::string bt_returns, bt_caps, bt_market = "average";
    std::vector<std::string> bt_strategies;
    std::optional<double> bt_floor;
    bt->add_option("returns", bt_returns, "returns CSV")->required();
    bt->add_option("caps", bt_caps, "caps CSV")->required();
    bt->add_option("--H", cfg.horizon, "rolling window length");
    bt->add_option("--strategies", bt_strategies, "subset of LstM,AvgM,StDev,CVaR_N,CVaR_M")
        ->delimiter(',');
    bt->add_option("--bl-market", bt_market, "market anchor for BL variants: last | average");
    bt->add_option("--floor-factor", bt_floor, "expected-return floor factor");

    auto* sim = app.add_subcommand("simulate", "synthetic studies under a known model");
    std::string sim_model, sim_study = "true-dist";
    int sim_reps = 10000, sim_train = 180, sim_threads = 0;
    std::optional<double> sim_floor;
    sim->add_option("model", sim_model, "model file of the generating distribution")->required();
    sim->add_option("--study", sim_study, "true-dist | replication");
    sim->add_option("--reps", sim_reps, "replication count");
    sim->add_option("--train", sim_train, "training draws per replication");
    sim->add_option("--floor-factor", sim_floor, "expected-return floor factor");
    sim->add_option("--threads", sim_threads, "worker threads (0 = hardware)");

    for (auto* sub : {fit, risk, opt, bl, bt, sim}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(cfg.out_dir);
        if (*fit) return cmd_fit(cfg, fit_returns, fit_out);
        if (*risk) {
            if (risk_weights.empty() && !risk_equal) {
                throw std::runtime_error("choose --weights or --equal");
            }
            return cmd_risk(cfg, risk_model, risk_weights, risk_equal);
        }
        if (*opt) {
            if (opt_model.empty() == opt_returns.empty()) {
                throw std::runtime_error("give either a model file or --returns");
            }
            return cmd_optimize(cfg, opt_model, opt_returns, opt_method, opt_floor, opt_out);
        }
        if (*bl) {
            return cmd_bl(cfg, bl_model, bl_caps, bl_source, bl_weights, bl_equal, bl_tau,
                          bl_out);
        }
        if (*bt) {
            return cmd_backtest(cfg, bt_returns, bt_caps, bt_strategies, bt_market, bt_floor);
        }
        if (*sim) {
            return cmd_simulate(cfg, sim_model, sim_study, sim_reps, sim_train, sim_floor,
                                sim_threads);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
