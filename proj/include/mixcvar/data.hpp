#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixcvar/core.hpp"
#include "mixcvar/market_data.hpp"

namespace mixcvar {

// Persistence surfaces. CSV files are comma-separated, UTF-8, LF or CRLF,
// with an opaque date string in the first column and one numeric column per
// asset, returns in percent. Model files are flat key-value text tagged
// mixcvar-model-v1 with 17-significant-digit decimals, so save/load round
// trips are bit exact.

/// A parsed CSV: asset labels (header cells after the date column), one date
/// string per row, and the numeric payload.
struct CsvTable {
    std::vector<std::string> labels;
    std::vector<std::string> dates;
    Eigen::MatrixXd values;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

inline double parse_number(const std::string& field, const std::string& path, int line_no) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    while (ptr < end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": not a finite number: '" + field + "'");
    }
    return value;
}

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Write-then-rename so failures never leave partial output behind.
inline void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out << content;
        if (!out.good()) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline CsvTable load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() < 2) {
        throw std::runtime_error(path + ":1: header needs a date column plus data columns");
    }
    CsvTable table;
    table.labels.assign(header.begin() + 1, header.end());
    const std::size_t cols = table.labels.size();

    std::vector<std::vector<double>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != cols + 1) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(cols + 1) + " fields, got " +
                                     std::to_string(fields.size()));
        }
        table.dates.push_back(fields[0]);
        std::vector<double> row(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = detail::parse_number(fields[j + 1], path, line_no);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");
    table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
        }
    }
    return table;
}

inline void save_csv(const CsvTable& table, const std::string& path,
                     const std::string& date_header = "date") {
    if (static_cast<Eigen::Index>(table.dates.size()) != table.values.rows() ||
        static_cast<Eigen::Index>(table.labels.size()) != table.values.cols()) {
        throw std::invalid_argument("save_csv: inconsistent table");
    }
    std::ostringstream out;
    out << date_header;
    for (const auto& l : table.labels) out << ',' << l;
    out << '\n';
    for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
        out << table.dates[r];
        for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
            out << ',' << detail::format_full(table.values(r, j));
        }
        out << '\n';
    }
    detail::atomic_write(path, out.str());
}

/// Load the returns/caps pair. Headers and dates must agree between the two
/// files; caps rows within 1% of unit mass are renormalized, anything worse
/// is rejected with its row index.
inline MarketData load_market_data(const std::string& returns_path,
                                   const std::string& caps_path) {
    CsvTable rets = load_csv(returns_path);
    CsvTable caps = load_csv(caps_path);
    if (rets.labels != caps.labels) {
        throw std::runtime_error("load_market_data: header mismatch between " + returns_path +
                                 " and " + caps_path);
    }
    if (rets.dates != caps.dates) {
        throw std::runtime_error("load_market_data: date mismatch between " + returns_path +
                                 " and " + caps_path);
    }
    MarketData data;
    data.labels = rets.labels;
    data.dates = rets.dates;
    data.returns = std::move(rets.values);
    data.caps = std::move(caps.values);
    for (Eigen::Index t = 0; t < data.caps.rows(); ++t) {
        const double sum = data.caps.row(t).sum();
        if (std::abs(sum - 1.0) > 0.01) {
            throw std::runtime_error("load_market_data: caps row " + std::to_string(t) +
                                     " sums to " + std::to_string(sum));
        }
        data.caps.row(t) /= sum;
    }
    data.validate();
    return data;
}

inline void save_market_data(const MarketData& data, const std::string& returns_path,
                             const std::string& caps_path) {
    data.validate();
    save_csv(CsvTable{data.labels, data.dates, data.returns}, returns_path);
    save_csv(CsvTable{data.labels, data.dates, data.caps}, caps_path);
}

enum class CapRule { Equal, Dirichlet };

/// Synthetic dataset: returns drawn from the model, caps either equal
/// weights or per-period flat-Dirichlet draws. Streams (seed,0) and (seed,1)
/// drive returns and caps respectively.
inline MarketData generate_synthetic(const MixtureModel& mix, int periods, CapRule rule,
                                     std::uint64_t seed) {
    if (periods < 1) throw std::invalid_argument("generate_synthetic: periods >= 1");
    const int n = mix.assets();
    MarketData data;
    RngStream returns_stream(seed, 0);
    data.returns = sample(mix, periods, returns_stream);
    data.caps.resize(periods, n);
    if (rule == CapRule::Equal) {
        data.caps.setConstant(1.0 / n);
    } else {
        RngStream cap_stream(seed, 1);
        for (int t = 0; t < periods; ++t) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                data.caps(t, j) = -std::log(cap_stream.uniform01());
                sum += data.caps(t, j);
            }
            data.caps.row(t) /= sum;
        }
    }
    data.labels.resize(n);
    data.dates.resize(periods);
    for (int j = 0; j < n; ++j) data.labels[j] = "a" + std::to_string(j + 1);
    char buf[16];
    for (int t = 0; t < periods; ++t) {
        std::snprintf(buf, sizeof(buf), "t%04d", t + 1);
        data.dates[t] = buf;
    }
    data.validate();
    return data;
}

inline constexpr const char* kModelFormatVersion = "mixcvar-model-v1";

inline void save_model(const MixtureModel& mix, const std::string& path) {
    std::ostringstream out;
    const int m = mix.components();
    const int n = mix.assets();
    out << "version " << kModelFormatVersion << '\n';
    out << "m " << m << '\n';
    out << "n " << n << '\n';
    out << "rho";
    for (int i = 0; i < m; ++i) out << ' ' << detail::format_full(mix.weights()[i]);
    out << '\n';
    for (int i = 0; i < m; ++i) {
        out << "mu[" << i << "]";
        for (int j = 0; j < n; ++j) out << ' ' << detail::format_full(mix.mean(i)[j]);
        out << '\n';
    }
    for (int i = 0; i < m; ++i) {
        out << "sigma[" << i << "]";
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) {
                out << ' ' << detail::format_full(mix.covariance(i)(r, c));
            }
        }
        out << '\n';
    }
    detail::atomic_write(path, out.str());
}

inline MixtureModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::map<std::string, std::vector<std::string>> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        std::vector<std::string> values;
        std::string tok;
        while (ls >> tok) values.push_back(tok);
        if (!entries.emplace(key, std::move(values)).second) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": duplicate key '" + key + "'");
        }
    }
    auto require = [&](const std::string& key, std::size_t count) -> const std::vector<std::string>& {
        auto it = entries.find(key);
        if (it == entries.end()) throw std::runtime_error(path + ": missing key '" + key + "'");
        if (it->second.size() != count) {
            throw std::runtime_error(path + ": key '" + key + "' expects " +
                                     std::to_string(count) + " values, has " +
                                     std::to_string(it->second.size()));
        }
        return it->second;
    };
    auto as_double = [&](const std::string& tok) {
        return detail::parse_number(tok, path, 0);
    };

    if (require("version", 1)[0] != kModelFormatVersion) {
        throw std::runtime_error(path + ": unsupported model format version");
    }
    const int m = static_cast<int>(as_double(require("m", 1)[0]));
    const int n = static_cast<int>(as_double(require("n", 1)[0]));
    if (m < 1 || n < 1) throw std::runtime_error(path + ": invalid dimensions");

    Eigen::VectorXd rho(m);
    const auto& rho_tokens = require("rho", m);
    for (int i = 0; i < m; ++i) rho[i] = as_double(rho_tokens[i]);
    std::vector<Eigen::VectorXd> mu(m, Eigen::VectorXd(n));
    std::vector<Eigen::MatrixXd> sigma(m, Eigen::MatrixXd(n, n));
    for (int i = 0; i < m; ++i) {
        const auto& mu_tokens = require("mu[" + std::to_string(i) + "]", n);
        for (int j = 0; j < n; ++j) mu[i][j] = as_double(mu_tokens[j]);
        const auto& sig_tokens = require("sigma[" + std::to_string(i) + "]", n * n);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) sigma[i](r, c) = as_double(sig_tokens[r * n + c]);
        }
    }
    return MixtureModel(rho, std::move(mu), std::move(sigma));
}

}  // namespace mixcvar
