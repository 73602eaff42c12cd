#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixcvar {

/// Aligned per-period returns and percentage market capitalizations, one
/// column per asset. Caps rows are simplex weights (positive, summing to 1);
/// returns are percent per period.
struct MarketData {
    Eigen::MatrixXd returns;
    Eigen::MatrixXd caps;
    std::vector<std::string> labels;
    std::vector<std::string> dates;

    Eigen::Index periods() const { return returns.rows(); }
    Eigen::Index assets() const { return returns.cols(); }

    void validate() const {
        if (returns.rows() != caps.rows() || returns.cols() != caps.cols()) {
            throw std::invalid_argument("MarketData: returns/caps shape mismatch");
        }
        if (static_cast<Eigen::Index>(labels.size()) != returns.cols() ||
            static_cast<Eigen::Index>(dates.size()) != returns.rows()) {
            throw std::invalid_argument("MarketData: label/date count mismatch");
        }
        if (!returns.allFinite() || !caps.allFinite()) {
            throw std::invalid_argument("MarketData: non-finite entries");
        }
        for (Eigen::Index t = 0; t < caps.rows(); ++t) {
            if (caps.row(t).minCoeff() <= 0.0) {
                throw std::invalid_argument("MarketData: nonpositive cap in row " +
                                            std::to_string(t));
            }
            if (std::abs(caps.row(t).sum() - 1.0) > 1e-6) {
                throw std::invalid_argument("MarketData: caps row " + std::to_string(t) +
                                            " does not sum to 1");
            }
        }
    }
};

}  // namespace mixcvar
