#pragma once

#include "mrl/domain.hpp"
#include "mrl/estimator.hpp"
#include "mrl/kernel.hpp"

#include <optional>
#include <vector>

// Plain-loop reference implementations of every smoothing and score
// operation, written directly from the defining sums with no shared code,
// no vectorization and no prefix-sum shortcuts.  Deliberately O(n^2) or
// worse; only run on tiny datasets.
namespace mrl::testoracle {

double kern(KernelKind kind, double u);
double kern_deriv(KernelKind kind, double u);
// \int K(u)^2 du by Simpson quadrature on [-12, 12]
double kern_square_integral(KernelKind kind);

double cond_at_risk(double t, int i, const IndexMatrix& beta, const Dataset& data,
                    const BandwidthConfig& bw);
Eigen::VectorXd cond_at_risk_xl(double t, int i, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw);

double cum_hazard(Group group, double t, const Eigen::VectorXd& v,
                  std::optional<double> w, const IndexMatrix& beta,
                  const Dataset& data, const BandwidthConfig& bw);
Eigen::VectorXd cum_hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                                std::optional<double> w, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw);
double hazard(Group group, double t, const Eigen::VectorXd& v, std::optional<double> w,
              const IndexMatrix& beta, const Dataset& data, const BandwidthConfig& bw);
Eigen::VectorXd hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                            std::optional<double> w, const IndexMatrix& beta,
                            const Dataset& data, const BandwidthConfig& bw);

// absolute-time t, like the production one-shot API
double mrl(Group group, double t, const Eigen::VectorXd& v, std::optional<double> w,
           const IndexMatrix& beta, const Dataset& data, const BandwidthConfig& bw);
MrlDerivs mrl_derivs(Group group, double t, const Eigen::VectorXd& v,
                     std::optional<double> w, const IndexMatrix& beta,
                     const Dataset& data, const BandwidthConfig& bw);

double mrl_variance(Group group, double t, const Eigen::VectorXd& v,
                    std::optional<double> w, const IndexMatrix& beta,
                    const Dataset& data, const BandwidthConfig& bw);

Eigen::VectorXd efficient_score(const IndexMatrix& beta, const Dataset& data,
                                const BandwidthConfig& bw);
Eigen::VectorXd hazard_ratio_score(const IndexMatrix& beta, const Dataset& data,
                                   const BandwidthConfig& bw);
Eigen::VectorXd general_score(const IndexMatrix& beta, const Dataset& data,
                              const BandwidthConfig& bw, const ScoreWeight& g);

} // namespace mrl::testoracle
