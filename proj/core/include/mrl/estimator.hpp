#pragma once

#include "mrl/domain.hpp"
#include "mrl/kernel.hpp"
#include "mrl/smoother.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace mrl {

struct FitConfig {
    int d = 1;
    std::optional<IndexMatrix> init;      // default: sliced-inverse-regression pilot
    double tol = 1e-6;                    // residual 2-norm tolerance
    int max_iter = 200;
    std::optional<BandwidthConfig> bw;    // absent = data-driven defaults
    bool refresh_bw = false;              // recompute bandwidths each iteration
    std::uint64_t seed = 0;               // multi-start perturbation stream
    int starts = 5;                       // initial point plus starts-1 perturbations
    // The estimating equation can have spurious far roots on small samples,
    // some with smaller residuals than the root near the truth.  The search
    // is therefore confined to a ball of this radius (free-parameter 2-norm)
    // around the starting value: iterates are clamped to it and a root
    // outside it is discarded as inconsistent with the pilot.  Nonpositive
    // disables the restriction.
    double root_radius = 1.0;
};

struct FitResult {
    IndexMatrix beta_hat{1, 1};
    Eigen::MatrixXd cov_sandwich;         // (p-d)d square
    Eigen::MatrixXd cov_efficient;
    double score_norm = 0.0;
    int iterations = 0;
    int trimmed_terms = 0;                // score terms skipped at the solution
    bool converged = false;
    BandwidthConfig bw;                   // bandwidths actually used
    int n = 0;
    double tau = 0.0;
};

struct ScoreDiagnostics {
    int used = 0;      // event subjects contributing
    int skipped = 0;   // event subjects dropped by trimming
};

// Efficient estimating equation: (1/n) sum_i Delta_i g_hat_i (x) [X_{l,i} -
// Ehat{X_l Y}/Ehat{Y}], flattened in the column-major free-parameter order.
// g_hat is the residual-life ratio m12/(m1+1) - m2/m from the subject's own
// group smoother; subjects with a degenerate denominator are skipped and
// counted.
Eigen::VectorXd efficient_score(const IndexMatrix& beta, const Dataset& data,
                                const BandwidthConfig& bw,
                                ScoreDiagnostics* diag = nullptr);

// Arbitrary weight in place of g_hat, evaluated at the subject's absolute
// observation time.  Weights with any non-finite component mark the subject
// as trimmed.
using ScoreWeight = std::function<Eigen::VectorXd(
    double z, const Eigen::VectorXd& v, Group group, std::optional<double> w)>;

Eigen::VectorXd general_score(const IndexMatrix& beta, const Dataset& data,
                              const BandwidthConfig& bw, const ScoreWeight& g,
                              ScoreDiagnostics* diag = nullptr);

// The two shipped weight choices: the efficient residual-life ratio and the
// hazard-gradient ratio lambda2/lambda (equal wherever both are defined).
// They smooth under the same index matrix the score is evaluated at.
ScoreWeight make_efficient_weight(const IndexMatrix& beta, const Dataset& data,
                                  const BandwidthConfig& bw);
ScoreWeight make_hazard_ratio_weight(const IndexMatrix& beta, const Dataset& data,
                                     const BandwidthConfig& bw);

// Damped quasi-Newton root search on the efficient score with central
// difference Jacobians, a derivative-free fallback on stagnation, and
// multi-start.  Throws NonConvergence when no start drives the residual
// below cfg.tol.
FitResult solve_beta(const Dataset& data, const FitConfig& cfg);

// A^{-1} B A^{-T} / n with A the numerical Jacobian of the mean score and B
// the empirical second moment of per-subject contributions.
Eigen::MatrixXd covariance_sandwich(const IndexMatrix& beta_hat, const Dataset& data,
                                    const BandwidthConfig& bw);

// Inverse of Sigma_eff = (1/n) sum_i Delta_i (lambda2/lambda (x) resid)^{x2},
// divided by n.
Eigen::MatrixXd covariance_efficient(const IndexMatrix& beta_hat, const Dataset& data,
                                     const BandwidthConfig& bw);

// Variance of the residual-life estimate at one point: the plug-in sigma^2
// scaled by 1/(n * product of smoothing bandwidths).  t is absolute time.
double mrl_variance(Group group, double t, const Eigen::VectorXd& v,
                    std::optional<double> w, const IndexMatrix& beta_hat,
                    const Dataset& data, const BandwidthConfig& bw);

struct Improvement {
    double value = 0.0;   // m_T - m_N
    double se = 0.0;
    double m_t = 0.0;
    double m_n = 0.0;
    double se_t = 0.0;
    double se_n = 0.0;
};

// Expected residual-life gain from a transplant at time w for a subject with
// covariates x, evaluated at absolute time t (w <= t <= tau).  The group
// estimates use disjoint subjects, so se treats them as independent.
Improvement improvement(double t, const Eigen::VectorXd& x, double w,
                        const FitResult& fit, const Dataset& data,
                        const BandwidthConfig& bw);

// FitResult round trip for the CLI: beta both as a row-major full matrix and
// in free-parameter order, covariances, diagnostics, bandwidths, tau, n.
std::string fit_result_json(const FitResult& fit);
FitResult fit_result_from_json(const std::string& text);

} // namespace mrl
