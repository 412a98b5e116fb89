#pragma once

#include "mrl/domain.hpp"
#include "mrl/kernel.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace mrl {

// Kernel denominators below this are treated as empty cells: the term is
// skipped and counted, mirroring the trimming indicator in the theory.
inline constexpr double kTrimDenominator = 1e-10;

// Floor applied to smoothed hazard values before anything divides by
// them; guards the slightly negative values an order-4 kernel produces.
inline constexpr double kHazardFloor = 1e-12;

// Time-sorted view of one group's subjects.  The group clock is absolute
// follow-up time for NonTransplant subjects and elapsed time since
// transplant (z - w) for Transplant subjects; hazards and residual life
// for the transplant group live entirely on the elapsed clock.  Ties are
// ordered by (time, dataset index) and share one risk set, marked by
// risk_start.
struct GroupSample {
    Group group = Group::NonTransplant;
    std::vector<int> order;        // dataset subject indices
    Eigen::VectorXd time;          // group-clock times, ascending
    Eigen::VectorXd z_abs;         // absolute follow-up times
    std::vector<char> event;
    Eigen::VectorXd w;             // transplant times (Transplant group only)
    Eigen::MatrixXd x;             // size x p covariates, group order
    std::vector<int> risk_start;   // first position sharing this time

    int size() const { return static_cast<int>(order.size()); }
};

GroupSample make_group_sample(const Dataset& data, Group group);

// Piecewise-constant cumulative hazard: jumps at event times, flat in
// between, defined up to the horizon tau on its own clock.  Supports the
// exact segment integration the restricted mean residual life needs.
struct StepHazard {
    std::vector<double> time;
    std::vector<double> jump;
    std::vector<double> cum;   // prefix sums of jump
    double tau = 0.0;

    void rebuild();            // recompute cum from jump
    double value(double t) const;
    // \int_t^tau exp(-Lambda(s)) ds, exact over the step path
    double survival_integral(double t) const;
};

struct MrlDerivs {
    double m = 0.0;            // restricted mean residual life
    double m1 = 0.0;           // time derivative, m1 + 1 = lambda * m
    Eigen::VectorXd m2;        // index gradient
    Eigen::VectorXd m12;       // mixed time/index derivative
    double lambda = 0.0;       // smoothed hazard at the same point
    Eigen::VectorXd lambda2;   // its index gradient
};

// Everything the estimator needs about one group at one evaluation point
// (index value v, plus transplant time w for the joint transplant-group
// smoother).  One pass over the group's subjects produces kernel weights,
// Nelson-Aalen jumps and their index-gradient jumps; cumulative hazard,
// smoothed hazard, restricted mean residual life, their derivatives, and
// the variance plug-in all read off those knots.
class SmoothedCurves {
public:
    // vg holds the group-ordered index values (size x d).  horizon is the
    // integration limit on the group clock: tau for the non-transplant
    // group, tau - w for the transplant group.
    SmoothedCurves(const GroupSample& g, const Eigen::MatrixXd& vg,
                   const Eigen::VectorXd& v, double w,
                   const BandwidthConfig& bw, double horizon);

    double cum_hazard(double t) const;
    Eigen::VectorXd cum_hazard_grad(double t) const;
    double hazard(double t) const;
    Eigen::VectorXd hazard_grad(double t) const;

    // e^{Lambda(t)} \int_t^horizon e^{-Lambda(s)} ds; 0 at t = horizon.
    double mrl(double t) const;
    MrlDerivs mrl_derivs(double t) const;

    // Asymptotic variance plug-in for the residual life at t; divide by
    // n * (product of smoothing bandwidths) to variance-scale it.
    double sigma2(double t, int n_total) const;

    StepHazard step() const;

    int trimmed() const { return trimmed_; }
    double horizon() const { return horizon_; }
    int knots() const { return static_cast<int>(ktime_.size()); }
    // kernel weights per group-ordered subject, for reuse by the score
    const Eigen::ArrayXd& weights() const { return wgt_; }

private:
    void check_time(double t) const;
    // index a of the first knot with time > t
    int upper_knot(double t) const;

    const GroupSample* g_;
    int d_ = 0;
    bool joint_w_ = false;
    double horizon_ = 0.0;
    KernelKind kind_ = KernelKind::Gaussian2;
    double b_ = 0.0;
    double hprod_ = 1.0;       // product of index(+w) bandwidths
    int trimmed_ = 0;

    Eigen::ArrayXd wgt_;       // kernel weight per subject (group order)
    Eigen::ArrayXXd gwgt_;     // size x d kernel gradient weights

    // knot arrays (kept events, time ascending)
    std::vector<double> ktime_;
    std::vector<double> dl_;       // Lambda jumps
    Eigen::MatrixXd gj_;           // d x K gradient jumps
    std::vector<double> cuml_;     // prefix sums of dl_
    Eigen::MatrixXd cumg_;         // d x K prefix sums of gj_
    Eigen::ArrayXd suffw_;         // at-risk weight suffix sums, size+1
};

// One-shot variants of the smoothing operations.  They rebuild the group
// view per call, which is fine for interactive use and tests; the fitting
// loop uses SmoothedCurves directly with shared group views.

// Kernel-weighted at-risk fraction E{Y_i(t) | .} among subject i's group:
// sum_j K(.) 1{z_j >= t} / sum_j K(.), smoothing over the index (and,
// for transplanted subjects, jointly over transplant times).
double cond_at_risk(double t, int i, const IndexMatrix& beta, const Dataset& data,
                    const BandwidthConfig& bw);

// Same weights applied to the free (lower-block) covariates; returns the
// length p-d numerator ratio E{X_l Y_i(t) | .} / normalization.
Eigen::VectorXd cond_at_risk_xl(double t, int i, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw);

// t is on the group clock (elapsed since transplant for Group::Transplant).
double cum_hazard(Group group, double t, const Eigen::VectorXd& v,
                  std::optional<double> w, const IndexMatrix& beta,
                  const Dataset& data, const BandwidthConfig& bw);
StepHazard cum_hazard_path(Group group, const Eigen::VectorXd& v,
                           std::optional<double> w, const IndexMatrix& beta,
                           const Dataset& data, const BandwidthConfig& bw);
Eigen::VectorXd cum_hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                                std::optional<double> w, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw);
double hazard(Group group, double t, const Eigen::VectorXd& v,
              std::optional<double> w, const IndexMatrix& beta,
              const Dataset& data, const BandwidthConfig& bw);
Eigen::VectorXd hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                            std::optional<double> w, const IndexMatrix& beta,
                            const Dataset& data, const BandwidthConfig& bw);

// Absolute-time mean residual life: for the transplant group t >= w is
// required and the estimate is computed at elapsed time t - w with
// integration horizon tau - w, so it hits 0 exactly at t = tau for both
// groups.
double mrl(Group group, double t, const Eigen::VectorXd& v,
           std::optional<double> w, const IndexMatrix& beta,
           const Dataset& data, const BandwidthConfig& bw);
MrlDerivs mrl_derivs(Group group, double t, const Eigen::VectorXd& v,
                     std::optional<double> w, const IndexMatrix& beta,
                     const Dataset& data, const BandwidthConfig& bw);

} // namespace mrl
