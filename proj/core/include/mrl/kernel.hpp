#pragma once

#include "mrl/domain.hpp"

#include <Eigen/Core>

namespace mrl {

// Smoothing kernels.  Gaussian2 is the standard normal density (order 2).
// Gaussian4 is the order-4 twicing kernel (3 - u^2)/2 * phi(u): it
// integrates to one with vanishing second moment, which is what lets the
// multi-index smoother keep its bias under control.  Gaussian4 takes
// negative values in the tails, so downstream code never assumes
// nonnegative weights when it is selected.
enum class KernelKind { Gaussian2, Gaussian4 };

double kernel_eval(KernelKind kind, double u);
double kernel_deriv(KernelKind kind, double u);
int kernel_order(KernelKind kind);

// \int K(u)^2 du; closed form.  Enters the mean-residual-life variance
// plug-in once per smoothing direction.
double kernel_square_integral(KernelKind kind);

// prod_k K(u_k / h_k) / h_k
double product_kernel(KernelKind kind, const Eigen::VectorXd& u, const Eigen::VectorXd& h);

// Bandwidths for all smoothing directions.  h covers the d index
// directions; h_w is the transplant-time direction used by the joint
// transplant-group smoother (0 when the dataset has no transplant
// subjects); b is the event-time direction for hazard smoothing.
struct BandwidthConfig {
    Eigen::VectorXd h;
    double h_w = 0.0;
    double b = 0.0;
    KernelKind kernel = KernelKind::Gaussian2;
};

// Rate-driven defaults computed from the sample at the supplied index
// matrix: with d = 1 the kernel is Gaussian2 and h_k = sd_k * n^-0.26;
// with d >= 2 the kernel is Gaussian4 and h_k = sd_k * n^-0.15; in both
// cases b = sd(event times) * n^-0.2 and the w direction uses the sd of
// the observed transplant times with the index-direction exponent.  These
// exponents keep nh^{2 nu} -> 0 and nh^{d+2} b -> infinity, the rates the
// estimator's asymptotics ask for.
BandwidthConfig default_bandwidths(const Dataset& data, const IndexMatrix& beta);

} // namespace mrl
