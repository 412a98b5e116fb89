#pragma once

namespace mrl {

// Standard normal CDF.
double norm_cdf(double x);

// Standard normal quantile (inverse CDF), full double precision.
// p must lie strictly in (0, 1).
double norm_quantile(double p);

// Upper-tail quantile Phi^{-1}(1 - q), accurate for tiny q where 1 - q
// would round to 1.
double norm_upper_quantile(double q);

// exp(x^2/2) * Phi(-x), evaluated without overflow for large positive x.
// This is the scaled Gaussian tail that appears in closed-form mean
// residual life expressions for Rayleigh-type hazards.
double scaled_norm_tail(double x);

} // namespace mrl
