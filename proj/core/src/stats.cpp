#include "mrl/stats.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace mrl {

double norm_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double norm_quantile(double p) {
    static const boost::math::normal_distribution<double> unit_normal;
    return boost::math::quantile(unit_normal, p);
}

double norm_upper_quantile(double q) {
    static const boost::math::normal_distribution<double> unit_normal;
    return boost::math::quantile(boost::math::complement(unit_normal, q));
}

double scaled_norm_tail(double x) {
    if (x < 8.0) {
        return std::exp(0.5 * x * x) * norm_cdf(-x);
    }
    // Mills-ratio asymptotic series; relative error < 1e-8 for x >= 8.
    const double x2 = x * x;
    double term = 1.0, series = 1.0, sign = -1.0, odd = 1.0;
    for (int k = 1; k <= 6; ++k) {
        term *= odd / x2;
        series += sign * term;
        sign = -sign;
        odd += 2.0;
    }
    return series / (x * std::sqrt(2.0 * M_PI));
}

} // namespace mrl
