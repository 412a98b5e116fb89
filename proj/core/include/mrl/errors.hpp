#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mrl {

// Raised for malformed input data: bad CSV rows, inconsistent dimensions,
// degenerate samples.  The CLI maps this to exit code 4.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for invalid estimation requests: out-of-domain evaluation points,
// trimmed-away cells, singular covariance inversions.
class EstimationError : public std::runtime_error {
public:
    explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when the solver exhausts its budget without driving the score
// below tolerance.  The CLI maps this to exit code 3.
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& msg, double residual,
                   std::vector<double> best = {})
        : std::runtime_error(msg), score_norm(residual), best_vecl(std::move(best)) {}
    double score_norm;
    std::vector<double> best_vecl;   // best free parameters seen, vecl order
};

} // namespace mrl
