#include "mrl/kernel.hpp"

#include <cmath>

namespace mrl {

namespace {
const double inv_sqrt_2pi = 0.3989422804014326779;

double phi(double u) { return inv_sqrt_2pi * std::exp(-0.5 * u * u); }
} // namespace

double kernel_eval(KernelKind kind, double u) {
    switch (kind) {
        case KernelKind::Gaussian2: return phi(u);
        case KernelKind::Gaussian4: return 0.5 * (3.0 - u * u) * phi(u);
    }
    return 0.0;
}

double kernel_deriv(KernelKind kind, double u) {
    switch (kind) {
        case KernelKind::Gaussian2: return -u * phi(u);
        case KernelKind::Gaussian4: return -0.5 * u * (5.0 - u * u) * phi(u);
    }
    return 0.0;
}

int kernel_order(KernelKind kind) {
    return kind == KernelKind::Gaussian2 ? 2 : 4;
}

double kernel_square_integral(KernelKind kind) {
    // Gaussian2: 1/(2 sqrt(pi)).  Gaussian4: with U ~ N(0, 1/2),
    // int K4^2 = E[(3-U^2)^2] / (8 sqrt(pi)) = 6.75 / (8 sqrt(pi)).
    const double inv_sqrt_pi = 0.5641895835477562869;
    switch (kind) {
        case KernelKind::Gaussian2: return 0.5 * inv_sqrt_pi;
        case KernelKind::Gaussian4: return 6.75 / 8.0 * inv_sqrt_pi;
    }
    return 0.0;
}

double product_kernel(KernelKind kind, const Eigen::VectorXd& u, const Eigen::VectorXd& h) {
    if (u.size() != h.size()) throw DataError("product_kernel: dimension mismatch");
    double out = 1.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        if (!(h[k] > 0.0)) throw DataError("product_kernel: bandwidths must be positive");
        out *= kernel_eval(kind, u[k] / h[k]) / h[k];
    }
    return out;
}

BandwidthConfig default_bandwidths(const Dataset& data, const IndexMatrix& beta) {
    const int n = data.n();
    const int d = beta.d();

    auto sample_sd = [](const std::vector<double>& v) {
        const double n_ = static_cast<double>(v.size());
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= n_;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::sqrt(ss / (n_ - 1.0));
    };

    BandwidthConfig bw;
    bw.kernel = d == 1 ? KernelKind::Gaussian2 : KernelKind::Gaussian4;
    const double a = d == 1 ? 0.26 : 0.15;
    const double index_rate = std::pow(static_cast<double>(n), -a);

    const Eigen::MatrixXd v = index_values(beta, data);
    bw.h.resize(d);
    for (int k = 0; k < d; ++k) {
        std::vector<double> col(v.col(k).data(), v.col(k).data() + n);
        const double sd = sample_sd(col);
        if (!(sd > 0.0))
            throw DataError("degenerate index direction " + std::to_string(k + 1) +
                            ": zero variance");
        bw.h[k] = sd * index_rate;
    }

    std::vector<double> event_times;
    for (const Subject& s : data.subjects)
        if (s.event) event_times.push_back(s.z);
    if (event_times.size() < 2) {
        // no usable event spread; fall back to all observation times
        event_times.clear();
        for (const Subject& s : data.subjects) event_times.push_back(s.z);
    }
    const double sd_t = sample_sd(event_times);
    if (!(sd_t > 0.0)) throw DataError("degenerate event-time direction: zero variance");
    bw.b = sd_t * std::pow(static_cast<double>(n), -0.2);

    std::vector<double> w_times;
    for (const Subject& s : data.subjects)
        if (s.w) w_times.push_back(*s.w);
    if (!w_times.empty()) {
        if (w_times.size() < 2)
            throw DataError("degenerate transplant-time direction: need at least 2 transplants");
        const double sd_w = sample_sd(w_times);
        if (!(sd_w > 0.0))
            throw DataError("degenerate transplant-time direction: zero variance");
        bw.h_w = sd_w * index_rate;
    }
    return bw;
}

} // namespace mrl
