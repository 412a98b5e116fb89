#include "support/test_data.hpp"

#include <cmath>

namespace mrl::testsup {

Dataset random_dataset(Rng& rng, int n, int p, double frac_tr, double censor_frac,
                       bool with_ties) {
    std::vector<Subject> subs;
    subs.reserve(n);
    for (int i = 0; i < n; ++i) {
        Subject s;
        s.x.resize(p);
        for (int k = 0; k < p; ++k) s.x[k] = rng.normal();
        double z = rng.exponential() + 0.05;
        if (with_ties) z = std::max(0.1, std::round(z * 10.0) / 10.0);
        s.z = z;
        s.event = !rng.bernoulli(censor_frac);
        // first two subjects pin one member per group so tiny datasets never
        // degenerate; event status stays random
        const bool tr = i == 1 ? true : (i == 0 ? false : rng.bernoulli(frac_tr));
        if (tr && frac_tr > 0.0) s.w = rng.uniform(0.0, s.z);
        subs.push_back(std::move(s));
    }
    return make_dataset(std::move(subs));
}

Dataset bounded_dataset(Rng& rng, int n, int p, double frac_tr) {
    std::vector<Subject> subs;
    subs.reserve(n);
    for (int i = 0; i < n; ++i) {
        Subject s;
        s.x.resize(p);
        for (int k = 0; k < p; ++k) s.x[k] = rng.normal();
        const double u = rng.uniform01();
        s.z = std::min(0.15 + 1.5 * std::pow(-std::log(u), 1.0 / 1.6), 4.9);
        s.event = true;
        const bool tr = i == 1 ? true : (i == 0 ? false : rng.bernoulli(frac_tr));
        if (tr && frac_tr > 0.0) s.w = rng.uniform(0.0, s.z);
        subs.push_back(std::move(s));
    }
    return make_dataset(std::move(subs), 5.0);
}

BandwidthConfig test_bandwidths(int d, KernelKind kind, double h, double h_w, double b) {
    BandwidthConfig bw;
    bw.h = Eigen::VectorXd::Constant(d, h);
    bw.h_w = h_w;
    bw.b = b;
    bw.kernel = kind;
    return bw;
}

IndexMatrix test_beta(int p, int d) {
    Eigen::MatrixXd lower(p - d, d);
    for (int c = 0; c < d; ++c)
        for (int r = 0; r < p - d; ++r)
            lower(r, c) = std::sin(1.0 + r + 3.0 * c) * 0.8;
    return IndexMatrix(p, d, lower);
}

StudySpec two_param_study(int n) {
    StudySpec s;
    s.id = StudyId::Custom;
    s.n = n;
    s.p = 3;
    s.d = 1;
    Eigen::MatrixXd lower(2, 1);
    lower << -0.6, 0.3;
    s.beta0 = IndexMatrix(3, 1, lower);
    s.hazard_N.rate = [](double t, const Eigen::VectorXd& v, double) {
        return t * std::exp(v[0]);
    };
    s.hazard_N.cum = [](double t, const Eigen::VectorXd& v, double) {
        return 0.5 * t * t * std::exp(v[0]);
    };
    s.hazard_N.inv = [](double y, const Eigen::VectorXd& v, double) {
        return std::sqrt(2.0 * y * std::exp(-v[0]));
    };
    s.hazard_T.rate = [](double, const Eigen::VectorXd& v, double) {
        return std::exp(v[0]);
    };
    s.hazard_T.cum = [](double u, const Eigen::VectorXd& v, double) {
        return u * std::exp(v[0]);
    };
    s.hazard_T.inv = [](double y, const Eigen::VectorXd& v, double) {
        return y * std::exp(-v[0]);
    };
    s.w_upper = 2.0;
    s.target_transplant_frac = 1.0 / 3.0;
    return s;
}

} // namespace mrl::testsup
