#include "mrl/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "mrl/errors.hpp"
#include "mrl/stats.hpp"
#include "parallel.hpp"

namespace mrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lognormal(mu, 1) location parameter of the S2 post-transplant law.
double s2_mu(double v, double w) {
    const double a = 1.0 - std::numbers::sqrt2 * v;
    return 3.0 + w / 100.0 - 0.1 * a * a;
}

// Solves Phi(mu - ln u) = exp(-y) for u, stable in both tails.
double s2_post_inverse(double y, double v, double w) {
    const double mu = s2_mu(v, w);
    const double p = std::exp(-y);
    if (p <= 0.0) {
        // Beyond double range for the survival value; use the asymptotic
        // upper-tail quantile sqrt(2y).
        return std::exp(mu + std::sqrt(2.0 * y));
    }
    const double zq =
        p < 0.5 ? -norm_upper_quantile(p) : norm_upper_quantile(-std::expm1(-y));
    return std::exp(mu - zq);
}

HazardLaw s1_pre() {
    HazardLaw law;
    law.rate = [](double t, const Eigen::VectorXd& v, double) { return t * std::exp(v[0]); };
    law.cum = [](double t, const Eigen::VectorXd& v, double) {
        return 0.5 * t * t * std::exp(v[0]);
    };
    law.inv = [](double y, const Eigen::VectorXd& v, double) {
        return std::sqrt(2.0 * y * std::exp(-v[0]));
    };
    return law;
}

HazardLaw s1_post() {
    HazardLaw law;
    law.rate = [](double u, const Eigen::VectorXd& v, double w) {
        return (10.0 * std::exp(v[0] + w) + 1.0) / (u + 1.0);
    };
    law.cum = [](double u, const Eigen::VectorXd& v, double w) {
        return (10.0 * std::exp(v[0] + w) + 1.0) * std::log1p(u);
    };
    law.inv = [](double y, const Eigen::VectorXd& v, double w) {
        return std::expm1(y / (10.0 * std::exp(v[0] + w) + 1.0));
    };
    return law;
}

HazardLaw s2_pre() {
    HazardLaw law;
    law.rate = [](double t, const Eigen::VectorXd& v, double) {
        return 2.0 * t / (std::exp(v[0]) + t * t);
    };
    law.cum = [](double t, const Eigen::VectorXd& v, double) {
        return std::log1p(t * t * std::exp(-v[0]));
    };
    law.inv = [](double y, const Eigen::VectorXd& v, double) {
        return std::sqrt(std::expm1(y)) * std::exp(0.5 * v[0]);
    };
    return law;
}

HazardLaw s2_post() {
    HazardLaw law;
    law.rate = [](double u, const Eigen::VectorXd& v, double w) {
        if (u <= 0.0) return 0.0;
        const double z = std::log(u) - s2_mu(v[0], w);
        const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
        return dens / (u * norm_cdf(-z));
    };
    law.cum = [](double u, const Eigen::VectorXd& v, double w) {
        if (u <= 0.0) return 0.0;
        return -std::log(norm_cdf(s2_mu(v[0], w) - std::log(u)));
    };
    law.inv = [](double y, const Eigen::VectorXd& v, double w) {
        return s2_post_inverse(y, v[0], w);
    };
    return law;
}

double s3_scale(const Eigen::VectorXd& v) { return std::exp(v[0]) + std::exp(v[1]); }

HazardLaw s3_pre() {
    HazardLaw law;
    law.rate = [](double t, const Eigen::VectorXd& v, double) {
        return std::pow(t, 0.4) * s3_scale(v);
    };
    law.cum = [](double t, const Eigen::VectorXd& v, double) {
        return (5.0 / 7.0) * std::pow(t, 1.4) * s3_scale(v);
    };
    law.inv = [](double y, const Eigen::VectorXd& v, double) {
        return std::pow(7.0 * y / (5.0 * s3_scale(v)), 5.0 / 7.0);
    };
    return law;
}

HazardLaw s3_post() {
    HazardLaw law;
    law.rate = [](double u, const Eigen::VectorXd& v, double w) {
        return std::pow(u, 1.4) * w * s3_scale(v);
    };
    law.cum = [](double u, const Eigen::VectorXd& v, double w) {
        return (5.0 / 12.0) * std::pow(u, 2.4) * w * s3_scale(v);
    };
    law.inv = [](double y, const Eigen::VectorXd& v, double w) {
        return std::pow(12.0 * y / (5.0 * w * s3_scale(v)), 5.0 / 12.0);
    };
    return law;
}

// S4 is a Gompertz-style family: cum has no elementary inverse, so `inv`
// stays empty and sampling bisects.
HazardLaw s4_law(double scale, bool post) {
    HazardLaw law;
    law.rate = [scale, post](double t, const Eigen::VectorXd& v, double w) {
        const double arg = post ? v[0] - w / 5.0 + 10.0 : v[0];
        const double a = std::exp(std::atan(arg) + std::numbers::pi / 2.0);
        return (a * std::exp(t / scale) - 1.0) / scale;
    };
    law.cum = [scale, post](double t, const Eigen::VectorXd& v, double w) {
        const double arg = post ? v[0] - w / 5.0 + 10.0 : v[0];
        const double a = std::exp(std::atan(arg) + std::numbers::pi / 2.0);
        return a * std::expm1(t / scale) - t / scale;
    };
    return law;
}

Eigen::VectorXd study_beta_column(std::initializer_list<double> vals) {
    Eigen::VectorXd b(static_cast<int>(vals.size()));
    int i = 0;
    for (double x : vals) b[i++] = x;
    return b;
}

// Non-transplant mean residual life by quadrature on the residual scale:
// m(t) = int_0^infty exp(-(Lambda(t+x) - Lambda(t))) dx.
double quad_mrl(const HazardLaw& law, double t, const Eigen::VectorXd& v, double w) {
    const double base = law.cum(t, v, w);
    boost::math::quadrature::exp_sinh<double> integrator;
    auto f = [&](double x) { return std::exp(-(law.cum(t + x, v, w) - base)); };
    return integrator.integrate(f, 1e-8);
}

std::string study_name(StudyId id) {
    switch (id) {
        case StudyId::S1: return "S1";
        case StudyId::S2: return "S2";
        case StudyId::S3: return "S3";
        case StudyId::S4: return "S4";
        default: return "custom";
    }
}

std::string fmt_g(double x) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

}  // namespace

StudySpec study_spec(StudyId id, int n) {
    StudySpec spec;
    spec.id = id;
    switch (id) {
        case StudyId::S1: {
            spec.n = n > 0 ? n : 300;
            spec.p = 9;
            spec.d = 1;
            spec.beta0 = IndexMatrix(
                9, 1, study_beta_column({-0.6, 0.0, -0.3, -0.1, 0.0, 0.1, 0.3, -0.5}));
            spec.hazard_N = s1_pre();
            spec.hazard_T = s1_post();
            spec.w_upper = 10.0;
            spec.target_transplant_frac = 1.0 / 3.0;
            break;
        }
        case StudyId::S2: {
            spec.n = n > 0 ? n : 1000;
            spec.p = 9;
            spec.d = 1;
            spec.beta0 = IndexMatrix(
                9, 1, study_beta_column({-0.6, 0.0, -0.3, -0.1, 0.0, 0.1, 0.3, -0.5}));
            spec.hazard_N = s2_pre();
            spec.hazard_T = s2_post();
            spec.w_upper = 200.0;
            spec.target_transplant_frac = 1.0 / 3.0;
            break;
        }
        case StudyId::S3: {
            spec.n = n > 0 ? n : 2000;
            spec.p = 6;
            spec.d = 2;
            Eigen::MatrixXd lower(4, 2);
            lower << -0.65, -0.5, -0.5, 0.5, -0.25, -0.4, 0.25, 0.25;
            spec.beta0 = IndexMatrix(6, 2, lower);
            spec.hazard_N = s3_pre();
            spec.hazard_T = s3_post();
            spec.w_upper = 1.0;
            spec.target_transplant_frac = 1.0 / 3.0;
            break;
        }
        case StudyId::S4: {
            spec.n = n > 0 ? n : 2000;
            spec.p = 9;
            spec.d = 1;
            spec.beta0 = IndexMatrix(
                9, 1, study_beta_column({0.4, 1.0, -0.4, -1.5, -1.1, 1.4, -0.1, -0.7}));
            spec.hazard_N = s4_law(200.0, false);
            spec.hazard_T = s4_law(300.0, true);
            spec.w_upper_latent_max = true;
            spec.target_transplant_frac = 0.5;
            spec.target_censoring = 0.26;
            break;
        }
        case StudyId::Custom:
            spec.n = n > 0 ? n : 0;
            break;
    }
    return spec;
}

double invert_cum_hazard(const HazardLaw& law, double y, const Eigen::VectorXd& v, double w) {
    if (!(y > 0.0)) return 0.0;
    if (law.inv) return std::max(0.0, law.inv(y, v, w));
    if (!law.cum) throw DataError("hazard law has neither inverse nor cumulative form");
    double lo = 0.0, hi = 1e6;
    if (law.cum(hi, v, w) < y) return hi;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (law.cum(mid, v, w) < y)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

namespace {

// Everything after the latent pre-transplant draw: eligibility coin,
// transplant time, post-transplant event time, censoring.  Keeping this in
// one place pins the per-subject RNG consumption order, which fixed-seed
// tests rely on.
Subject finish_subject(const StudySpec& spec, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& v, double latent_tn, double w_bound, Rng& rng) {
    Subject s;
    s.x = x;
    const bool eligible =
        spec.target_transplant_frac > 0.0 && rng.bernoulli(spec.target_transplant_frac);
    double t_event;
    double w_offer = 0.0;
    if (eligible) {
        w_offer = w_bound * rng.uniform01();
        const double e_post = rng.exponential();
        t_event = w_offer + invert_cum_hazard(spec.hazard_T, e_post, v, w_offer);
    } else {
        t_event = latent_tn;
    }
    const double c = spec.c_upper * rng.uniform01();
    s.z = std::min(t_event, c);
    s.event = t_event <= c;
    if (eligible && w_offer <= s.z) s.w = w_offer;
    return s;
}

Eigen::VectorXd draw_covariates(int p, Rng& rng) {
    Eigen::VectorXd x(p);
    for (int j = 0; j < p; ++j) x[j] = rng.normal();
    return x;
}

void check_sampleable(const StudySpec& spec) {
    if (spec.p < 1 || spec.d < 1 || spec.d > spec.p)
        throw DataError("study spec needs 1 <= d <= p");
    if (spec.beta0.p() != spec.p || spec.beta0.d() != spec.d)
        throw DataError("study spec beta0 shape does not match p, d");
    if (!spec.hazard_N.inv && !spec.hazard_N.cum)
        throw DataError("study spec lacks a pre-transplant hazard");
    if (spec.target_transplant_frac > 0.0 && !spec.hazard_T.inv && !spec.hazard_T.cum)
        throw DataError("study spec lacks a post-transplant hazard");
    if (spec.target_transplant_frac > 0.0 && !spec.w_upper_latent_max && spec.w_upper <= 0.0)
        throw DataError("transplant offer bound must be positive");
}

}  // namespace

Subject sample_subject(const StudySpec& spec, Rng& rng) {
    if (spec.w_upper_latent_max)
        throw DataError(
            "transplant offer bound depends on the whole replicate; use sample_dataset");
    check_sampleable(spec);
    const Eigen::VectorXd x = draw_covariates(spec.p, rng);
    const Eigen::VectorXd v = spec.beta0.full().transpose() * x;
    const double latent_tn = invert_cum_hazard(spec.hazard_N, rng.exponential(), v, 0.0);
    return finish_subject(spec, x, v, latent_tn, spec.w_upper, rng);
}

Dataset sample_dataset(const StudySpec& spec, Rng& rng) {
    check_sampleable(spec);
    std::vector<Subject> subjects;
    subjects.reserve(spec.n);
    if (!spec.w_upper_latent_max) {
        for (int i = 0; i < spec.n; ++i) subjects.push_back(sample_subject(spec, rng));
    } else {
        // The offer bound is the largest latent pre-transplant lifetime of
        // the replicate, so latent draws come first for everyone.
        std::vector<Eigen::VectorXd> xs(spec.n), vs(spec.n);
        std::vector<double> latent(spec.n);
        double bound = 0.0;
        for (int i = 0; i < spec.n; ++i) {
            xs[i] = draw_covariates(spec.p, rng);
            vs[i] = spec.beta0.full().transpose() * xs[i];
            latent[i] = invert_cum_hazard(spec.hazard_N, rng.exponential(), vs[i], 0.0);
            bound = std::max(bound, latent[i]);
        }
        for (int i = 0; i < spec.n; ++i)
            subjects.push_back(finish_subject(spec, xs[i], vs[i], latent[i], bound, rng));
    }
    std::optional<double> tau;
    if (spec.tau > 0.0) tau = spec.tau;
    return make_dataset(std::move(subjects), tau);
}

double calibrate_censoring(const StudySpec& spec, double target, Rng& rng) {
    if (target <= 0.0) return kInf;
    if (target >= 0.9) throw DataError("censoring target must be below 0.9");
    StudySpec pilot_spec = spec;
    pilot_spec.c_upper = kInf;
    constexpr int kPilot = 50000;
    std::vector<double> times;
    times.reserve(kPilot + pilot_spec.n);
    while (static_cast<int>(times.size()) < kPilot) {
        const Dataset ds = sample_dataset(pilot_spec, rng);
        for (const auto& s : ds.subjects) times.push_back(s.z);
    }
    times.resize(kPilot);
    std::vector<double> unif(kPilot);
    for (auto& u : unif) u = rng.uniform01();

    // Censoring rate under C ~ U(0, c), reusing one fixed uniform sample so
    // the rate is monotone decreasing in c and bisection is exact.
    auto rate = [&](double c) {
        int cens = 0;
        for (int i = 0; i < kPilot; ++i)
            if (c * unif[i] < times[i]) ++cens;
        return static_cast<double>(cens) / kPilot;
    };

    double hi = *std::max_element(times.begin(), times.end());
    if (hi <= 0.0) hi = 1.0;
    int doublings = 0;
    while (rate(hi) > target) {
        hi *= 2.0;
        if (++doublings > 80) throw DataError("censoring target unreachable");
    }
    double lo = 0.0;
    double best = hi, best_err = std::abs(rate(hi) - target);
    for (int it = 0; it < 100 && best_err > 0.01; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r = rate(mid);
        if (std::abs(r - target) < best_err) {
            best = mid;
            best_err = std::abs(r - target);
        }
        if (r > target)
            lo = mid;
        else
            hi = mid;
    }
    if (best_err > 0.01) throw DataError("censoring calibration did not reach the target");
    return best;
}

double truth_mrl(const StudySpec& spec, Group group, double t, const Eigen::VectorXd& v,
                 double w) {
    const bool pre = group == Group::NonTransplant;
    switch (spec.id) {
        case StudyId::S1: {
            if (pre) {
                const double ev = std::exp(0.5 * v[0]);
                return std::sqrt(2.0 * std::numbers::pi) / ev * scaled_norm_tail(t * ev);
            }
            return (t + 1.0) / (10.0 * std::exp(v[0] + w));
        }
        case StudyId::S2: {
            if (pre) {
                const double ehalf = std::exp(0.5 * v[0]);
                const double r = t / ehalf;
                return (1.0 + r * r) * ehalf * (std::numbers::pi / 2.0 - std::atan(r));
            }
            const double mu = s2_mu(v[0], w);
            const double surv_t = norm_cdf(mu - (t > 0.0 ? std::log(t) : -kInf));
            boost::math::quadrature::exp_sinh<double> integrator;
            auto f = [&](double x) { return norm_cdf(mu - std::log(t + x)); };
            return integrator.integrate(f, 1e-8) / surv_t;
        }
        case StudyId::S3: {
            if (!pre && w <= 0.0)
                throw DataError("study 3 post-transplant law needs w > 0");
            return quad_mrl(pre ? spec.hazard_N : spec.hazard_T, t, v, w);
        }
        case StudyId::S4: {
            if (pre)
                return 200.0 *
                       std::exp(-t / 200.0 - std::atan(v[0]) - std::numbers::pi / 2.0);
            return 300.0 * std::exp(-t / 300.0 - std::atan(v[0] - w / 5.0 + 10.0) -
                                    std::numbers::pi / 2.0);
        }
        default:
            throw EstimationError("no closed-form truth for a custom study");
    }
}

McSummary run_monte_carlo(const StudySpec& spec0, int n_rep, double censor_target,
                          const FitConfig& cfg0, std::uint64_t seed) {
    if (n_rep < 1) throw DataError("need at least one replicate");
    StudySpec spec = spec0;
    spec.target_censoring = censor_target;
    if (censor_target > 0.0) {
        // Calibration gets its own stream, far from the replicate indices.
        Rng cal = Rng::stream(seed, 0x100000000ull);
        spec.c_upper = calibrate_censoring(spec, censor_target, cal);
    } else {
        spec.c_upper = kInf;
    }

    FitConfig cfg = cfg0;
    cfg.d = spec.d;
    const int q = (spec.p - spec.d) * spec.d;
    const Eigen::VectorXd truth = spec.beta0.vecl();

    struct RepResult {
        bool ok = false;
        Eigen::VectorXd est;
        Eigen::VectorXd se;
    };
    std::vector<RepResult> results(n_rep);
    parallel_for(n_rep, [&](int rep) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(rep));
        FitConfig cfg_rep = cfg;
        cfg_rep.seed = mix_seed(seed, static_cast<std::uint64_t>(rep));
        try {
            const Dataset ds = sample_dataset(spec, rng);
            const FitResult fit = solve_beta(ds, cfg_rep);
            RepResult r;
            r.est = fit.beta_hat.vecl();
            r.se = fit.cov_efficient.diagonal().cwiseMax(0.0).cwiseSqrt();
            r.ok = true;
            results[rep] = std::move(r);
        } catch (const NonConvergence&) {
        } catch (const EstimationError&) {
        } catch (const DataError&) {
        }
    });

    McSummary out;
    out.study = spec.id;
    out.n = spec.n;
    out.reps_requested = n_rep;
    out.censor_target = censor_target;
    out.c_upper = spec.c_upper;
    out.seed = seed;

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd sum_se = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd cover = Eigen::VectorXd::Zero(q);
    int used = 0;
    for (const auto& r : results) {
        if (!r.ok) continue;
        ++used;
        sum += r.est;
        sumsq += r.est.cwiseProduct(r.est);
        sum_se += r.se;
        for (int j = 0; j < q; ++j)
            if (std::abs(r.est[j] - truth[j]) <= 1.96 * r.se[j]) cover[j] += 1.0;
    }
    out.reps_used = used;
    out.failures = n_rep - used;
    out.flagged = out.failures > 0.05 * n_rep;

    out.coefs.resize(q);
    const int pl = spec.p - spec.d;
    for (int k = 0; k < spec.d; ++k) {
        for (int l = 0; l < pl; ++l) {
            const int j = k * pl + l;
            McCoef& c = out.coefs[j];
            if (spec.d == 1)
                c.name = "beta_" + std::to_string(l + 2);
            else
                c.name = "beta_" + std::to_string(spec.d + l + 1) + std::to_string(k + 1);
            c.truth = truth[j];
            if (used > 0) {
                c.mean_est = sum[j] / used;
                c.mean_se = sum_se[j] / used;
                c.coverage = cover[j] / used;
            }
            if (used > 1) {
                const double var = (sumsq[j] - used * c.mean_est * c.mean_est) / (used - 1);
                c.emp_sd = std::sqrt(std::max(0.0, var));
            } else {
                c.emp_sd = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return out;
}

std::string mc_summary_csv(const McSummary& s) {
    std::string out = "# study=" + study_name(s.study) + " n=" + std::to_string(s.n) +
                      " reps=" + std::to_string(s.reps_requested) +
                      " censoring=" + fmt_g(s.censor_target) +
                      " seed=" + std::to_string(s.seed) +
                      " failures=" + std::to_string(s.failures) +
                      " flagged=" + std::to_string(s.flagged ? 1 : 0) +
                      " c_upper=" + fmt_g(s.c_upper) + "\n";
    out += "coef,truth,point_estimate,emp_sd,est_sd,cp\n";
    for (const auto& c : s.coefs) {
        out += c.name + "," + fmt_g(c.truth) + "," + fmt_g(c.mean_est) + "," +
               fmt_g(c.emp_sd) + "," + fmt_g(c.mean_se) + "," + fmt_g(c.coverage) + "\n";
    }
    return out;
}

}  // namespace mrl
