#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mrl/domain.hpp"
#include "mrl/estimator.hpp"
#include "mrl/rng.hpp"

namespace mrl {

// Built-in benchmark designs.  Custom lets callers plug their own hazard
// laws into the same sampling machinery.
enum class StudyId { S1, S2, S3, S4, Custom };

// A parametric hazard law with enough structure to sample from it exactly.
// All three callables take (time_on_group_clock, index_value_vector, w);
// the pre-transplant law ignores w.  `inv` solves cum(t) = y for t; laws
// without a closed-form inverse may leave it empty and sampling falls back
// to bisection on `cum`.
struct HazardLaw {
    std::function<double(double, const Eigen::VectorXd&, double)> rate;
    std::function<double(double, const Eigen::VectorXd&, double)> cum;
    std::function<double(double, const Eigen::VectorXd&, double)> inv;
};

struct StudySpec {
    StudyId id = StudyId::Custom;
    int n = 0;
    int p = 0;
    int d = 1;
    IndexMatrix beta0{1, 1};
    HazardLaw hazard_N;
    HazardLaw hazard_T;
    // Transplant offer times are U(0, w_upper).  When w_upper_latent_max is
    // set the upper bound is instead the max latent pre-transplant lifetime
    // of the replicate, so sampling needs the whole dataset at once.
    double w_upper = 0.0;
    bool w_upper_latent_max = false;
    double target_transplant_frac = 0.0;
    double target_censoring = 0.0;
    // Censoring is U(0, c_upper); +inf disables censoring entirely.
    double c_upper = std::numeric_limits<double>::infinity();
    double tau = 0.0;
};

// Preset replicating one of the built-in designs.  n <= 0 keeps the
// design's default sample size.
StudySpec study_spec(StudyId id, int n = 0);

// Solves cum(t, v, w) = y for t >= 0.  Uses the closed-form inverse when
// the law has one, otherwise bisects on [0, 1e6].
double invert_cum_hazard(const HazardLaw& law, double y, const Eigen::VectorXd& v, double w);

// Draws one subject.  Designs whose transplant-offer bound depends on the
// whole replicate (S4) cannot be sampled subject-by-subject and throw
// DataError here; use sample_dataset.
Subject sample_subject(const StudySpec& spec, Rng& rng);

// Draws a full replicate of spec.n subjects and tags it with spec.tau.
Dataset sample_dataset(const StudySpec& spec, Rng& rng);

// Finds c_upper such that U(0, c_upper) censoring hits the target rate
// within +-0.01, using a pilot sample of latent event times.  target 0
// returns +inf; targets >= 0.9 are rejected.
double calibrate_censoring(const StudySpec& spec, double target, Rng& rng);

// True mean residual life under the study's data-generating law.  `group`
// picks the hazard; t is on the group clock (time since transplant for the
// post-transplant law).  Custom specs have no registered truth and throw.
double truth_mrl(const StudySpec& spec, Group group, double t, const Eigen::VectorXd& v,
                 double w);

struct McCoef {
    std::string name;
    double truth = 0.0;
    double mean_est = 0.0;
    double emp_sd = 0.0;
    double mean_se = 0.0;
    double coverage = 0.0;
};

struct McSummary {
    StudyId study = StudyId::Custom;
    int n = 0;
    int reps_requested = 0;
    int reps_used = 0;
    int failures = 0;
    bool flagged = false;  // more than 5% of replicates failed
    double censor_target = 0.0;
    double c_upper = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
    std::vector<McCoef> coefs;
};

// Repeated sample-then-fit experiment.  Each replicate gets its own RNG
// stream and solver seed derived from `seed`, so results do not depend on
// worker count or scheduling.  Replicates that fail to converge or throw
// are counted, not fatal.
McSummary run_monte_carlo(const StudySpec& spec, int n_rep, double censor_target,
                          const FitConfig& cfg, std::uint64_t seed);

// One row per coefficient plus a leading comment line with run metadata.
std::string mc_summary_csv(const McSummary& s);

}  // namespace mrl
