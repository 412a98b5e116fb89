#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "mrl/estimator.hpp"
#include "mrl/simgen.hpp"
#include "mrl/smoother.hpp"
#include "support/test_data.hpp"

using namespace mrl;
using namespace mrl::testsup;

TEST_CASE("null weight gives an exactly zero score") {
    Rng rng(41);
    Dataset data = random_dataset(rng, 60, 4, 0.4);
    const IndexMatrix beta = test_beta(4, 1);
    const BandwidthConfig bw = test_bandwidths(1, KernelKind::Gaussian2);
    ScoreWeight zero = [](double, const Eigen::VectorXd&, Group,
                          std::optional<double>) {
        return Eigen::VectorXd::Zero(1).eval();
    };
    const Eigen::VectorXd s = general_score(beta, data, bw, zero);
    REQUIRE(s.size() == 3);
    for (int k = 0; k < s.size(); ++k) CHECK(s[k] == 0.0);
}

TEST_CASE("efficient weight routed through general_score matches efficient_score") {
    Rng rng(53);
    Dataset data = random_dataset(rng, 70, 4, 0.35, 0.2);
    const IndexMatrix beta = test_beta(4, 1);
    const BandwidthConfig bw = test_bandwidths(1, KernelKind::Gaussian2);

    ScoreDiagnostics d1, d2;
    const Eigen::VectorXd a = efficient_score(beta, data, bw, &d1);
    const Eigen::VectorXd b =
        general_score(beta, data, bw, make_efficient_weight(beta, data, bw), &d2);
    REQUIRE(a.size() == b.size());
    for (int k = 0; k < a.size(); ++k)
        CHECK(std::abs(a[k] - b[k]) <= 1e-12 * std::max(1.0, std::abs(a[k])));
    CHECK(d1.used == d2.used);
    CHECK(d1.skipped == d2.skipped);
}

TEST_CASE("constant covariates in the free block zero the score") {
    // The score bracket is X_l minus a kernel-weighted at-risk average of
    // X_l, so a constant column cancels up to summation round-off.
    Rng rng(67);
    std::vector<Subject> subs;
    for (int i = 0; i < 50; ++i) {
        Subject s;
        s.x.resize(3);
        s.x << rng.normal(), 2.5, -1.25;
        s.z = rng.exponential() + 0.05;
        s.event = !rng.bernoulli(0.2);
        if (i % 3 == 1) s.w = rng.uniform(0.0, s.z);
        subs.push_back(std::move(s));
    }
    Dataset data = make_dataset(std::move(subs));
    const BandwidthConfig bw = test_bandwidths(1, KernelKind::Gaussian2);
    for (double scale : {0.5, 1.0}) {
        Eigen::MatrixXd lower(2, 1);
        lower << -0.4 * scale, 0.7 * scale;
        const Eigen::VectorXd s = efficient_score(IndexMatrix(3, 1, lower), data, bw);
        REQUIRE(s.size() == 2);
        CHECK(s.cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("no free parameters returns immediately") {
    Rng rng(71);
    Dataset data = random_dataset(rng, 30, 1, 0.3);
    FitConfig cfg;
    cfg.d = 1;
    const FitResult fr = solve_beta(data, cfg);
    CHECK(fr.converged);
    CHECK(fr.iterations == 0);
    CHECK(fr.beta_hat.p() == 1);
    CHECK(fr.beta_hat.full()(0, 0) == 1.0);
    CHECK(fr.cov_sandwich.size() == 0);
    CHECK(fr.cov_efficient.size() == 0);
}

TEST_CASE("clean two-parameter fit honors the root contract") {
    StudySpec spec = two_param_study(500);
    Rng rng = Rng::stream(301, 0);
    Dataset data = sample_dataset(spec, rng);

    FitConfig cfg;
    cfg.d = 1;
    cfg.tol = 1e-9;
    cfg.starts = 3;
    cfg.seed = 77;
    const FitResult fr = solve_beta(data, cfg);
    REQUIRE(fr.converged);
    CHECK(fr.score_norm <= cfg.tol);

    // the reported norm is the score at the reported point
    const Eigen::VectorXd s = efficient_score(fr.beta_hat, data, fr.bw);
    CHECK(s.norm() <= 2.0 * cfg.tol);

    // estimate lands near the generating value at this sample size
    const Eigen::VectorXd th = fr.beta_hat.vecl();
    CHECK((th - spec.beta0.vecl()).norm() < 0.35);

    // covariance invariants
    for (const Eigen::MatrixXd& cov : {fr.cov_sandwich, fr.cov_efficient}) {
        REQUIRE(cov.rows() == 2);
        REQUIRE(cov.cols() == 2);
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * std::max(1.0, es.eigenvalues().maxCoeff()));
    }
    CHECK(fr.n == 500);
    CHECK(fr.tau == data.tau);
}

TEST_CASE("subject order does not move the estimate") {
    StudySpec spec = two_param_study(500);
    Rng rng = Rng::stream(301, 0);
    Dataset data = sample_dataset(spec, rng);

    std::vector<Subject> shuffled = data.subjects;
    std::mt19937_64 mt(99);
    std::shuffle(shuffled.begin(), shuffled.end(), mt);
    Dataset data2 = make_dataset(std::move(shuffled), data.tau);

    FitConfig cfg;
    cfg.d = 1;
    cfg.tol = 1e-9;
    cfg.starts = 3;
    cfg.seed = 77;
    const FitResult a = solve_beta(data, cfg);
    const FitResult b = solve_beta(data2, cfg);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK((a.beta_hat.vecl() - b.beta_hat.vecl()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("nonconvergence carries the best residual and parameters") {
    StudySpec spec = two_param_study(200);
    Rng rng = Rng::stream(302, 0);
    Dataset data = sample_dataset(spec, rng);

    FitConfig cfg;
    cfg.d = 1;
    cfg.tol = 1e-14;  // unreachable
    cfg.max_iter = 1;
    cfg.starts = 1;
    bool threw = false;
    try {
        solve_beta(data, cfg);
    } catch (const NonConvergence& e) {
        threw = true;
        CHECK(std::isfinite(e.score_norm));
        CHECK(e.score_norm > 0.0);
        REQUIRE(e.best_vecl.size() == 2);
        CHECK(std::string(e.what()).find("residual") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("a tiny acceptance radius pins the solver to its start") {
    StudySpec spec = two_param_study(200);
    Rng rng = Rng::stream(302, 0);
    Dataset data = sample_dataset(spec, rng);

    Eigen::MatrixXd lower(2, 1);
    lower << 0.9, -0.9;  // deliberately far from the generating value
    FitConfig cfg;
    cfg.d = 1;
    cfg.init = IndexMatrix(3, 1, lower);
    cfg.tol = 1e-9;
    cfg.starts = 2;
    cfg.root_radius = 1e-6;
    try {
        const FitResult fr = solve_beta(data, cfg);
        // only acceptable if a root sits within a micro-ball of the start
        CHECK((fr.beta_hat.vecl() - cfg.init->vecl()).norm() <= 1e-6 + 1e-12);
    } catch (const NonConvergence& e) {
        REQUIRE(e.best_vecl.size() == 2);
        const Eigen::Map<const Eigen::VectorXd> best(e.best_vecl.data(), 2);
        CHECK((best - cfg.init->vecl()).norm() <= 1e-6 + 1e-12);
    }
}

TEST_CASE("fit result json round trips bit for bit") {
    StudySpec spec = two_param_study(300);
    Rng rng = Rng::stream(303, 0);
    Dataset data = sample_dataset(spec, rng);
    FitConfig cfg;
    cfg.d = 1;
    cfg.tol = 1e-6;
    cfg.seed = 5;
    const FitResult fr = solve_beta(data, cfg);

    const std::string text = fit_result_json(fr);
    const FitResult back = fit_result_from_json(text);
    CHECK(back.beta_hat.p() == fr.beta_hat.p());
    CHECK(back.beta_hat.d() == fr.beta_hat.d());
    CHECK(back.beta_hat.full() == fr.beta_hat.full());
    CHECK(back.cov_sandwich == fr.cov_sandwich);
    CHECK(back.cov_efficient == fr.cov_efficient);
    CHECK(back.score_norm == fr.score_norm);
    CHECK(back.iterations == fr.iterations);
    CHECK(back.trimmed_terms == fr.trimmed_terms);
    CHECK(back.converged == fr.converged);
    CHECK(back.n == fr.n);
    CHECK(back.tau == fr.tau);
    CHECK(back.bw.h == fr.bw.h);
    CHECK(back.bw.h_w == fr.bw.h_w);
    CHECK(back.bw.b == fr.bw.b);
    CHECK(back.bw.kernel == fr.bw.kernel);
}

TEST_CASE("one contributing subject reduces the sandwich to a scalar ratio") {
    // With a single event subject the per-subject second moment is n^2 s^2 / n,
    // so the sandwich collapses to (s / a)^2 with a the scalar score slope.
    // That gives a full from-scratch check of the A^-1 B A^-T / n assembly.
    std::vector<Subject> subs;
    const double zs[] = {1.0, 0.4, 0.7, 1.3, 1.8, 2.3};
    const double z2[] = {0.3, -0.5, 0.9, -1.1, 0.2, 0.6};
    for (int i = 0; i < 6; ++i) {
        Subject s;
        s.x.resize(2);
        s.x << 0.5 * i - 1.2, z2[i];
        s.z = zs[i];
        s.event = i == 0;
        subs.push_back(std::move(s));
    }
    Dataset data = make_dataset(std::move(subs));
    const BandwidthConfig bw = test_bandwidths(1, KernelKind::Gaussian2, 1.1, 1.0, 0.6);

    Eigen::MatrixXd lower(1, 1);
    lower << -0.35;
    const IndexMatrix beta(2, 1, lower);
    const Eigen::MatrixXd cov = covariance_sandwich(beta, data, bw);
    REQUIRE(cov.rows() == 1);

    const double s0 = efficient_score(beta, data, bw)[0];
    const double step = 1e-5;
    auto at = [&](double th) {
        Eigen::MatrixXd lo(1, 1);
        lo << th;
        return efficient_score(IndexMatrix(2, 1, lo), data, bw)[0];
    };
    const double a = (at(-0.35 + step) - at(-0.35 - step)) / (2.0 * step);
    REQUIRE(std::abs(a) > 1e-12);
    const double expected = (s0 / a) * (s0 / a);
    CHECK(std::abs(cov(0, 0) - expected) <= 1e-9 * std::max(1.0, expected));
}

TEST_CASE("improvement decomposes into the two group curves") {
    Rng rng(83);
    Dataset data = random_dataset(rng, 90, 3, 0.4);
    const IndexMatrix beta = test_beta(3, 1);
    const BandwidthConfig bw = test_bandwidths(1, KernelKind::Gaussian2);

    FitResult fit;
    fit.beta_hat = beta;
    fit.n = data.n();
    fit.tau = data.tau;
    fit.bw = bw;

    const double t = 0.55 * data.tau;
    const double w = 0.3 * t;
    Eigen::VectorXd x(3);
    x << 0.4, -0.2, 0.7;
    const Improvement imp = improvement(t, x, w, fit, data, bw);

    const Eigen::VectorXd v = beta.full().transpose() * x;
    CHECK(imp.m_t == mrl::mrl(Group::Transplant, t, v, w, beta, data, bw));
    CHECK(imp.m_n == mrl::mrl(Group::NonTransplant, t, v, std::nullopt, beta, data, bw));
    CHECK(imp.value == imp.m_t - imp.m_n);
    const double vt = std::max(0.0, mrl_variance(Group::Transplant, t, v, w, beta, data, bw));
    const double vn = std::max(
        0.0, mrl_variance(Group::NonTransplant, t, v, std::nullopt, beta, data, bw));
    CHECK(std::abs(imp.se * imp.se - (vt + vn)) <= 1e-12 * std::max(1.0, vt + vn));

    CHECK_THROWS_AS(improvement(0.2, x, 0.4, fit, data, bw), EstimationError);
    Eigen::VectorXd bad(2);
    bad << 0.1, 0.2;
    CHECK_THROWS_AS(improvement(t, bad, w, fit, data, bw), DataError);
}
