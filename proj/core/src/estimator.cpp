#include "mrl/estimator.hpp"

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"
#include "parallel.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mrl {

namespace {

const double kInf = std::numeric_limits<double>::infinity();

enum class Route { Efficient, HazardRatio, Custom };

struct GroupView {
    GroupSample gs;
    Eigen::MatrixXd vg;   // group-ordered index values
};

struct ScoreParts {
    Eigen::VectorXd mean;
    Eigen::MatrixXd contrib;   // per-subject columns, subject order
    int used = 0;
    int skipped = 0;
};

// One pass over the event subjects.  Each builds its own-group smoother at
// its own index point and the same kernel weights feed both the weight g
// and the at-risk covariate residual, so every trimming decision is shared
// between the mean score and the per-subject contributions.
ScoreParts score_parts(const IndexMatrix& beta, const Dataset& data,
                       const BandwidthConfig& bw, Route route, const ScoreWeight* g,
                       bool want_contrib) {
    const int n = data.n();
    const int d = beta.d();
    const int pl = beta.p() - d;
    const int q = pl * d;

    const Eigen::MatrixXd v_all = index_values(beta, data);
    GroupView views[2];
    for (int t = 0; t < 2; ++t) {
        GroupView& gv = views[t];
        gv.gs = make_group_sample(data, t == 0 ? Group::NonTransplant : Group::Transplant);
        gv.vg.resize(gv.gs.size(), d);
        for (int i = 0; i < gv.gs.size(); ++i) gv.vg.row(i) = v_all.row(gv.gs.order[i]);
    }

    std::vector<int> events;
    for (int i = 0; i < n; ++i)
        if (data.subjects[i].event) events.push_back(i);
    const int ne = static_cast<int>(events.size());

    Eigen::MatrixXd contrib = Eigen::MatrixXd::Zero(q, ne);
    std::vector<char> kept(ne, 0);

    parallel_for(ne, [&](int e) {
        const int i = events[e];
        const Subject& si = data.subjects[i];
        const bool tr = subject_group(si) == Group::Transplant;
        const GroupView& gv = views[tr ? 1 : 0];
        const double tg = tr ? si.z - *si.w : si.z;
        const double horizon = tr ? data.tau - *si.w : data.tau;
        const Eigen::VectorXd vi = v_all.row(i).transpose();
        const SmoothedCurves sc(gv.gs, gv.vg, vi, tr ? *si.w : 0.0, bw, horizon);

        Eigen::VectorXd gwv(d);
        if (route == Route::Efficient) {
            const MrlDerivs md = sc.mrl_derivs(tg);
            if (!(md.m > kTrimDenominator) || !(std::abs(md.m1 + 1.0) > kTrimDenominator))
                return;
            gwv = md.m12 / (md.m1 + 1.0) - md.m2 / md.m;
        } else if (route == Route::HazardRatio) {
            const double lam = sc.hazard(tg);
            if (!(lam > kHazardFloor)) return;
            gwv = sc.hazard_grad(tg) / lam;
        } else {
            gwv = (*g)(si.z, vi, tr ? Group::Transplant : Group::NonTransplant, si.w);
            if (gwv.size() != d) throw DataError("score weight returned wrong dimension");
            if (!gwv.allFinite()) return;
        }

        const Eigen::ArrayXd& wg = sc.weights();
        double den = 0.0, num = 0.0;
        Eigen::VectorXd numx = Eigen::VectorXd::Zero(pl);
        for (int j = 0; j < gv.gs.size(); ++j) {
            den += wg[j];
            if (gv.gs.z_abs[j] >= si.z) {
                num += wg[j];
                numx += wg[j] * gv.gs.x.row(j).tail(pl).transpose();
            }
        }
        if (!(den >= kTrimDenominator) || !(num >= kTrimDenominator)) return;

        const Eigen::VectorXd xres = si.x.tail(pl) - numx / num;
        for (int k = 0; k < d; ++k) contrib.col(e).segment(k * pl, pl) = gwv[k] * xres;
        kept[e] = 1;
    });

    ScoreParts out;
    out.mean = Eigen::VectorXd::Zero(q);
    for (int e = 0; e < ne; ++e)
        if (kept[e]) {
            out.mean += contrib.col(e);
            ++out.used;
        }
    out.skipped = ne - out.used;
    if (out.used == 0) throw EstimationError("all score terms trimmed");
    out.mean /= static_cast<double>(n);
    if (want_contrib) {
        out.contrib.resize(q, out.used);
        int c = 0;
        for (int e = 0; e < ne; ++e)
            if (kept[e]) out.contrib.col(c++) = contrib.col(e);
    }
    return out;
}

} // namespace

Eigen::VectorXd efficient_score(const IndexMatrix& beta, const Dataset& data,
                                const BandwidthConfig& bw, ScoreDiagnostics* diag) {
    const ScoreParts parts = score_parts(beta, data, bw, Route::Efficient, nullptr, false);
    if (diag) *diag = ScoreDiagnostics{parts.used, parts.skipped};
    return parts.mean;
}

Eigen::VectorXd general_score(const IndexMatrix& beta, const Dataset& data,
                              const BandwidthConfig& bw, const ScoreWeight& g,
                              ScoreDiagnostics* diag) {
    const ScoreParts parts = score_parts(beta, data, bw, Route::Custom, &g, false);
    if (diag) *diag = ScoreDiagnostics{parts.used, parts.skipped};
    return parts.mean;
}

namespace {

struct WeightCtx {
    IndexMatrix beta;
    Dataset data;
    BandwidthConfig bw;
    GroupView views[2];
};

std::shared_ptr<WeightCtx> make_weight_ctx(const IndexMatrix& beta, const Dataset& data,
                                           const BandwidthConfig& bw) {
    auto ctx = std::make_shared<WeightCtx>(WeightCtx{beta, data, bw, {}});
    const Eigen::MatrixXd v_all = index_values(beta, data);
    for (int t = 0; t < 2; ++t) {
        GroupView& gv = ctx->views[t];
        gv.gs = make_group_sample(data, t == 0 ? Group::NonTransplant : Group::Transplant);
        gv.vg.resize(gv.gs.size(), beta.d());
        for (int i = 0; i < gv.gs.size(); ++i) gv.vg.row(i) = v_all.row(gv.gs.order[i]);
    }
    return ctx;
}

Eigen::VectorXd nan_vector(int d) {
    return Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());
}

} // namespace

ScoreWeight make_efficient_weight(const IndexMatrix& beta, const Dataset& data,
                                  const BandwidthConfig& bw) {
    auto ctx = make_weight_ctx(beta, data, bw);
    return [ctx](double z, const Eigen::VectorXd& v, Group group,
                 std::optional<double> w) -> Eigen::VectorXd {
        const bool tr = group == Group::Transplant;
        if (tr && !w) throw EstimationError("transplant weight needs a transplant time");
        const GroupView& gv = ctx->views[tr ? 1 : 0];
        const double tg = tr ? z - *w : z;
        const double horizon = tr ? ctx->data.tau - *w : ctx->data.tau;
        const SmoothedCurves sc(gv.gs, gv.vg, v, w.value_or(0.0), ctx->bw, horizon);
        const MrlDerivs md = sc.mrl_derivs(tg);
        if (!(md.m > kTrimDenominator) || !(std::abs(md.m1 + 1.0) > kTrimDenominator))
            return nan_vector(v.size());
        return md.m12 / (md.m1 + 1.0) - md.m2 / md.m;
    };
}

ScoreWeight make_hazard_ratio_weight(const IndexMatrix& beta, const Dataset& data,
                                     const BandwidthConfig& bw) {
    auto ctx = make_weight_ctx(beta, data, bw);
    return [ctx](double z, const Eigen::VectorXd& v, Group group,
                 std::optional<double> w) -> Eigen::VectorXd {
        const bool tr = group == Group::Transplant;
        if (tr && !w) throw EstimationError("transplant weight needs a transplant time");
        const GroupView& gv = ctx->views[tr ? 1 : 0];
        const double tg = tr ? z - *w : z;
        const double horizon = tr ? ctx->data.tau - *w : ctx->data.tau;
        const SmoothedCurves sc(gv.gs, gv.vg, v, w.value_or(0.0), ctx->bw, horizon);
        const double lam = sc.hazard(tg);
        if (!(lam > kHazardFloor)) return nan_vector(v.size());
        return sc.hazard_grad(tg) / lam;
    };
}

namespace {

// squared-norm simplex search used when the Newton direction stalls
double nelder_mead(const std::function<double(const Eigen::VectorXd&)>& h,
                   Eigen::VectorXd& x, double target, int budget) {
    const int q = static_cast<int>(x.size());
    std::vector<Eigen::VectorXd> pt(q + 1, x);
    std::vector<double> hv(q + 1);
    hv[0] = h(x);
    for (int j = 0; j < q; ++j) {
        pt[j + 1][j] += 0.1 * (1.0 + std::abs(x[j]));
        hv[j + 1] = h(pt[j + 1]);
    }
    int evals = q + 1;
    std::vector<int> ord(q + 1);
    std::iota(ord.begin(), ord.end(), 0);
    auto sort_ord = [&] {
        std::sort(ord.begin(), ord.end(), [&](int a, int b) { return hv[a] < hv[b]; });
    };
    while (evals < budget) {
        sort_ord();
        const int ib = ord[0], isw = ord[q - 1], iw = ord[q];
        if (!std::isfinite(hv[ib])) break;
        if (hv[ib] <= target) break;
        if (std::isfinite(hv[iw]) && hv[iw] - hv[ib] <= 1e-14 * (1.0 + hv[ib])) break;

        Eigen::VectorXd c = Eigen::VectorXd::Zero(q);
        for (int j = 0; j < q; ++j) c += pt[ord[j]];
        c /= static_cast<double>(q);

        const Eigen::VectorXd xr = c + (c - pt[iw]);
        const double hr = h(xr);
        ++evals;
        if (hr < hv[ib]) {
            const Eigen::VectorXd xe = c + 2.0 * (c - pt[iw]);
            const double he = h(xe);
            ++evals;
            if (he < hr) {
                pt[iw] = xe;
                hv[iw] = he;
            } else {
                pt[iw] = xr;
                hv[iw] = hr;
            }
        } else if (hr < hv[isw]) {
            pt[iw] = xr;
            hv[iw] = hr;
        } else {
            const bool outside = hr < hv[iw];
            const Eigen::VectorXd xc =
                outside ? (c + 0.5 * (xr - c)).eval() : (c + 0.5 * (pt[iw] - c)).eval();
            const double hc = h(xc);
            ++evals;
            if (hc < std::min(hr, hv[iw])) {
                pt[iw] = xc;
                hv[iw] = hc;
            } else {
                for (int j = 0; j <= q; ++j) {
                    if (j == ib) continue;
                    pt[j] = pt[ib] + 0.5 * (pt[j] - pt[ib]);
                    hv[j] = h(pt[j]);
                }
                evals += q;
            }
        }
    }
    sort_ord();
    x = pt[ord[0]];
    return hv[ord[0]];
}

struct StartOut {
    Eigen::VectorXd theta;
    double norm = kInf;
    int iters = 0;
};

// Sliced-inverse-regression pilot used when no starting value is supplied.
// For elliptical covariates the inverse regression curve of log follow-up
// lies in the span of the index directions, so the top generalized
// eigenvectors give a cheap consistent start even under censoring (the
// censoring time is independent noise in the response).  Falls back to the
// zero free block when the slice geometry degenerates.
IndexMatrix pilot_init(const Dataset& data, int d) {
    const int p = data.p;
    const int n = data.n();
    const IndexMatrix fallback(p, d);
    if (n < 4 * d + 4) return fallback;

    std::vector<int> ord(n);
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(),
              [&](int a, int b) { return data.subjects[a].z < data.subjects[b].z; });

    Eigen::VectorXd xbar = Eigen::VectorXd::Zero(p);
    for (const auto& s : data.subjects) xbar += s.x;
    xbar /= n;
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p, p);
    for (const auto& s : data.subjects) {
        const Eigen::VectorXd c = s.x - xbar;
        sigma += c * c.transpose();
    }
    sigma /= n;
    sigma.diagonal().array() += 1e-8 * (1.0 + sigma.trace() / p);

    const int slices = std::max(d + 2, std::min(10, n / 2));
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
    for (int h = 0; h < slices; ++h) {
        const int lo = h * n / slices, hi = (h + 1) * n / slices;
        if (hi <= lo) continue;
        Eigen::VectorXd sm = Eigen::VectorXd::Zero(p);
        for (int i = lo; i < hi; ++i) sm += data.subjects[ord[i]].x;
        sm = sm / (hi - lo) - xbar;
        m += (static_cast<double>(hi - lo) / n) * sm * sm.transpose();
    }

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(m, sigma);
    if (ges.info() != Eigen::Success) return fallback;
    const Eigen::MatrixXd raw = ges.eigenvectors().rightCols(d);
    const Eigen::MatrixXd top = raw.topRows(d);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(top);
    if (!lu.isInvertible()) return fallback;
    Eigen::MatrixXd full = raw * lu.inverse();
    if (!full.allFinite()) return fallback;
    // An ill-placed identity block can blow the free coefficients up; a
    // shrunk pilot still points at the right basin.
    Eigen::MatrixXd low = full.bottomRows(p - d);
    const double norm = low.norm();
    if (norm > 2.5) low *= 2.5 / norm;
    return IndexMatrix(p, d, low);
}

} // namespace

FitResult solve_beta(const Dataset& data, const FitConfig& cfg) {
    const int p = data.p;
    const int d = cfg.d;
    if (d < 1 || d > p) throw DataError("index dimension must lie in [1, p]");
    if (!(cfg.tol > 0.0)) throw DataError("tolerance must be positive");
    if (cfg.max_iter < 1) throw DataError("iteration cap must be at least 1");
    if (cfg.starts < 1) throw DataError("need at least one start");

    IndexMatrix init = cfg.init ? *cfg.init : pilot_init(data, d);
    if (init.p() != p || init.d() != d)
        throw DataError("starting value has wrong dimensions");
    const BandwidthConfig bw0 = cfg.bw ? *cfg.bw : default_bandwidths(data, init);

    FitResult res;
    res.n = data.n();
    res.tau = data.tau;
    const int q = init.n_free();
    if (q == 0) {
        res.beta_hat = init;
        res.converged = true;
        res.bw = bw0;
        return res;
    }

    // score as a function of the free parameters; infinite norm encodes an
    // unevaluable point (all terms trimmed)
    auto eval_norm = [&](const Eigen::VectorXd& th, Eigen::VectorXd& out) -> double {
        try {
            const IndexMatrix bm = IndexMatrix::from_vecl(p, d, th);
            const BandwidthConfig bwe =
                cfg.refresh_bw ? default_bandwidths(data, bm) : bw0;
            out = score_parts(bm, data, bwe, Route::Efficient, nullptr, false).mean;
            return out.norm();
        } catch (const EstimationError&) {
            return kInf;
        }
    };

    // Trust region: junk roots of the smoothed equation live far from any
    // consistent start and can undercut the good root's residual, so distance
    // from the start, not residual size, is what separates them.  Confine the
    // whole search to the acceptance ball instead of filtering afterwards.
    const Eigen::VectorXd base = init.vecl();
    auto clamp_ball = [&](Eigen::VectorXd th) {
        if (cfg.root_radius > 0.0) {
            const double dist = (th - base).norm();
            if (dist > cfg.root_radius) th = base + (th - base) * (cfg.root_radius / dist);
        }
        return th;
    };

    const double jac_step = 1e-5;
    auto run_start = [&](const Eigen::VectorXd& theta0) {
        StartOut s;
        s.theta = theta0;
        Eigen::VectorXd f;
        s.norm = eval_norm(s.theta, f);
        bool nm_done = false;
        double mu = 1e-3;  // Levenberg-Marquardt damping
        // trapped starts shave fractions of a percent off the residual for
        // hundreds of iterations; cut them off when a short window shows no
        // real progress
        double window_ref = s.norm;
        int window_len = 0;
        while (s.iters < cfg.max_iter) {
            // Keep polishing below tol instead of returning at the first
            // acceptable point: with loose tolerances the first sub-tol
            // iterate sits on the basin rim, far in parameter space from the
            // bottom the asymptotics speak about.  One extra order of
            // magnitude is cheap (quadratic local convergence) and the stall
            // window still terminates flat bottoms.
            if (s.norm <= 0.1 * cfg.tol) return s;
            bool improved = false;
            if (std::isfinite(s.norm)) {
                Eigen::MatrixXd jac(q, q);
                bool jac_ok = true;
                for (int j = 0; j < q && jac_ok; ++j) {
                    Eigen::VectorXd tp = s.theta, tm = s.theta, fp, fm;
                    tp[j] += jac_step;
                    tm[j] -= jac_step;
                    if (!std::isfinite(eval_norm(tp, fp)) ||
                        !std::isfinite(eval_norm(tm, fm))) {
                        jac_ok = false;
                        break;
                    }
                    jac.col(j) = (fp - fm) / (2.0 * jac_step);
                }
                if (jac_ok) {
                    // Marquardt steps: the same Jacobian is reused while the
                    // damping adapts, so a rough landscape costs retries, not
                    // extra derivative sweeps.
                    const Eigen::MatrixXd jtj = jac.transpose() * jac;
                    const Eigen::VectorXd jtf = jac.transpose() * f;
                    const Eigen::VectorXd dscale =
                        jtj.diagonal().cwiseMax(1e-12 * (1.0 + jtj.trace()));
                    for (int retry = 0; retry <= 12; ++retry) {
                        Eigen::MatrixXd a = jtj;
                        a.diagonal() += mu * dscale;
                        const Eigen::VectorXd dir = a.ldlt().solve(-jtf);
                        if (!dir.allFinite()) {
                            mu *= 4.0;
                            continue;
                        }
                        Eigen::VectorXd fc;
                        const Eigen::VectorXd cand = clamp_ball(s.theta + dir);
                        const double nc = eval_norm(cand, fc);
                        if (nc < s.norm) {
                            s.theta = cand;
                            f = fc;
                            s.norm = nc;
                            mu = std::max(mu / 3.0, 1e-12);
                            improved = true;
                            break;
                        }
                        mu *= 4.0;
                    }
                }
            }
            ++s.iters;
            bool stalled = false;
            if (improved && ++window_len >= 6) {
                stalled = std::isfinite(window_ref) && s.norm > 0.999 * window_ref;
                window_ref = s.norm;
                window_len = 0;
            }
            if (!improved || stalled) {
                // already acceptable: not worth a simplex polish
                if (s.norm <= cfg.tol) return s;
                if (nm_done) break;
                nm_done = true;
                auto h = [&](const Eigen::VectorXd& th) {
                    if (cfg.root_radius > 0.0 &&
                        (th - base).norm() > cfg.root_radius)
                        return kInf;  // wall keeps the simplex in the ball
                    Eigen::VectorXd ff;
                    const double nn = eval_norm(th, ff);
                    return std::isfinite(nn) ? nn * nn : kInf;
                };
                nelder_mead(h, s.theta, cfg.tol * cfg.tol, 60 * q + 60);
                const double nn = eval_norm(s.theta, f);
                if (!(nn < s.norm)) break;
                s.norm = nn;
                mu = 1e-3;
                window_ref = s.norm;
                window_len = 0;
            }
        }
        return s;
    };

    StartOut best;
    int spurious = 0;
    // keep restarts inside the trust region too, otherwise they all start
    // clamped onto the same boundary sphere
    double spread = 0.5;
    if (cfg.root_radius > 0.0)
        spread = std::min(spread, 0.4 * cfg.root_radius / std::sqrt(double(q)));
    for (int s = 0; s < cfg.starts; ++s) {
        Eigen::VectorXd theta0 = base;
        if (s > 0) {
            Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(s));
            for (int j = 0; j < q; ++j) theta0[j] += spread * rng.normal();
            theta0 = clamp_ball(theta0);
        }
        StartOut out = run_start(theta0);
        if (out.norm <= cfg.tol && cfg.root_radius > 0.0 &&
            (out.theta - base).norm() > cfg.root_radius) {
            // a root this far from a consistent pilot is almost surely one of
            // the small-sample artifacts of the smoothed equation, not the
            // estimate; keep looking instead of accepting it
            ++spurious;
            continue;
        }
        if (out.norm < best.norm || best.theta.size() == 0) best = out;
        if (best.norm <= cfg.tol) break;
    }

    if (!(best.norm <= cfg.tol)) {
        std::vector<double> vec;
        if (best.theta.size() == q)
            vec.assign(best.theta.data(), best.theta.data() + q);
        std::string msg = "score residual " + std::to_string(best.norm) +
                          " above tolerance after all starts";
        if (spurious > 0)
            msg += " (" + std::to_string(spurious) +
                   " roots rejected beyond the acceptance radius)";
        throw NonConvergence(msg, best.norm, std::move(vec));
    }

    const IndexMatrix beta_hat = IndexMatrix::from_vecl(p, d, best.theta);
    const BandwidthConfig bw_final =
        cfg.refresh_bw ? default_bandwidths(data, beta_hat) : bw0;
    const ScoreParts parts =
        score_parts(beta_hat, data, bw_final, Route::Efficient, nullptr, false);

    res.beta_hat = beta_hat;
    res.score_norm = parts.mean.norm();
    res.iterations = best.iters;
    res.trimmed_terms = parts.skipped;
    res.converged = true;
    res.bw = bw_final;
    res.cov_sandwich = covariance_sandwich(beta_hat, data, bw_final);
    res.cov_efficient = covariance_efficient(beta_hat, data, bw_final);
    return res;
}

Eigen::MatrixXd covariance_sandwich(const IndexMatrix& beta_hat, const Dataset& data,
                                    const BandwidthConfig& bw) {
    const int q = beta_hat.n_free();
    if (q == 0) return Eigen::MatrixXd(0, 0);
    const int p = beta_hat.p();
    const int d = beta_hat.d();
    const double n = static_cast<double>(data.n());

    const ScoreParts parts = score_parts(beta_hat, data, bw, Route::Efficient, nullptr, true);
    const Eigen::MatrixXd bmat = parts.contrib * parts.contrib.transpose() / n;

    const double step = 1e-5;
    const Eigen::VectorXd th = beta_hat.vecl();
    Eigen::MatrixXd amat(q, q);
    for (int j = 0; j < q; ++j) {
        Eigen::VectorXd tp = th, tm = th;
        tp[j] += step;
        tm[j] -= step;
        const Eigen::VectorXd fp =
            score_parts(IndexMatrix::from_vecl(p, d, tp), data, bw, Route::Efficient,
                        nullptr, false)
                .mean;
        const Eigen::VectorXd fm =
            score_parts(IndexMatrix::from_vecl(p, d, tm), data, bw, Route::Efficient,
                        nullptr, false)
                .mean;
        amat.col(j) = (fp - fm) / (2.0 * step);
    }

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(amat);
    const auto& sv = svd.singularValues();
    if (!(sv[q - 1] > sv[0] * 1e-12))
        throw EstimationError(
            "singular score Jacobian; condition number about " +
            std::to_string(sv[q - 1] > 0.0 ? sv[0] / sv[q - 1] : kInf));

    const Eigen::MatrixXd ainv = amat.colPivHouseholderQr().inverse();
    const Eigen::MatrixXd cov = ainv * bmat * ainv.transpose() / n;
    return 0.5 * (cov + cov.transpose());
}

Eigen::MatrixXd covariance_efficient(const IndexMatrix& beta_hat, const Dataset& data,
                                     const BandwidthConfig& bw) {
    const int q = beta_hat.n_free();
    if (q == 0) return Eigen::MatrixXd(0, 0);
    const double n = static_cast<double>(data.n());

    const ScoreParts parts =
        score_parts(beta_hat, data, bw, Route::HazardRatio, nullptr, true);
    const Eigen::MatrixXd sig = parts.contrib * parts.contrib.transpose() / n;
    const Eigen::LLT<Eigen::MatrixXd> llt(sig);
    if (llt.info() != Eigen::Success)
        throw EstimationError("efficient information matrix not positive definite");
    const Eigen::MatrixXd cov =
        llt.solve(Eigen::MatrixXd::Identity(q, q)) / n;
    return 0.5 * (cov + cov.transpose());
}

double mrl_variance(Group group, double t, const Eigen::VectorXd& v,
                    std::optional<double> w, const IndexMatrix& beta_hat,
                    const Dataset& data, const BandwidthConfig& bw) {
    GroupSample gs = make_group_sample(data, group);
    if (gs.size() == 0) throw EstimationError("empty group");
    const Eigen::MatrixXd v_all = index_values(beta_hat, data);
    Eigen::MatrixXd vg(gs.size(), beta_hat.d());
    for (int i = 0; i < gs.size(); ++i) vg.row(i) = v_all.row(gs.order[i]);

    double tg = t;
    double horizon = data.tau;
    if (group == Group::Transplant) {
        if (!w) throw EstimationError("transplant-group evaluation needs a transplant time");
        if (t < *w) throw EstimationError("transplant-group residual life needs t >= w");
        tg = t - *w;
        horizon = data.tau - *w;
    }
    if (t > data.tau) throw EstimationError("evaluation time beyond horizon");

    const SmoothedCurves sc(gs, vg, v, w.value_or(0.0), bw, horizon);
    double htot = bw.h.prod();
    if (group == Group::Transplant) htot *= bw.h_w;
    return sc.sigma2(tg, data.n()) / (data.n() * htot);
}

Improvement improvement(double t, const Eigen::VectorXd& x, double w,
                        const FitResult& fit, const Dataset& data,
                        const BandwidthConfig& bw) {
    if (x.size() != fit.beta_hat.p()) throw DataError("covariate vector has wrong length");
    if (!(w >= 0.0) || !(t >= w)) throw EstimationError("need 0 <= w <= t");
    const Eigen::VectorXd v = fit.beta_hat.full().transpose() * x;

    Improvement out;
    out.m_t = mrl(Group::Transplant, t, v, w, fit.beta_hat, data, bw);
    out.m_n = mrl(Group::NonTransplant, t, v, std::nullopt, fit.beta_hat, data, bw);
    out.value = out.m_t - out.m_n;
    const double var_t =
        std::max(0.0, mrl_variance(Group::Transplant, t, v, w, fit.beta_hat, data, bw));
    const double var_n = std::max(
        0.0, mrl_variance(Group::NonTransplant, t, v, std::nullopt, fit.beta_hat, data, bw));
    out.se_t = std::sqrt(var_t);
    out.se_n = std::sqrt(var_n);
    out.se = std::sqrt(var_t + var_n);
    return out;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const int rows = static_cast<int>(j.size());
    if (rows == 0) return Eigen::MatrixXd(0, 0);
    const int cols = static_cast<int>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

} // namespace

std::string fit_result_json(const FitResult& fit) {
    nlohmann::json j;
    j["p"] = fit.beta_hat.p();
    j["d"] = fit.beta_hat.d();
    j["n"] = fit.n;
    j["tau"] = fit.tau;
    j["converged"] = fit.converged;
    j["score_norm"] = fit.score_norm;
    j["iterations"] = fit.iterations;
    j["trimmed_terms"] = fit.trimmed_terms;
    j["beta"] = matrix_json(fit.beta_hat.full());
    const Eigen::VectorXd vl = fit.beta_hat.vecl();
    j["vecl"] = std::vector<double>(vl.data(), vl.data() + vl.size());
    j["cov_sandwich"] = matrix_json(fit.cov_sandwich);
    j["cov_efficient"] = matrix_json(fit.cov_efficient);
    j["bandwidths"] = {
        {"h", std::vector<double>(fit.bw.h.data(), fit.bw.h.data() + fit.bw.h.size())},
        {"h_w", fit.bw.h_w},
        {"b", fit.bw.b},
        {"kernel", fit.bw.kernel == KernelKind::Gaussian2 ? "gaussian2" : "gaussian4"},
    };
    return j.dump(2);
}

FitResult fit_result_from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        FitResult fit;
        const int p = j.at("p").get<int>();
        const int d = j.at("d").get<int>();
        const std::vector<double> vl = j.at("vecl").get<std::vector<double>>();
        if (static_cast<int>(vl.size()) != (p - d) * d)
            throw DataError("fit file: free parameter count does not match p and d");
        fit.beta_hat = IndexMatrix::from_vecl(
            p, d, Eigen::Map<const Eigen::VectorXd>(vl.data(), vl.size()));
        fit.n = j.at("n").get<int>();
        fit.tau = j.at("tau").get<double>();
        fit.converged = j.at("converged").get<bool>();
        fit.score_norm = j.at("score_norm").get<double>();
        fit.iterations = j.at("iterations").get<int>();
        fit.trimmed_terms = j.at("trimmed_terms").get<int>();
        fit.cov_sandwich = matrix_from_json(j.at("cov_sandwich"));
        fit.cov_efficient = matrix_from_json(j.at("cov_efficient"));
        const nlohmann::json& b = j.at("bandwidths");
        const std::vector<double> h = b.at("h").get<std::vector<double>>();
        fit.bw.h = Eigen::Map<const Eigen::VectorXd>(h.data(), h.size());
        fit.bw.h_w = b.at("h_w").get<double>();
        fit.bw.b = b.at("b").get<double>();
        const std::string kern = b.at("kernel").get<std::string>();
        if (kern == "gaussian2")
            fit.bw.kernel = KernelKind::Gaussian2;
        else if (kern == "gaussian4")
            fit.bw.kernel = KernelKind::Gaussian4;
        else
            throw DataError("fit file: unknown kernel '" + kern + "'");
        return fit;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad fit file: ") + e.what());
    }
}

} // namespace mrl
