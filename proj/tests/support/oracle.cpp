#include "support/oracle.hpp"

#include "mrl/errors.hpp"
#include "mrl/smoother.hpp"

#include <algorithm>
#include <cmath>

namespace mrl::testoracle {

double kern(KernelKind kind, double u) {
    const double phi = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
    if (kind == KernelKind::Gaussian2) return phi;
    return 0.5 * (3.0 - u * u) * phi;
}

double kern_deriv(KernelKind kind, double u) {
    const double phi = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
    if (kind == KernelKind::Gaussian2) return -u * phi;
    return -0.5 * u * (5.0 - u * u) * phi;
}

double kern_square_integral(KernelKind kind) {
    // Simpson with 1e6 panels; the integrand is dead beyond |u| = 12
    const int panels = 1000000;
    const double a = -12.0, b = 12.0, h = (b - a) / panels;
    double acc = 0.0;
    for (int j = 0; j <= panels; ++j) {
        const double u = a + j * h;
        const double f = kern(kind, u) * kern(kind, u);
        const double wj = (j == 0 || j == panels) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
        acc += wj * f;
    }
    return acc * h / 3.0;
}

namespace {

struct Row {
    double tg = 0.0;   // group clock
    double z = 0.0;    // absolute clock
    bool ev = false;
    double w = 0.0;
    Eigen::VectorXd x;
    Eigen::VectorXd v;  // beta^T x
};

std::vector<Row> group_rows(Group group, const IndexMatrix& beta, const Dataset& data) {
    const Eigen::MatrixXd bfull = beta.full();
    std::vector<Row> rows;
    for (int i = 0; i < data.n(); ++i) {
        const Subject& s = data.subjects[i];
        if (subject_group(s) != group) continue;
        Row r;
        r.z = s.z;
        r.tg = group == Group::Transplant ? s.z - *s.w : s.z;
        r.ev = s.event;
        r.w = s.w.value_or(0.0);
        r.x = s.x;
        r.v = bfull.transpose() * s.x;
        rows.push_back(std::move(r));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.tg < b.tg; });
    return rows;
}

double row_weight(const Row& r, const Eigen::VectorXd& v, double w, bool joint,
                  const BandwidthConfig& bw) {
    double out = 1.0;
    for (int k = 0; k < v.size(); ++k)
        out *= kern(bw.kernel, (r.v[k] - v[k]) / bw.h[k]) / bw.h[k];
    if (joint) out *= kern(bw.kernel, (r.w - w) / bw.h_w) / bw.h_w;
    return out;
}

// d/dv_k of row_weight: only the k-th factor differentiates, with inner
// derivative -1/h_k
Eigen::VectorXd row_weight_grad(const Row& r, const Eigen::VectorXd& v, double w,
                                bool joint, const BandwidthConfig& bw) {
    const int d = static_cast<int>(v.size());
    Eigen::VectorXd out(d);
    for (int k = 0; k < d; ++k) {
        double g = -kern_deriv(bw.kernel, (r.v[k] - v[k]) / bw.h[k]) / (bw.h[k] * bw.h[k]);
        for (int l = 0; l < d; ++l)
            if (l != k) g *= kern(bw.kernel, (r.v[l] - v[l]) / bw.h[l]) / bw.h[l];
        if (joint) g *= kern(bw.kernel, (r.w - w) / bw.h_w) / bw.h_w;
        out[k] = g;
    }
    return out;
}

struct Knot {
    double t = 0.0;
    double dl = 0.0;
    Eigen::VectorXd dg;
};

// Nelson-Aalen jumps and their index gradients at one evaluation point,
// straight from the ratio definitions: dL_i = W_i / D_i with D_i the
// weight sum over the risk set {j : t_j >= t_i}, and
// dL_i' = (W_i' - dL_i * sum_{risk} W_j') / D_i.
std::vector<Knot> build_knots(const std::vector<Row>& rows, const Eigen::VectorXd& v,
                              double w, bool joint, const BandwidthConfig& bw) {
    const int m = static_cast<int>(rows.size());
    std::vector<double> wgt(m);
    std::vector<Eigen::VectorXd> gw(m);
    for (int j = 0; j < m; ++j) {
        wgt[j] = row_weight(rows[j], v, w, joint, bw);
        gw[j] = row_weight_grad(rows[j], v, w, joint, bw);
    }
    std::vector<Knot> out;
    for (int i = 0; i < m; ++i) {
        if (!rows[i].ev) continue;
        double den = 0.0;
        Eigen::VectorXd gden = Eigen::VectorXd::Zero(v.size());
        for (int j = 0; j < m; ++j)
            if (rows[j].tg >= rows[i].tg) {
                den += wgt[j];
                gden += gw[j];
            }
        if (!(den >= kTrimDenominator) || !(wgt[i] > 0.0)) continue;
        Knot k;
        k.t = rows[i].tg;
        k.dl = wgt[i] / den;
        k.dg = (gw[i] - k.dl * gden) / den;
        out.push_back(std::move(k));
    }
    return out;
}

double lam_at(const std::vector<Knot>& ks, double t) {
    double acc = 0.0;
    for (const Knot& k : ks)
        if (k.t <= t) acc += k.dl;
    return acc;
}

Eigen::VectorXd lam_grad_at(const std::vector<Knot>& ks, int d, double t) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (const Knot& k : ks)
        if (k.t <= t) acc += k.dg;
    return acc;
}

struct Ctx {
    std::vector<Row> rows;
    std::vector<Knot> ks;
    bool joint = false;
    double tg = 0.0;       // evaluation time on the group clock
    double horizon = 0.0;
};

Ctx make_ctx(Group group, double t, const Eigen::VectorXd& v, std::optional<double> w,
             const IndexMatrix& beta, const Dataset& data, const BandwidthConfig& bw,
             bool shift_time) {
    Ctx c;
    c.joint = group == Group::Transplant;
    if (c.joint && !w) throw EstimationError("oracle: transplant point needs w");
    c.rows = group_rows(group, beta, data);
    c.ks = build_knots(c.rows, v, w.value_or(0.0), c.joint, bw);
    c.horizon = c.joint ? data.tau - *w : data.tau;
    c.tg = (shift_time && c.joint) ? t - *w : t;
    return c;
}

} // namespace

double cond_at_risk(double t, int i, const IndexMatrix& beta, const Dataset& data,
                    const BandwidthConfig& bw) {
    const Subject& si = data.subjects[i];
    const Group group = subject_group(si);
    const bool joint = group == Group::Transplant;
    const Eigen::VectorXd vi = beta.full().transpose() * si.x;
    const std::vector<Row> rows = group_rows(group, beta, data);
    double num = 0.0, den = 0.0;
    for (const Row& r : rows) {
        const double wj = row_weight(r, vi, si.w.value_or(0.0), joint, bw);
        den += wj;
        if (r.z >= t) num += wj;
    }
    return num / den;
}

Eigen::VectorXd cond_at_risk_xl(double t, int i, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw) {
    const Subject& si = data.subjects[i];
    const Group group = subject_group(si);
    const bool joint = group == Group::Transplant;
    const int pl = beta.p() - beta.d();
    const Eigen::VectorXd vi = beta.full().transpose() * si.x;
    const std::vector<Row> rows = group_rows(group, beta, data);
    Eigen::VectorXd num = Eigen::VectorXd::Zero(pl);
    double den = 0.0;
    for (const Row& r : rows) {
        const double wj = row_weight(r, vi, si.w.value_or(0.0), joint, bw);
        den += wj;
        if (r.z >= t) num += wj * r.x.tail(pl);
    }
    return num / den;
}

double cum_hazard(Group group, double t, const Eigen::VectorXd& v,
                  std::optional<double> w, const IndexMatrix& beta,
                  const Dataset& data, const BandwidthConfig& bw) {
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, false);
    return lam_at(c.ks, c.tg);
}

Eigen::VectorXd cum_hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                                std::optional<double> w, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw) {
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, false);
    return lam_grad_at(c.ks, static_cast<int>(v.size()), c.tg);
}

double hazard(Group group, double t, const Eigen::VectorXd& v, std::optional<double> w,
              const IndexMatrix& beta, const Dataset& data, const BandwidthConfig& bw) {
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, false);
    double acc = 0.0;
    for (const Knot& k : c.ks) acc += kern(bw.kernel, (k.t - c.tg) / bw.b) / bw.b * k.dl;
    return acc;
}

Eigen::VectorXd hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                            std::optional<double> w, const IndexMatrix& beta,
                            const Dataset& data, const BandwidthConfig& bw) {
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, false);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.size());
    for (const Knot& k : c.ks) acc += kern(bw.kernel, (k.t - c.tg) / bw.b) / bw.b * k.dg;
    return acc;
}

namespace {

// segment boundaries of the step path restricted to (t, horizon)
std::vector<double> segment_bounds(const Ctx& c) {
    std::vector<double> cuts;
    cuts.push_back(c.tg);
    for (const Knot& k : c.ks)
        if (k.t > c.tg && k.t < c.horizon) cuts.push_back(k.t);
    cuts.push_back(c.horizon);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    return cuts;
}

} // namespace

double mrl(Group group, double t, const Eigen::VectorXd& v, std::optional<double> w,
           const IndexMatrix& beta, const Dataset& data, const BandwidthConfig& bw) {
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, true);
    const double lt = lam_at(c.ks, c.tg);
    const std::vector<double> cuts = segment_bounds(c);
    double acc = 0.0;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s)
        acc += std::exp(lt - lam_at(c.ks, cuts[s])) * (cuts[s + 1] - cuts[s]);
    return acc;
}

MrlDerivs mrl_derivs(Group group, double t, const Eigen::VectorXd& v,
                     std::optional<double> w, const IndexMatrix& beta,
                     const Dataset& data, const BandwidthConfig& bw) {
    const int d = static_cast<int>(v.size());
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, true);
    const double lt = lam_at(c.ks, c.tg);
    const Eigen::VectorXd l2t = lam_grad_at(c.ks, d, c.tg);
    const std::vector<double> cuts = segment_bounds(c);

    // m    = e^{L(t)} \int_t^hz e^{-L(s)} ds
    // j2   = e^{L(t)} \int_t^hz e^{-L(s)} L2(s) ds
    double m = 0.0;
    Eigen::VectorXd j2 = Eigen::VectorXd::Zero(d);
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        const double seg = std::exp(lt - lam_at(c.ks, cuts[s])) * (cuts[s + 1] - cuts[s]);
        m += seg;
        j2 += seg * lam_grad_at(c.ks, d, cuts[s]);
    }

    MrlDerivs out;
    out.m = m;
    out.lambda = 0.0;
    out.lambda2 = Eigen::VectorXd::Zero(d);
    for (const Knot& k : c.ks) {
        const double kb = kern(bw.kernel, (k.t - c.tg) / bw.b) / bw.b;
        out.lambda += kb * k.dl;
        out.lambda2 += kb * k.dg;
    }
    out.m1 = out.lambda * out.m - 1.0;
    out.m2 = l2t * out.m - j2;
    out.m12 = out.lambda2 * out.m + out.lambda * out.m2;
    return out;
}

double mrl_variance(Group group, double t, const Eigen::VectorXd& v,
                    std::optional<double> w, const IndexMatrix& beta,
                    const Dataset& data, const BandwidthConfig& bw) {
    const int n = data.n();
    const Ctx c = make_ctx(group, t, v, w, beta, data, bw, true);
    const double lt = lam_at(c.ks, c.tg);

    // distinct observed event times on the group clock, kept mass per time
    std::vector<double> ut;
    for (const Row& r : c.rows)
        if (r.ev && (ut.empty() || r.tg != ut.back())) ut.push_back(r.tg);
    const int m = static_cast<int>(ut.size());
    if (m == 0) return 0.0;
    std::vector<double> uinc(m, 0.0), lev(m, 0.0);
    for (const Knot& k : c.ks)
        for (int j = 0; j < m; ++j)
            if (ut[j] == k.t) uinc[j] += k.dl;
    for (int j = 1; j < m; ++j) lev[j] = lev[j - 1] + uinc[j - 1];

    if (std::none_of(ut.begin(), ut.end(), [&](double u) { return u > c.tg; }))
        return 0.0;

    // shifted survival integral over the event segments strictly past the
    // cut r, clipping each segment start at r:
    // S(r) = sum_{j: u_j > r} e^{lt - lev_j} (u_j - max(u_{j-1}, r))
    auto seg_past = [&](double cut, double clip) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) {
            if (!(ut[j] > cut)) continue;
            const double prev = j == 0 ? 0.0 : ut[j - 1];
            acc += std::exp(lt - lev[j]) * (ut[j] - std::max(prev, clip));
        }
        return acc;
    };
    const double at = seg_past(c.tg, c.tg);

    const double kconst = std::pow(
        kern_square_integral(bw.kernel), static_cast<int>(v.size()) + (c.joint ? 1 : 0));

    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        if (!(uinc[i] > 0.0)) continue;
        const double u_prev = i == 0 ? 0.0 : ut[i - 1];
        double atrisk = 0.0;
        for (const Row& r : c.rows) {
            const double wj = row_weight(r, v, w.value_or(0.0), c.joint, bw);
            if (r.tg >= u_prev) atrisk += wj;
        }
        if (!(atrisk >= kTrimDenominator)) continue;
        // before t the at-risk indicator keeps the full past-t integral plus
        // a second copy whose first segment is clipped at u_{i-1}
        const double bracket =
            u_prev < c.tg ? at + seg_past(c.tg, u_prev) : seg_past(u_prev, u_prev);
        total += uinc[i] / (atrisk / n) * bracket * bracket;
    }

    double htot = 1.0;
    for (int k = 0; k < v.size(); ++k) htot *= bw.h[k];
    if (c.joint) htot *= bw.h_w;
    return kconst * total / (n * htot);
}

namespace {

Eigen::VectorXd score_loop(const IndexMatrix& beta, const Dataset& data,
                           const BandwidthConfig& bw, int route, const ScoreWeight* g) {
    const int d = beta.d();
    const int pl = beta.p() - d;
    const Eigen::MatrixXd bfull = beta.full();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(pl * d);
    for (int i = 0; i < data.n(); ++i) {
        const Subject& si = data.subjects[i];
        if (!si.event) continue;
        const Group group = subject_group(si);
        const bool joint = group == Group::Transplant;
        const Eigen::VectorXd vi = bfull.transpose() * si.x;
        const double tg = joint ? si.z - *si.w : si.z;

        Eigen::VectorXd gw(d);
        if (route == 0) {
            const MrlDerivs md =
                testoracle::mrl_derivs(group, si.z, vi, si.w, beta, data, bw);
            if (!(md.m > kTrimDenominator) || !(std::abs(md.m1 + 1.0) > kTrimDenominator))
                continue;
            gw = md.m12 / (md.m1 + 1.0) - md.m2 / md.m;
        } else if (route == 1) {
            const double lam = testoracle::hazard(group, tg, vi, si.w, beta, data, bw);
            if (!(lam > kHazardFloor)) continue;
            gw = testoracle::hazard_grad(group, tg, vi, si.w, beta, data, bw) / lam;
        } else {
            gw = (*g)(si.z, vi, group, si.w);
            if (!gw.allFinite()) continue;
        }

        const std::vector<Row> rows = group_rows(group, beta, data);
        double den = 0.0, num = 0.0;
        Eigen::VectorXd numx = Eigen::VectorXd::Zero(pl);
        for (const Row& r : rows) {
            const double wj = row_weight(r, vi, si.w.value_or(0.0), joint, bw);
            den += wj;
            if (r.z >= si.z) {
                num += wj;
                numx += wj * r.x.tail(pl);
            }
        }
        if (!(den >= kTrimDenominator) || !(num >= kTrimDenominator)) continue;

        const Eigen::VectorXd xres = si.x.tail(pl) - numx / num;
        for (int k = 0; k < d; ++k) mean.segment(k * pl, pl) += gw[k] * xres;
    }
    return mean / data.n();
}

} // namespace

Eigen::VectorXd efficient_score(const IndexMatrix& beta, const Dataset& data,
                                const BandwidthConfig& bw) {
    return score_loop(beta, data, bw, 0, nullptr);
}

Eigen::VectorXd hazard_ratio_score(const IndexMatrix& beta, const Dataset& data,
                                   const BandwidthConfig& bw) {
    return score_loop(beta, data, bw, 1, nullptr);
}

Eigen::VectorXd general_score(const IndexMatrix& beta, const Dataset& data,
                              const BandwidthConfig& bw, const ScoreWeight& g) {
    return score_loop(beta, data, bw, 2, &g);
}

} // namespace mrl::testoracle
