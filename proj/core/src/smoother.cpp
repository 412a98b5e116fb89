#include "mrl/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mrl {

namespace {

const double inv_sqrt_2pi = 0.3989422804014326779;

// Vectorized kernel and kernel-derivative evaluation, scaled by 1/h and
// 1/h^2 respectively, as the product-kernel factors need them.
void kernel_arrays(KernelKind kind, const Eigen::ArrayXd& u, double h,
                   Eigen::ArrayXd& k_out, Eigen::ArrayXd& kp_out) {
    const Eigen::ArrayXd phi = inv_sqrt_2pi * (-0.5 * u.square()).exp();
    if (kind == KernelKind::Gaussian2) {
        k_out = phi / h;
        kp_out = -u * phi / (h * h);
    } else {
        k_out = 0.5 * (3.0 - u.square()) * phi / h;
        kp_out = -0.5 * u * (5.0 - u.square()) * phi / (h * h);
    }
}

Eigen::ArrayXd kernel_array(KernelKind kind, const Eigen::ArrayXd& u, double h) {
    const Eigen::ArrayXd phi = inv_sqrt_2pi * (-0.5 * u.square()).exp();
    if (kind == KernelKind::Gaussian2) return phi / h;
    return 0.5 * (3.0 - u.square()) * phi / h;
}

} // namespace

GroupSample make_group_sample(const Dataset& data, Group group) {
    GroupSample g;
    g.group = group;
    for (int i = 0; i < data.n(); ++i)
        if (subject_group(data.subjects[i]) == group) g.order.push_back(i);

    const bool transplant = group == Group::Transplant;
    auto clock = [&](int i) {
        const Subject& s = data.subjects[i];
        return transplant ? s.z - *s.w : s.z;
    };
    std::sort(g.order.begin(), g.order.end(), [&](int a, int b) {
        const double ta = clock(a), tb = clock(b);
        if (ta != tb) return ta < tb;
        return a < b;
    });

    const int gsz = g.size();
    g.time.resize(gsz);
    g.z_abs.resize(gsz);
    g.event.resize(gsz);
    g.x.resize(gsz, data.p);
    if (transplant) g.w.resize(gsz);
    g.risk_start.resize(gsz);
    for (int i = 0; i < gsz; ++i) {
        const Subject& s = data.subjects[g.order[i]];
        g.time[i] = clock(g.order[i]);
        g.z_abs[i] = s.z;
        g.event[i] = s.event ? 1 : 0;
        g.x.row(i) = s.x.transpose();
        if (transplant) g.w[i] = *s.w;
        g.risk_start[i] = (i > 0 && g.time[i] == g.time[i - 1]) ? g.risk_start[i - 1] : i;
    }
    return g;
}

void StepHazard::rebuild() {
    cum.resize(jump.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < jump.size(); ++k) {
        acc += jump[k];
        cum[k] = acc;
    }
}

double StepHazard::value(double t) const {
    const auto it = std::upper_bound(time.begin(), time.end(), t);
    const std::size_t a = static_cast<std::size_t>(it - time.begin());
    return a == 0 ? 0.0 : cum[a - 1];
}

double StepHazard::survival_integral(double t) const {
    if (t >= tau) return 0.0;
    double total = 0.0;
    double seg_start = t;
    const auto it = std::upper_bound(time.begin(), time.end(), t);
    std::size_t a = static_cast<std::size_t>(it - time.begin());
    double level = a == 0 ? 0.0 : cum[a - 1];
    for (; a < time.size() && time[a] < tau; ++a) {
        if (time[a] > seg_start) {
            total += std::exp(-level) * (time[a] - seg_start);
            seg_start = time[a];
        }
        level = cum[a];
    }
    total += std::exp(-level) * (tau - seg_start);
    return total;
}

SmoothedCurves::SmoothedCurves(const GroupSample& g, const Eigen::MatrixXd& vg,
                               const Eigen::VectorXd& v, double w,
                               const BandwidthConfig& bw, double horizon)
    : g_(&g),
      d_(static_cast<int>(v.size())),
      joint_w_(g.group == Group::Transplant),
      horizon_(horizon),
      kind_(bw.kernel),
      b_(bw.b) {
    const int gsz = g.size();
    if (bw.h.size() != d_) throw DataError("bandwidth count does not match index dimension");
    if (!(bw.b > 0.0)) throw DataError("time bandwidth must be positive");
    if (vg.rows() != gsz || vg.cols() != d_)
        throw DataError("index value block does not match group");

    hprod_ = 1.0;
    for (int k = 0; k < d_; ++k) {
        if (!(bw.h[k] > 0.0)) throw DataError("index bandwidths must be positive");
        hprod_ *= bw.h[k];
    }
    if (joint_w_) {
        if (!(bw.h_w > 0.0))
            throw DataError("transplant-direction bandwidth must be positive");
        hprod_ *= bw.h_w;
    }

    wgt_ = Eigen::ArrayXd::Ones(gsz);
    gwgt_.resize(gsz, d_);
    if (gsz > 0) {
        std::vector<Eigen::ArrayXd> kcol(d_), kpcol(d_);
        for (int k = 0; k < d_; ++k) {
            const Eigen::ArrayXd u = (vg.col(k).array() - v[k]) / bw.h[k];
            kernel_arrays(kind_, u, bw.h[k], kcol[k], kpcol[k]);
        }
        // prefix/suffix products across index dimensions keep the gradient
        // weights well defined where an order-4 kernel factor hits zero
        std::vector<Eigen::ArrayXd> pre(d_ + 1), suf(d_ + 1);
        pre[0] = Eigen::ArrayXd::Ones(gsz);
        for (int k = 0; k < d_; ++k) pre[k + 1] = pre[k] * kcol[k];
        suf[d_] = Eigen::ArrayXd::Ones(gsz);
        for (int k = d_ - 1; k >= 0; --k) suf[k] = suf[k + 1] * kcol[k];

        Eigen::ArrayXd wfac = Eigen::ArrayXd::Ones(gsz);
        if (joint_w_) {
            const Eigen::ArrayXd uw = (g.w.array() - w) / bw.h_w;
            wfac = kernel_array(kind_, uw, bw.h_w);
        }
        wgt_ = pre[d_] * wfac;
        for (int k = 0; k < d_; ++k) gwgt_.col(k) = pre[k] * kpcol[k] * suf[k + 1] * wfac;
    }

    // at-risk kernel sums: suffix sums over the time-ascending order
    suffw_.resize(gsz + 1);
    Eigen::MatrixXd suffg(gsz + 1, d_);
    suffw_[gsz] = 0.0;
    suffg.row(gsz).setZero();
    for (int i = gsz - 1; i >= 0; --i) {
        suffw_[i] = suffw_[i + 1] + wgt_[i];
        suffg.row(i) = suffg.row(i + 1) + gwgt_.row(i).matrix();
    }

    // Nelson-Aalen knots over the kept events.  Nonpositive numerator
    // weights (possible under Gaussian4) are skipped along with
    // near-empty denominators so the step path stays nondecreasing.
    ktime_.reserve(gsz);
    dl_.reserve(gsz);
    std::vector<Eigen::VectorXd> gcols;
    gcols.reserve(gsz);
    for (int i = 0; i < gsz; ++i) {
        if (!g.event[i]) continue;
        const double den = suffw_[g.risk_start[i]];
        const double wi = wgt_[i];
        if (!(den >= kTrimDenominator) || !(wi > 0.0)) {
            ++trimmed_;
            continue;
        }
        ktime_.push_back(g.time[i]);
        dl_.push_back(wi / den);
        const Eigen::VectorXd e = suffg.row(g.risk_start[i]).transpose();
        gcols.push_back((-gwgt_.row(i).matrix().transpose() + (wi / den) * e) / den);
    }

    const int nk = static_cast<int>(ktime_.size());
    gj_.resize(d_, nk);
    cumg_.resize(d_, nk);
    cuml_.resize(nk);
    double acc = 0.0;
    Eigen::VectorXd gacc = Eigen::VectorXd::Zero(d_);
    for (int k = 0; k < nk; ++k) {
        gj_.col(k) = gcols[k];
        acc += dl_[k];
        gacc += gcols[k];
        cuml_[k] = acc;
        cumg_.col(k) = gacc;
    }
}

void SmoothedCurves::check_time(double t) const {
    if (!(t >= 0.0)) throw EstimationError("evaluation time must be nonnegative");
    if (t > horizon_)
        throw EstimationError("evaluation time beyond horizon");
}

int SmoothedCurves::upper_knot(double t) const {
    return static_cast<int>(std::upper_bound(ktime_.begin(), ktime_.end(), t) - ktime_.begin());
}

double SmoothedCurves::cum_hazard(double t) const {
    check_time(t);
    const int a = upper_knot(t);
    return a == 0 ? 0.0 : cuml_[a - 1];
}

Eigen::VectorXd SmoothedCurves::cum_hazard_grad(double t) const {
    check_time(t);
    const int a = upper_knot(t);
    return a == 0 ? Eigen::VectorXd::Zero(d_).eval() : Eigen::VectorXd(cumg_.col(a - 1));
}

double SmoothedCurves::hazard(double t) const {
    check_time(t);
    double out = 0.0;
    for (std::size_t k = 0; k < ktime_.size(); ++k)
        out += kernel_eval(kind_, (ktime_[k] - t) / b_) / b_ * dl_[k];
    return out;
}

Eigen::VectorXd SmoothedCurves::hazard_grad(double t) const {
    check_time(t);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(d_);
    for (std::size_t k = 0; k < ktime_.size(); ++k)
        out += kernel_eval(kind_, (ktime_[k] - t) / b_) / b_ * gj_.col(k);
    return out;
}

double SmoothedCurves::mrl(double t) const {
    check_time(t);
    // exact segment integration of e^{Lambda(t)-Lambda(s)} over [t, horizon];
    // exponents are <= 0, so large hazard paths cannot overflow
    const int a = upper_knot(t);
    const double shift = a == 0 ? 0.0 : cuml_[a - 1];
    double total = 0.0;
    double seg_start = t;
    double level = shift;
    for (int k = a; k < static_cast<int>(ktime_.size()) && ktime_[k] < horizon_; ++k) {
        if (ktime_[k] > seg_start) {
            total += std::exp(shift - level) * (ktime_[k] - seg_start);
            seg_start = ktime_[k];
        }
        level = cuml_[k];
    }
    total += std::exp(shift - level) * (horizon_ - seg_start);
    return total;
}

MrlDerivs SmoothedCurves::mrl_derivs(double t) const {
    check_time(t);
    const int a = upper_knot(t);
    const int nk = static_cast<int>(ktime_.size());
    const double shift = a == 0 ? 0.0 : cuml_[a - 1];
    const Eigen::VectorXd l2 =
        a == 0 ? Eigen::VectorXd::Zero(d_).eval() : Eigen::VectorXd(cumg_.col(a - 1));

    // shared segment sweep: I0 = e^{L(t)} int e^{-L},  J2 = e^{L(t)} int L2 e^{-L}
    double i0 = 0.0;
    Eigen::VectorXd j2 = Eigen::VectorXd::Zero(d_);
    double seg_start = t;
    double level = shift;
    Eigen::VectorXd glevel = l2;
    for (int k = a; k < nk && ktime_[k] < horizon_; ++k) {
        if (ktime_[k] > seg_start) {
            const double seg = std::exp(shift - level) * (ktime_[k] - seg_start);
            i0 += seg;
            j2 += seg * glevel;
            seg_start = ktime_[k];
        }
        level = cuml_[k];
        glevel = cumg_.col(k);
    }
    const double tail = std::exp(shift - level) * (horizon_ - seg_start);
    i0 += tail;
    j2 += tail * glevel;

    MrlDerivs out;
    out.m = i0;
    out.lambda = hazard(t);
    out.lambda2 = hazard_grad(t);
    out.m1 = out.lambda * out.m - 1.0;
    out.m2 = l2 * out.m - j2;
    out.m12 = out.lambda2 * out.m + out.lambda * out.m2;
    return out;
}

double SmoothedCurves::sigma2(double t, int n_total) const {
    // Variance plug-in over the group's distinct observed event times
    // u_1 < ... < u_M (u_0 = 0): sum over segments of
    //   dLambda(u_i) / {D(u_{i-1}) / n} * [I(u_{i-1} < t) A(t) + B_i]^2
    // where A(r) integrates e^{-Lambda} over event-time segments past r and
    // B_i keeps max(u_{i-1}, u_{j-1}) in the segment lengths even when the
    // at-risk indicator clips at t.  Everything is shifted by e^{Lambda(t)}
    // so the exponents stay nonpositive and the leading e^{2 Lambda(t)}
    // factor is absorbed.
    check_time(t);
    const int gsz = g_->size();
    std::vector<double> ut, uinc;
    ut.reserve(gsz);
    for (int i = 0; i < gsz; ++i) {
        if (!g_->event[i]) continue;
        if (ut.empty() || g_->time[i] != ut.back()) {
            ut.push_back(g_->time[i]);
            uinc.push_back(0.0);
        }
    }
    const int m = static_cast<int>(ut.size());
    if (m == 0) return 0.0;
    {
        int idx = 0;
        for (std::size_t k = 0; k < ktime_.size(); ++k) {
            while (ut[idx] < ktime_[k]) ++idx;
            uinc[idx] += dl_[k];
        }
    }

    // level of the step path just below each distinct event time
    std::vector<double> lev_before(m);
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
        lev_before[j] = acc;
        acc += uinc[j];
    }
    const double lt = cum_hazard(t);

    // jstar: first distinct event time beyond t; no mass past t means every
    // bracket vanishes
    const int jstar = static_cast<int>(std::upper_bound(ut.begin(), ut.end(), t) - ut.begin());
    if (jstar == m) return 0.0;

    // shifted segment-integral suffix over segments at or beyond jstar
    std::vector<double> tsuf(m + 1, 0.0);
    for (int j = m - 1; j >= jstar; --j) {
        const double prev = j == 0 ? 0.0 : ut[j - 1];
        tsuf[j] = tsuf[j + 1] + std::exp(lt - lev_before[j]) * (ut[j] - prev);
    }
    const double a_t = tsuf[jstar + 1] +
                       std::exp(lt - lev_before[jstar]) * (ut[jstar] - t);

    const double kconst =
        std::pow(kernel_square_integral(kind_), d_ + (joint_w_ ? 1 : 0));

    double total = 0.0;
    int risk_idx = 0;
    for (int i = 0; i < m; ++i) {
        if (!(uinc[i] > 0.0)) continue;
        const double u_prev = i == 0 ? 0.0 : ut[i - 1];
        while (risk_idx < gsz && g_->time[risk_idx] < u_prev) ++risk_idx;
        const double atrisk = suffw_[risk_idx];
        if (!(atrisk >= kTrimDenominator)) continue;
        double bracket;
        if (u_prev < t) {
            const double pstar = jstar == 0 ? 0.0 : ut[jstar - 1];
            const double b_i = tsuf[jstar + 1] +
                               std::exp(lt - lev_before[jstar]) *
                                   (ut[jstar] - std::max(u_prev, pstar));
            bracket = a_t + b_i;
        } else {
            const int s = static_cast<int>(
                std::upper_bound(ut.begin(), ut.end(), u_prev) - ut.begin());
            bracket = tsuf[s];
        }
        total += uinc[i] / (atrisk / n_total) * bracket * bracket;
    }
    return kconst * total;
}

StepHazard SmoothedCurves::step() const {
    StepHazard sh;
    sh.time = ktime_;
    sh.jump = dl_;
    sh.tau = horizon_;
    sh.rebuild();
    return sh;
}

namespace {

// shared setup for the one-shot wrappers
struct OneShot {
    GroupSample g;
    Eigen::MatrixXd vg;
    double horizon;
};

OneShot one_shot(Group group, std::optional<double> w, const IndexMatrix& beta,
                 const Dataset& data, const BandwidthConfig& bw) {
    if (group == Group::Transplant) {
        if (!w) throw EstimationError("transplant-group evaluation needs a transplant time");
        if (*w < 0.0) throw EstimationError("transplant time must be nonnegative");
        if (*w > data.tau) throw EstimationError("transplant time beyond horizon");
    }
    (void)bw;
    OneShot o;
    o.g = make_group_sample(data, group);
    if (o.g.size() == 0) throw EstimationError("empty group");
    const Eigen::MatrixXd v_all = index_values(beta, data);
    o.vg.resize(o.g.size(), beta.d());
    for (int i = 0; i < o.g.size(); ++i) o.vg.row(i) = v_all.row(o.g.order[i]);
    o.horizon = group == Group::Transplant ? data.tau - *w : data.tau;
    return o;
}

} // namespace

double cum_hazard(Group group, double t, const Eigen::VectorXd& v,
                  std::optional<double> w, const IndexMatrix& beta,
                  const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).cum_hazard(t);
}

StepHazard cum_hazard_path(Group group, const Eigen::VectorXd& v,
                           std::optional<double> w, const IndexMatrix& beta,
                           const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).step();
}

Eigen::VectorXd cum_hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                                std::optional<double> w, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).cum_hazard_grad(t);
}

double hazard(Group group, double t, const Eigen::VectorXd& v,
              std::optional<double> w, const IndexMatrix& beta,
              const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).hazard(t);
}

Eigen::VectorXd hazard_grad(Group group, double t, const Eigen::VectorXd& v,
                            std::optional<double> w, const IndexMatrix& beta,
                            const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).hazard_grad(t);
}

double mrl(Group group, double t, const Eigen::VectorXd& v,
           std::optional<double> w, const IndexMatrix& beta,
           const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    double tg = t;
    if (group == Group::Transplant) {
        if (t < *w) throw EstimationError("transplant-group residual life needs t >= w");
        tg = t - *w;
    }
    if (t > data.tau) throw EstimationError("evaluation time beyond horizon");
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).mrl(tg);
}

MrlDerivs mrl_derivs(Group group, double t, const Eigen::VectorXd& v,
                     std::optional<double> w, const IndexMatrix& beta,
                     const Dataset& data, const BandwidthConfig& bw) {
    OneShot o = one_shot(group, w, beta, data, bw);
    double tg = t;
    if (group == Group::Transplant) {
        if (t < *w) throw EstimationError("transplant-group residual life needs t >= w");
        tg = t - *w;
    }
    if (t > data.tau) throw EstimationError("evaluation time beyond horizon");
    return SmoothedCurves(o.g, o.vg, v, w.value_or(0.0), bw, o.horizon).mrl_derivs(tg);
}

namespace {

// shared loop for the conditional at-risk expectations: same-group kernel
// weights centered at subject i, at-risk membership on the absolute clock
struct CondSums {
    double den = 0.0;          // plain kernel sum over the group
    double num = 0.0;          // at-risk kernel sum
    Eigen::VectorXd numx;      // at-risk kernel sum against lower covariates
};

CondSums cond_sums(double t, int i, const IndexMatrix& beta, const Dataset& data,
                   const BandwidthConfig& bw, bool with_x) {
    if (i < 0 || i >= data.n()) throw EstimationError("subject index out of range");
    if (!(t >= 0.0)) throw EstimationError("evaluation time must be nonnegative");
    const Subject& si = data.subjects[i];
    const Group group = subject_group(si);
    const bool joint = group == Group::Transplant;
    const int d = beta.d();
    const int pl = beta.p() - d;
    if (joint && !(bw.h_w > 0.0))
        throw EstimationError("transplant-direction bandwidth must be positive");

    const Eigen::MatrixXd b = beta.full();
    const Eigen::VectorXd vi = b.transpose() * si.x;

    CondSums s;
    if (with_x) s.numx = Eigen::VectorXd::Zero(pl);
    bool any = false;
    for (int j = 0; j < data.n(); ++j) {
        const Subject& sj = data.subjects[j];
        if (subject_group(sj) != group) continue;
        any = true;
        double wj = 1.0;
        const Eigen::VectorXd vj = b.transpose() * sj.x;
        for (int k = 0; k < d; ++k)
            wj *= kernel_eval(bw.kernel, (vj[k] - vi[k]) / bw.h[k]) / bw.h[k];
        if (joint) wj *= kernel_eval(bw.kernel, (*sj.w - *si.w) / bw.h_w) / bw.h_w;
        s.den += wj;
        if (sj.z >= t) {
            s.num += wj;
            if (with_x) s.numx += wj * sj.x.tail(pl);
        }
    }
    if (!any) throw EstimationError("empty group for subject " + std::to_string(i));
    if (!(s.den >= kTrimDenominator))
        throw EstimationError("trimmed cell at t=" + std::to_string(t) + ", subject " +
                              std::to_string(i));
    return s;
}

} // namespace

double cond_at_risk(double t, int i, const IndexMatrix& beta, const Dataset& data,
                    const BandwidthConfig& bw) {
    const CondSums s = cond_sums(t, i, beta, data, bw, false);
    return s.num / s.den;
}

Eigen::VectorXd cond_at_risk_xl(double t, int i, const IndexMatrix& beta,
                                const Dataset& data, const BandwidthConfig& bw) {
    const CondSums s = cond_sums(t, i, beta, data, bw, true);
    return s.numx / s.den;
}

} // namespace mrl
