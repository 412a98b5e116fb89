#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mrl/domain.hpp"
#include "mrl/errors.hpp"
#include "mrl/estimator.hpp"
#include "mrl/kernel.hpp"
#include "mrl/simgen.hpp"
#include "mrl/smoother.hpp"

namespace {

std::string fmt(double x) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::vector<double> split_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t pos = 0;
            double v = std::stod(tok, &pos);
            while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos])))
                ++pos;
            if (pos != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw CLI::ValidationError("bad number: " + tok);
        }
    }
    if (out.empty()) throw CLI::ValidationError("empty number list");
    return out;
}

// "start:stop:third" where an integer third counts intervals (inclusive
// endpoints, third+1 points) and a fractional third is a step size.  A bare
// number is a single-point grid.
std::vector<double> parse_range(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    try {
        if (parts.size() == 1) return {std::stod(parts[0])};
        if (parts.size() != 3) throw std::invalid_argument("range");
        const double start = std::stod(parts[0]);
        const double stop = std::stod(parts[1]);
        if (!(stop >= start)) throw std::invalid_argument("range");
        const bool is_count =
            parts[2].find_first_of(".eE") == std::string::npos;
        std::vector<double> grid;
        if (is_count) {
            const int count = std::stoi(parts[2]);
            if (count < 1) throw std::invalid_argument("range");
            for (int i = 0; i <= count; ++i)
                grid.push_back(start + (stop - start) * i / count);
        } else {
            const double step = std::stod(parts[2]);
            if (!(step > 0.0)) throw std::invalid_argument("range");
            const int count = static_cast<int>(std::floor((stop - start) / step + 1e-9));
            for (int i = 0; i <= count; ++i) grid.push_back(start + step * i);
        }
        return grid;
    } catch (const std::exception&) {
        throw CLI::ValidationError("bad range '" + text +
                                   "', expected start:stop:count or start:stop:step");
    }
}

mrl::KernelKind parse_kernel(const std::string& name) {
    if (name == "gauss2") return mrl::KernelKind::Gaussian2;
    if (name == "gauss4") return mrl::KernelKind::Gaussian4;
    throw CLI::ValidationError("unknown kernel '" + name + "' (gauss2 or gauss4)");
}

void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path);
    if (!out) throw mrl::DataError("cannot write " + path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mrl::DataError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct FitArgs {
    std::string data_path;
    int d = 1;
    double tol = 1e-6;
    int max_iter = 200;
    int starts = 5;
    std::uint64_t seed = 0;
    std::string h_list, kernel_name, init_list;
    double h_w = -1.0, b = -1.0, tau = -1.0;
    bool refresh_bw = false;
    std::string out_path;
};

mrl::Dataset load_with_tau(const std::string& path, double tau_override) {
    mrl::Dataset data = mrl::load_dataset(path);
    if (tau_override > 0.0) {
        double zmax = 0.0;
        for (const auto& s : data.subjects) zmax = std::max(zmax, s.z);
        if (tau_override < zmax)
            throw mrl::DataError("tau override is below the largest observed time");
        data.tau = tau_override;
    }
    return data;
}

int run_fit(const FitArgs& a) {
    mrl::Dataset data = load_with_tau(a.data_path, a.tau);
    mrl::FitConfig cfg;
    cfg.d = a.d;
    cfg.tol = a.tol;
    cfg.max_iter = a.max_iter;
    cfg.starts = a.starts;
    cfg.seed = a.seed;
    cfg.refresh_bw = a.refresh_bw;
    if (!a.init_list.empty()) {
        const auto vals = split_doubles(a.init_list);
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
        cfg.init = mrl::IndexMatrix::from_vecl(data.p, a.d, v);
    }
    if (!a.h_list.empty() || a.h_w >= 0.0 || a.b > 0.0 || !a.kernel_name.empty()) {
        mrl::BandwidthConfig bw = mrl::default_bandwidths(
            data, cfg.init.value_or(mrl::IndexMatrix(data.p, a.d)));
        if (!a.kernel_name.empty()) bw.kernel = parse_kernel(a.kernel_name);
        if (!a.h_list.empty()) {
            const auto vals = split_doubles(a.h_list);
            if (static_cast<int>(vals.size()) != a.d)
                throw CLI::ValidationError("--h needs one bandwidth per index dimension");
            bw.h = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
        }
        if (a.h_w >= 0.0) bw.h_w = a.h_w;
        if (a.b > 0.0) bw.b = a.b;
        cfg.bw = bw;
    }

    mrl::FitResult fit;
    try {
        fit = mrl::solve_beta(data, cfg);
    } catch (const mrl::NonConvergence& e) {
        std::cerr << "nonconvergence: " << e.what() << "\n";
        return 3;
    }
    std::cerr << "converged in " << fit.iterations << " iterations, |score| = "
              << fmt(fit.score_norm) << ", trimmed terms: " << fit.trimmed_terms << "\n";
    write_output(a.out_path, mrl::fit_result_json(fit) + "\n");
    return 0;
}

int run_predict(const std::string& fit_path, const std::string& data_path,
                const std::string& x_list, double t, double w, double tau) {
    const mrl::FitResult fit = mrl::fit_result_from_json(read_file(fit_path));
    const mrl::Dataset data = load_with_tau(data_path, tau);
    const auto vals = split_doubles(x_list);
    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
    const mrl::Improvement imp = mrl::improvement(t, x, w, fit, data, fit.bw);
    nlohmann::json out{{"improvement", imp.value},
                       {"se", imp.se},
                       {"m_transplant", imp.m_t},
                       {"m_control", imp.m_n},
                       {"se_transplant", imp.se_t},
                       {"se_control", imp.se_n}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

struct GridArgs {
    std::string fit_path, data_path, t_range, out_path;
    std::vector<std::string> v_ranges;
    double w = 0.0, tau = -1.0;
};

int run_grid(const GridArgs& a) {
    const mrl::FitResult fit = mrl::fit_result_from_json(read_file(a.fit_path));
    const mrl::Dataset data = load_with_tau(a.data_path, a.tau);
    const int d = fit.beta_hat.d();
    if (static_cast<int>(a.v_ranges.size()) != d)
        throw CLI::ValidationError("--v must be given once per index dimension");
    const std::vector<double> tgrid = parse_range(a.t_range);
    std::vector<std::vector<double>> vgrids;
    for (const auto& r : a.v_ranges) vgrids.push_back(parse_range(r));

    std::string csv = "t";
    if (d == 1)
        csv += ",v";
    else
        for (int k = 1; k <= d; ++k) csv += ",v" + std::to_string(k);
    csv += ",w,m_transplant,m_control,improvement,se_transplant,se_control\n";

    // Odometer over the v grids, innermost dimension first.
    std::vector<size_t> idx(d, 0);
    const auto advance = [&]() {
        for (int k = 0; k < d; ++k) {
            if (++idx[k] < vgrids[k].size()) return true;
            idx[k] = 0;
        }
        return false;
    };
    for (double t : tgrid) {
        std::fill(idx.begin(), idx.end(), 0);
        do {
            Eigen::VectorXd v(d);
            for (int k = 0; k < d; ++k) v[k] = vgrids[k][idx[k]];
            std::string mt, mn, se_t, se_n, impr;
            try {
                const double m = mrl::mrl(mrl::Group::NonTransplant, t, v, std::nullopt,
                                          fit.beta_hat, data, fit.bw);
                mn = fmt(m);
                const double var = mrl::mrl_variance(mrl::Group::NonTransplant, t, v,
                                                     std::nullopt, fit.beta_hat, data,
                                                     fit.bw);
                se_n = fmt(std::sqrt(std::max(0.0, var)));
            } catch (const mrl::EstimationError&) {
            } catch (const mrl::DataError&) {
            }
            if (t >= a.w) {
                try {
                    const double m = mrl::mrl(mrl::Group::Transplant, t, v, a.w,
                                              fit.beta_hat, data, fit.bw);
                    mt = fmt(m);
                    const double var = mrl::mrl_variance(mrl::Group::Transplant, t, v,
                                                         a.w, fit.beta_hat, data, fit.bw);
                    se_t = fmt(std::sqrt(std::max(0.0, var)));
                } catch (const mrl::EstimationError&) {
                } catch (const mrl::DataError&) {
                }
            }
            if (!mt.empty() && !mn.empty())
                impr = fmt(std::stod(mt) - std::stod(mn));
            csv += fmt(t);
            for (int k = 0; k < d; ++k) csv += "," + fmt(v[k]);
            csv += "," + fmt(a.w) + "," + mt + "," + mn + "," + impr + "," + se_t + "," +
                   se_n + "\n";
        } while (advance());
    }
    write_output(a.out_path, csv);
    return 0;
}

struct SimArgs {
    int study = 1;
    int n = 0;
    int reps = 200;
    bool reps_given = false;
    double censoring = 0.0;
    std::uint64_t seed = 0;
    double tol = 1e-6;
    int max_iter = 200;
    int starts = 5;
    std::string out_path;
    std::string sample_out;
};

int run_simulate(const SimArgs& a) {
    mrl::StudyId id;
    switch (a.study) {
        case 1: id = mrl::StudyId::S1; break;
        case 2: id = mrl::StudyId::S2; break;
        case 3: id = mrl::StudyId::S3; break;
        case 4: id = mrl::StudyId::S4; break;
        default: throw CLI::ValidationError("--study must be 1, 2, 3, or 4");
    }
    mrl::StudySpec spec = mrl::study_spec(id, a.n);
    if (!a.sample_out.empty()) {
        if (a.censoring > 0.0) {
            mrl::Rng cal = mrl::Rng::stream(a.seed, 0x100000000ull);
            spec.c_upper = mrl::calibrate_censoring(spec, a.censoring, cal);
        }
        mrl::Rng rng = mrl::Rng::stream(a.seed, 0);
        mrl::save_dataset(mrl::sample_dataset(spec, rng), a.sample_out);
        std::cerr << "wrote one replicate to " << a.sample_out << "\n";
        if (!a.reps_given) return 0;
    }
    mrl::FitConfig cfg;
    cfg.tol = a.tol;
    cfg.max_iter = a.max_iter;
    cfg.starts = a.starts;
    const mrl::McSummary summary =
        mrl::run_monte_carlo(spec, a.reps, a.censoring, cfg, a.seed);
    std::cerr << "replicates used: " << summary.reps_used << "/" << summary.reps_requested
              << (summary.flagged ? " (flagged: failure rate above 5%)" : "") << "\n";
    write_output(a.out_path, mrl::mc_summary_csv(summary));
    return 0;
}

int run_validate(const std::string& data_path) {
    const mrl::Dataset data = mrl::load_dataset(data_path);
    int events = 0, transplants = 0;
    for (const auto& s : data.subjects) {
        events += s.event ? 1 : 0;
        transplants += s.w.has_value() ? 1 : 0;
    }
    const int n = data.n();
    std::cout << "n: " << n << "\n"
              << "covariates: " << data.p << "\n"
              << "tau: " << fmt(data.tau) << "\n"
              << "censoring rate: " << fmt(1.0 - static_cast<double>(events) / n) << "\n"
              << "transplant fraction: " << fmt(static_cast<double>(transplants) / n)
              << "\n";
    for (int j = 0; j < data.p; ++j) {
        double mean = 0.0, lo = data.subjects[0].x[j], hi = lo;
        for (const auto& s : data.subjects) {
            mean += s.x[j];
            lo = std::min(lo, s.x[j]);
            hi = std::max(hi, s.x[j]);
        }
        mean /= n;
        double ss = 0.0;
        for (const auto& s : data.subjects) {
            const double dev = s.x[j] - mean;
            ss += dev * dev;
        }
        const double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        std::cout << data.covariate_names[j] << ": mean " << fmt(mean) << ", sd "
                  << fmt(sd) << ", range [" << fmt(lo) << ", " << fmt(hi) << "]\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semiparametric mean residual life regression with a time-dependent "
                 "treatment"};
    app.require_subcommand(1);
    // --h is a real option on `fit`, so help is long-form only everywhere.
    app.set_help_flag("--help", "Print help and exit");

    FitArgs fit_args;
    auto* fit = app.add_subcommand("fit", "Estimate index coefficients from a CSV dataset");
    fit->set_help_flag("--help", "Print help and exit");
    fit->add_option("--data", fit_args.data_path, "Input CSV")->required();
    fit->add_option("--d", fit_args.d, "Index dimension");
    fit->add_option("--tol", fit_args.tol, "Score norm tolerance");
    fit->add_option("--max-iter", fit_args.max_iter, "Iteration cap");
    fit->add_option("--starts", fit_args.starts, "Multi-start attempts");
    fit->add_option("--seed", fit_args.seed, "Multi-start RNG seed");
    fit->add_option("--h", fit_args.h_list, "Index bandwidths, comma separated");
    fit->add_option("--hw", fit_args.h_w, "Transplant-time bandwidth");
    fit->add_option("--b", fit_args.b, "Hazard smoothing bandwidth");
    fit->add_option("--kernel", fit_args.kernel_name, "Kernel: gauss2 or gauss4");
    fit->add_option("--init", fit_args.init_list, "Initial free coefficients");
    fit->add_option("--tau", fit_args.tau, "Follow-up horizon override");
    fit->add_flag("--refresh-bw", fit_args.refresh_bw, "Recompute bandwidths per iteration");
    fit->add_option("--out", fit_args.out_path, "Fit JSON path (default stdout)");

    std::string pred_fit, pred_data, pred_x;
    double pred_t = 0.0, pred_w = 0.0, pred_tau = -1.0;
    auto* predict =
        app.add_subcommand("predict", "Estimated improvement for one covariate profile");
    predict->add_option("--fit", pred_fit, "Fit JSON from `fit`")->required();
    predict->add_option("--data", pred_data, "Dataset the fit was computed on")->required();
    predict->add_option("--x", pred_x, "Covariate row, comma separated")->required();
    predict->add_option("--t", pred_t, "Evaluation time")->required();
    predict->add_option("--w", pred_w, "Transplant time (0 <= w <= t)")->required();
    predict->add_option("--tau", pred_tau, "Follow-up horizon override");

    GridArgs grid_args;
    auto* grid = app.add_subcommand("grid", "Mean residual life surface over t and index");
    grid->add_option("--fit", grid_args.fit_path, "Fit JSON from `fit`")->required();
    grid->add_option("--data", grid_args.data_path, "Dataset the fit was computed on")
        ->required();
    grid->add_option("--t", grid_args.t_range, "Time grid start:stop:count")->required();
    grid->add_option("--v", grid_args.v_ranges,
                     "Index grid start:stop:count, once per dimension")
        ->required();
    grid->add_option("--w", grid_args.w, "Transplant time for the treated surface");
    grid->add_option("--tau", grid_args.tau, "Follow-up horizon override");
    grid->add_option("--out", grid_args.out_path, "CSV path (default stdout)");

    SimArgs sim_args;
    auto* sim = app.add_subcommand("simulate", "Monte Carlo benchmark on built-in designs");
    sim->add_option("--study", sim_args.study, "Design: 1, 2, 3, or 4")->required();
    sim->add_option("--n", sim_args.n, "Sample size (0 = design default)");
    auto* reps_opt = sim->add_option("--reps", sim_args.reps, "Replicates");
    sim->add_option("--censoring", sim_args.censoring, "Target censoring rate");
    sim->add_option("--seed", sim_args.seed, "RNG seed");
    sim->add_option("--tol", sim_args.tol, "Solver tolerance");
    sim->add_option("--max-iter", sim_args.max_iter, "Solver iteration cap");
    sim->add_option("--starts", sim_args.starts, "Multi-start attempts");
    sim->add_option("--out", sim_args.out_path, "Summary CSV path (default stdout)");
    sim->add_option("--sample-out", sim_args.sample_out,
                    "Also write one simulated replicate as a dataset CSV");

    std::string val_data;
    auto* validate = app.add_subcommand("validate", "Sanity report for a dataset CSV");
    validate->add_option("--data", val_data, "Input CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    sim_args.reps_given = reps_opt->count() > 0;

    try {
        if (fit->parsed()) return run_fit(fit_args);
        if (predict->parsed())
            return run_predict(pred_fit, pred_data, pred_x, pred_t, pred_w, pred_tau);
        if (grid->parsed()) return run_grid(grid_args);
        if (sim->parsed()) return run_simulate(sim_args);
        if (validate->parsed()) return run_validate(val_data);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mrl::NonConvergence& e) {
        std::cerr << "nonconvergence: " << e.what() << "\n";
        return 3;
    } catch (const mrl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 4;
    } catch (const mrl::EstimationError& e) {
        std::cerr << "estimation error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
