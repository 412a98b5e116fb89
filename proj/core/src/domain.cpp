#include "mrl/domain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace mrl {

namespace {

bool finite(double v) { return std::isfinite(v); }

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

double parse_number(const std::string& field, std::size_t row, const std::string& col) {
    const std::string t = trim(field);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
        throw DataError("cannot parse value '" + field + "' in column " + col +
                        " at row " + std::to_string(row));
    }
    return v;
}

} // namespace

Dataset make_dataset(std::vector<Subject> subjects, std::optional<double> tau,
                     std::vector<std::string> covariate_names) {
    if (subjects.size() < 2) {
        throw DataError("dataset needs at least 2 subjects, got " +
                        std::to_string(subjects.size()));
    }
    const int p = static_cast<int>(subjects.front().x.size());
    if (p < 1) throw DataError("dataset needs at least one covariate");

    double max_z = 0.0;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const Subject& s = subjects[i];
        const std::string at = " at row " + std::to_string(i + 1);
        if (static_cast<int>(s.x.size()) != p)
            throw DataError("inconsistent covariate count" + at);
        for (int k = 0; k < p; ++k)
            if (!finite(s.x[k])) throw DataError("non-finite covariate" + at);
        if (!finite(s.z)) throw DataError("non-finite observation time" + at);
        if (s.z < 0.0) throw DataError("negative observation time" + at);
        if (s.w) {
            if (!finite(*s.w)) throw DataError("non-finite transplant time" + at);
            if (*s.w < 0.0) throw DataError("negative transplant time" + at);
            if (*s.w > s.z)
                throw DataError("transplant after observation end" + at);
        }
        max_z = std::max(max_z, s.z);
    }

    Dataset ds;
    ds.subjects = std::move(subjects);
    ds.p = p;
    ds.tau = tau.value_or(max_z);
    if (ds.tau < max_z)
        throw DataError("tau " + fmt17(ds.tau) + " is below the largest observed time " +
                        fmt17(max_z));
    if (covariate_names.empty()) {
        for (int k = 1; k <= p; ++k) covariate_names.push_back("x" + std::to_string(k));
    } else if (static_cast<int>(covariate_names.size()) != p) {
        throw DataError("covariate name count does not match p");
    }
    ds.covariate_names = std::move(covariate_names);
    return ds;
}

IndexMatrix::IndexMatrix(int p, int d) : p_(p), d_(d) {
    if (d < 1 || d > p) throw DataError("index dimension d must satisfy 1 <= d <= p");
    lower_ = Eigen::MatrixXd::Zero(p - d, d);
}

IndexMatrix::IndexMatrix(int p, int d, Eigen::MatrixXd lower) : p_(p), d_(d) {
    if (d < 1 || d > p) throw DataError("index dimension d must satisfy 1 <= d <= p");
    if (lower.rows() != p - d || lower.cols() != d)
        throw DataError("lower block must be (p-d) x d");
    if (!lower.allFinite()) throw DataError("non-finite index coefficient");
    lower_ = std::move(lower);
}

IndexMatrix IndexMatrix::from_vecl(int p, int d, const Eigen::VectorXd& theta) {
    if (theta.size() != static_cast<Eigen::Index>(p - d) * d)
        throw DataError("vecl length must be (p-d)*d");
    Eigen::MatrixXd lower(p - d, d);
    for (int k = 0; k < d; ++k)
        lower.col(k) = theta.segment(static_cast<Eigen::Index>(k) * (p - d), p - d);
    return IndexMatrix(p, d, std::move(lower));
}

Eigen::MatrixXd IndexMatrix::full() const {
    Eigen::MatrixXd b(p_, d_);
    b.topRows(d_) = Eigen::MatrixXd::Identity(d_, d_);
    b.bottomRows(p_ - d_) = lower_;
    return b;
}

Eigen::VectorXd IndexMatrix::vecl() const {
    Eigen::VectorXd theta(n_free());
    for (int k = 0; k < d_; ++k)
        theta.segment(static_cast<Eigen::Index>(k) * (p_ - d_), p_ - d_) = lower_.col(k);
    return theta;
}

Eigen::MatrixXd index_values(const IndexMatrix& beta, const Dataset& data) {
    if (beta.p() != data.p) throw DataError("index matrix p does not match dataset");
    const Eigen::MatrixXd b = beta.full();
    Eigen::MatrixXd v(data.n(), beta.d());
    for (int i = 0; i < data.n(); ++i) v.row(i) = (b.transpose() * data.subjects[i].x).transpose();
    return v;
}

Dataset load_dataset(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return load_dataset(in, schema);
}

Dataset load_dataset(std::istream& in, const CsvSchema& schema) {
    std::string line;
    std::optional<double> tau;

    if (!std::getline(in, line)) throw DataError("empty input");
    if (line.rfind("# tau=", 0) == 0) {
        tau = parse_number(line.substr(6), 0, "tau");
        if (!std::getline(in, line)) throw DataError("missing header row");
    }

    const std::vector<std::string> header = split_csv_line(line);
    auto col_of = [&](const std::string& name) -> int {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (trim(header[j]) == name) return static_cast<int>(j);
        return -1;
    };

    const int zc = col_of(schema.z_col);
    const int dc = col_of(schema.delta_col);
    const int wc = col_of(schema.w_col);  // optional column
    if (zc < 0) throw DataError("missing column '" + schema.z_col + "'");
    if (dc < 0) throw DataError("missing column '" + schema.delta_col + "'");

    std::vector<int> xcols;
    std::vector<std::string> xnames;
    if (schema.covariates.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j) {
            const int ji = static_cast<int>(j);
            if (ji == zc || ji == dc || ji == wc) continue;
            xcols.push_back(ji);
            xnames.push_back(trim(header[j]));
        }
    } else {
        for (const std::string& name : schema.covariates) {
            const int j = col_of(name);
            if (j < 0) throw DataError("missing column '" + name + "'");
            xcols.push_back(j);
            xnames.push_back(name);
        }
    }
    if (xcols.empty()) throw DataError("no covariate columns found");

    std::vector<Subject> subjects;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != header.size())
            throw DataError("wrong field count at row " + std::to_string(row));

        Subject s;
        s.z = parse_number(f[zc], row, schema.z_col);
        const double dv = parse_number(f[dc], row, schema.delta_col);
        if (dv != 0.0 && dv != 1.0)
            throw DataError("delta must be 0 or 1 at row " + std::to_string(row));
        s.event = dv == 1.0;
        if (wc >= 0 && !trim(f[wc]).empty())
            s.w = parse_number(f[wc], row, schema.w_col);
        s.x.resize(xcols.size());
        for (std::size_t k = 0; k < xcols.size(); ++k)
            s.x[k] = parse_number(f[xcols[k]], row, xnames[k]);

        // surface row-level domain errors with the offending row index
        if (!finite(s.z)) throw DataError("non-finite observation time at row " + std::to_string(row));
        if (s.z < 0.0) throw DataError("negative observation time at row " + std::to_string(row));
        if (s.w && *s.w > s.z)
            throw DataError("transplant after observation end at row " + std::to_string(row));
        if (s.w && (*s.w < 0.0 || !finite(*s.w)))
            throw DataError("invalid transplant time at row " + std::to_string(row));
        if (!s.x.allFinite())
            throw DataError("non-finite covariate at row " + std::to_string(row));
        subjects.push_back(std::move(s));
    }
    return make_dataset(std::move(subjects), tau, std::move(xnames));
}

void save_dataset(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    save_dataset(data, out);
}

void save_dataset(const Dataset& data, std::ostream& out) {
    double max_z = 0.0;
    for (const Subject& s : data.subjects) max_z = std::max(max_z, s.z);
    if (data.tau != max_z) out << "# tau=" << fmt17(data.tau) << "\n";

    out << "z,delta,w";
    for (const std::string& name : data.covariate_names) out << "," << name;
    out << "\n";
    for (const Subject& s : data.subjects) {
        out << fmt17(s.z) << "," << (s.event ? 1 : 0) << ",";
        if (s.w) out << fmt17(*s.w);
        for (int k = 0; k < data.p; ++k) out << "," << fmt17(s.x[k]);
        out << "\n";
    }
}

} // namespace mrl
