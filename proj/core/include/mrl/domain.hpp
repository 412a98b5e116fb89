#pragma once

#include "mrl/errors.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mrl {

// One observation: covariates, follow-up time z = min(death, censoring),
// event indicator, and the transplant time when one was observed during
// follow-up.  A missing w means the subject was never seen transplanted;
// when w is present it satisfies w <= z.
struct Subject {
    Eigen::VectorXd x;
    double z = 0.0;
    bool event = false;
    std::optional<double> w;
};

// Group membership at a subject's own end of follow-up: Transplant when a
// transplant time was observed, NonTransplant otherwise.  All smoothing and
// risk-set computations are restricted to one group's subjects at a time.
enum class Group { NonTransplant, Transplant };

inline Group subject_group(const Subject& s) {
    return s.w.has_value() ? Group::Transplant : Group::NonTransplant;
}

struct Dataset {
    std::vector<Subject> subjects;
    std::vector<std::string> covariate_names;  // size p
    int p = 0;
    double tau = 0.0;  // evaluation horizon, >= max observed z

    int n() const { return static_cast<int>(subjects.size()); }
};

// Validates and assembles a dataset.  tau defaults to the largest observed
// z; an explicit tau must not be smaller than that.
Dataset make_dataset(std::vector<Subject> subjects,
                     std::optional<double> tau = std::nullopt,
                     std::vector<std::string> covariate_names = {});

// p x d index coefficient matrix.  The top d x d block is pinned to the
// identity for identifiability; only the lower (p-d) x d block is free.
// vecl() stacks the free block column-major; that ordering defines the
// parameter vector used by the score, the solver, and the covariance
// estimates.
class IndexMatrix {
public:
    IndexMatrix(int p, int d);
    IndexMatrix(int p, int d, Eigen::MatrixXd lower);
    static IndexMatrix from_vecl(int p, int d, const Eigen::VectorXd& theta);

    int p() const { return p_; }
    int d() const { return d_; }
    int n_free() const { return (p_ - d_) * d_; }

    const Eigen::MatrixXd& lower() const { return lower_; }
    Eigen::MatrixXd full() const;
    Eigen::VectorXd vecl() const;

private:
    int p_;
    int d_;
    Eigen::MatrixXd lower_;  // (p-d) x d
};

// n x d matrix of index values beta^T x_i.
Eigen::MatrixXd index_values(const IndexMatrix& beta, const Dataset& data);

// CSV column mapping.  Reserved default names: z, delta, w.  When
// covariates is empty every remaining column is taken as a covariate in
// header order.
struct CsvSchema {
    std::string z_col = "z";
    std::string delta_col = "delta";
    std::string w_col = "w";
    std::vector<std::string> covariates;
};

// CSV I/O.  Plain comma separation, '.' decimal point, header row, UTF-8.
// An empty w field means "never transplanted".  An optional leading
// "# tau=<value>" comment preserves a non-default horizon; numbers are
// written with 17 significant digits so load(save(ds)) reproduces ds
// exactly.
Dataset load_dataset(const std::string& path, const CsvSchema& schema = {});
Dataset load_dataset(std::istream& in, const CsvSchema& schema = {});
void save_dataset(const Dataset& data, const std::string& path);
void save_dataset(const Dataset& data, std::ostream& out);

} // namespace mrl
