#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gwib {

using scalar_t = double;
using index_t  = Eigen::Index;
using matrix_t = Eigen::Matrix<scalar_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using vector_t = Eigen::Matrix<scalar_t, Eigen::Dynamic, 1>;

// Dense row-major real matrix, the universal carrier for distance/cost
// matrices and transport plans.
using DenseMatrix = matrix_t;

// Error taxonomy shared by all modules.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct SolverFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}

inline void require_finite(const matrix_t& m, const std::string& what) {
    if (!m.allFinite()) throw InvalidInput(what + ": non-finite entries");
}

}  // namespace gwib
