#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace coverblip {

using Index = Eigen::Index;
using Complex = std::complex<double>;

/// Spatio-temporal image: rows are voxels, columns are time frames.
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Row-major table of vectors (dictionary atoms, point sets). Each row is one
/// point, so a row is contiguous in memory.
template <typename Scalar>
using RowTable = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexRowTable = RowTable<Complex>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on malformed inputs: mismatched dimensions, empty datasets, ...
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised when reading a malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Raised when an iterative solve has to abort.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace coverblip
