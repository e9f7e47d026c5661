#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "coverblip/types.hpp"

namespace coverblip {

/// NMR parameters of one fingerprint: relaxation times in msec, off-resonance in Hz.
struct ParameterTriple {
  double t1 = 0.0;
  double t2 = 0.0;
  double b0 = 0.0;
  friend bool operator==(const ParameterTriple&, const ParameterTriple&) = default;
};

/// Quantisation grid. Combinations with t2 > t1 are dropped when the
/// dictionary is generated.
struct ParameterGrid {
  std::vector<double> t1_values;
  std::vector<double> t2_values;
  std::vector<double> b0_values;

  [[nodiscard]] Index unfiltered_size() const {
    return static_cast<Index>(t1_values.size() * t2_values.size() * b0_values.size());
  }
};

/// Expands colon ranges such as "100:40:2000,2200:200:6000" (inclusive
/// end points, optional step defaulting to 1) into a list of values.
std::vector<double> parse_ranges(std::string_view text);

/// Surviving (t1, t2, b0) combinations in generation order: t1 outermost,
/// b0 innermost. Throws on an empty or non-increasing axis.
std::vector<ParameterTriple> surviving_triples(const ParameterGrid& grid);

/// Unnormalised surrogate fingerprint
///   D(t) = (1 - 2 e^{-t TR/T1}) e^{-t TR/T2} e^{i 2 pi B0 t TR / 1000},  t = 1..length.
ComplexVector fingerprint(const ParameterTriple& params, double tr_ms, Index length);

/// Unit-norm fingerprint dictionary with its parameter look-up table.
class Dictionary {
 public:
  Dictionary() = default;
  Dictionary(ComplexRowTable atoms, Eigen::VectorXd norms, std::vector<ParameterTriple> table, double tr_ms,
             Index unfiltered_count);

  [[nodiscard]] Index size() const { return atoms_.rows(); }
  [[nodiscard]] Index length() const { return atoms_.cols(); }
  [[nodiscard]] double tr_ms() const { return tr_ms_; }
  /// Grid combinations before the t2 <= t1 filter.
  [[nodiscard]] Index unfiltered_count() const { return unfiltered_count_; }

  /// Row j holds atom j.
  [[nodiscard]] const ComplexRowTable& atoms() const { return atoms_; }
  /// Atom norms before normalisation.
  [[nodiscard]] const Eigen::VectorXd& norms() const { return norms_; }
  [[nodiscard]] const std::vector<ParameterTriple>& table() const { return table_; }

  /// Parameters that generated atom j.
  [[nodiscard]] const ParameterTriple& lookup(Index j) const;

  /// Index of an exact parameter triple, or -1.
  [[nodiscard]] Index find(const ParameterTriple& params) const;

 private:
  ComplexRowTable atoms_;
  Eigen::VectorXd norms_;
  std::vector<ParameterTriple> table_;
  double tr_ms_ = 0.0;
  Index unfiltered_count_ = 0;
};

Dictionary generate_fingerprints(const ParameterGrid& grid, double tr_ms, Index length);

/// Dictionary restricted to its top-s temporal SVD subspace.
///
/// A temporal vector x in C^L has coordinates V_s^H x. For an image whose
/// rows are voxels this is X * conj(V_s), and the way back is X~ * V_s^T.
class CompressedDictionary {
 public:
  CompressedDictionary() = default;
  CompressedDictionary(Eigen::MatrixXcd basis, ComplexRowTable atoms, Eigen::VectorXd renorm,
                       Eigen::VectorXd singular_values);

  [[nodiscard]] Index rank() const { return basis_.cols(); }
  [[nodiscard]] Index length() const { return basis_.rows(); }
  [[nodiscard]] Index size() const { return atoms_.rows(); }

  /// L x s, orthonormal columns.
  [[nodiscard]] const Eigen::MatrixXcd& basis() const { return basis_; }
  /// d x s, unit rows.
  [[nodiscard]] const ComplexRowTable& atoms() const { return atoms_; }
  /// Norm of each projected atom before renormalisation.
  [[nodiscard]] const Eigen::VectorXd& renorm_factors() const { return renorm_; }
  /// All singular values of the atom matrix, descending.
  [[nodiscard]] const Eigen::VectorXd& singular_values() const { return singular_values_; }

  [[nodiscard]] ComplexMatrix compress(const ComplexMatrix& image) const;
  [[nodiscard]] ComplexMatrix decompress(const ComplexMatrix& coords) const;

 private:
  Eigen::MatrixXcd basis_;
  ComplexRowTable atoms_;
  Eigen::VectorXd renorm_;
  Eigen::VectorXd singular_values_;
};

enum class SvdMethod { automatic, full, gram };

/// Full SVD when d*L <= 1e7 entries, otherwise eigen-decomposition of the
/// L x L matrix sum_j D_j D_j^H.
CompressedDictionary svd_compress(const Dictionary& dict, Index rank, SvdMethod method = SvdMethod::automatic);

/// sum_j ||D_j - V_s V_s^H D_j||^2, computed directly.
double compression_residual(const Dictionary& dict, const CompressedDictionary& compressed);

/// Binary container: magic, version, bytes per complex, d, L, TR,
/// unfiltered count, row-major atoms, norms, then T1/T2/B0 columns.
void save_dictionary(const Dictionary& dict, const std::string& path);
Dictionary load_dictionary(const std::string& path);

/// index,t1_ms,t2_ms,b0_hz
void export_lookup_csv(const Dictionary& dict, const std::string& path);

}  // namespace coverblip
