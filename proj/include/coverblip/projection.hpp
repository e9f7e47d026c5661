#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "coverblip/cover_tree.hpp"
#include "coverblip/types.hpp"

namespace coverblip {

/// Per-voxel projection onto the cone {gamma * D_j : gamma >= 0}.
struct ConeProjection {
  std::vector<Index> indices;
  Eigen::VectorXd gammas;
  /// Row v is gammas[v] * atom[indices[v]].
  ComplexMatrix projected;
  /// Distance evaluations spent on the search.
  std::uint64_t cost = 0;
};

/// max(Re <z, atom> / ||atom||^2, 0)
inline double cone_gain(const Eigen::Ref<const Eigen::RowVectorXcd>& z,
                        const Eigen::Ref<const Eigen::RowVectorXcd>& atom) {
  const double g = std::real(atom.dot(z)) / atom.squaredNorm();
  return g > 0.0 ? g : 0.0;
}

/// Brute-force projection against unit-norm atoms. The nearest atom to
/// Z_v is the one maximising Re <Z_v, D_j>, found by one real GEMM per
/// block of voxels. Ties go to the lowest index. The atom table must
/// outlive the projector.
class ExactConeProjector {
 public:
  explicit ExactConeProjector(const ComplexRowTable& atoms);

  [[nodiscard]] ConeProjection project(const ComplexMatrix& z) const;

  [[nodiscard]] Index size() const { return atoms_.rows(); }
  [[nodiscard]] Index dim() const { return atoms_.cols(); }
  /// Atom correlations evaluated since construction.
  [[nodiscard]] std::uint64_t evaluations() const { return evaluations_.load(); }

 private:
  const ComplexRowTable& atoms_;
  Eigen::MatrixXd stacked_;  // d x 2L: [Re D, Im D]
  mutable std::atomic<std::uint64_t> evaluations_{0};
};

ConeProjection project_cone_exact(const ComplexMatrix& z, const ComplexRowTable& atoms);

/// Cover-tree projection of the normalised rows Z_v / ||Z_v||. With
/// `previous`, each search is warm-started from the previous atom and that
/// atom is kept whenever it is at least as close. Zero rows project to zero
/// and keep their previous index (or 0).
ConeProjection project_cone_ann(const ComplexMatrix& z, const CoverTree<Complex>& tree, double epsilon,
                                const ConeProjection* previous = nullptr);

}  // namespace coverblip
