#include "coverblip/projection.hpp"

namespace coverblip {

namespace {

constexpr Index kBlockRows = 256;

ConeProjection empty_projection(Index n, Index dim) {
  ConeProjection p;
  p.indices.assign(static_cast<std::size_t>(n), 0);
  p.gammas = Eigen::VectorXd::Zero(n);
  p.projected = ComplexMatrix::Zero(n, dim);
  return p;
}

}  // namespace

ExactConeProjector::ExactConeProjector(const ComplexRowTable& atoms) : atoms_(atoms), stacked_(atoms.rows(), 2 * atoms.cols()) {
  if (atoms.rows() == 0) throw InvalidArgument("empty atom set");
  stacked_.leftCols(atoms.cols()) = atoms.real();
  stacked_.rightCols(atoms.cols()) = atoms.imag();
}

ConeProjection ExactConeProjector::project(const ComplexMatrix& z) const {
  if (z.cols() != dim()) {
    throw InvalidArgument("dimension mismatch: atoms have " + std::to_string(dim()) + " entries, rows of Z have " +
                          std::to_string(z.cols()));
  }
  const Index n = z.rows();
  const Index length = dim();
  auto out = empty_projection(n, length);
  const Index blocks = (n + kBlockRows - 1) / kBlockRows;
#pragma omp parallel
  {
    Eigen::MatrixXd zs;
    Eigen::MatrixXd scores;
#pragma omp for schedule(dynamic)
    for (Index b = 0; b < blocks; ++b) {
      const Index first = b * kBlockRows;
      const Index rows = std::min(kBlockRows, n - first);
      zs.resize(rows, 2 * length);
      zs.leftCols(length) = z.middleRows(first, rows).real();
      zs.rightCols(length) = z.middleRows(first, rows).imag();
      scores.noalias() = zs * stacked_.transpose();
      for (Index r = 0; r < rows; ++r) {
        Index best = 0;
        double best_score = scores(r, 0);
        for (Index j = 1; j < scores.cols(); ++j) {
          if (scores(r, j) > best_score) {
            best_score = scores(r, j);
            best = j;
          }
        }
        const Index v = first + r;
        out.indices[static_cast<std::size_t>(v)] = best;
        out.gammas(v) = cone_gain(z.row(v), atoms_.row(best));
        out.projected.row(v) = out.gammas(v) * atoms_.row(best);
      }
      evaluations_.fetch_add(static_cast<std::uint64_t>(rows * size()), std::memory_order_relaxed);
    }
  }
  out.cost = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(size());
  return out;
}

ConeProjection project_cone_exact(const ComplexMatrix& z, const ComplexRowTable& atoms) {
  return ExactConeProjector(atoms).project(z);
}

ConeProjection project_cone_ann(const ComplexMatrix& z, const CoverTree<Complex>& tree, double epsilon,
                                const ConeProjection* previous) {
  if (z.cols() != tree.dim()) {
    throw InvalidArgument("dimension mismatch: tree has dim " + std::to_string(tree.dim()) + ", rows of Z have " +
                          std::to_string(z.cols()));
  }
  if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  if (previous && static_cast<Index>(previous->indices.size()) != z.rows()) {
    throw InvalidArgument("previous projection has a different voxel count");
  }
  const Index n = z.rows();
  const auto& atoms = tree.points();
  auto out = empty_projection(n, z.cols());
  std::uint64_t cost = 0;
#pragma omp parallel for schedule(dynamic, 64) reduction(+ : cost)
  for (Index v = 0; v < n; ++v) {
    const auto slot = static_cast<std::size_t>(v);
    const std::optional<Index> warm =
        previous ? std::optional<Index>(previous->indices[slot]) : std::nullopt;
    const double norm = z.row(v).norm();
    if (norm == 0.0) {
      out.indices[slot] = warm.value_or(0);
      continue;
    }
    const ComplexVector query = z.row(v).transpose() / norm;
    const auto r = tree.ann_search(query, epsilon, warm);
    cost += r.cost;
    Index chosen = r.index;
    if (warm && *warm != chosen) {
      const double dw = *r.warm_start_distance;
      if (dw < r.distance || (dw == r.distance && *warm < chosen)) chosen = *warm;
    }
    out.indices[slot] = chosen;
    out.gammas(v) = cone_gain(z.row(v), atoms.row(chosen));
    out.projected.row(v) = out.gammas(v) * atoms.row(chosen);
  }
  out.cost = cost;
  return out;
}

}  // namespace coverblip
