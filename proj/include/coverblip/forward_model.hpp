#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "coverblip/types.hpp"

namespace coverblip {

/// n x L image with its spatial grid. Voxel v sits at row v / width,
/// column v % width.
struct MrfImage {
  ComplexMatrix data;
  Index height = 0;
  Index width = 0;

  MrfImage() = default;
  MrfImage(ComplexMatrix values, Index h, Index w);

  [[nodiscard]] Index voxels() const { return data.rows(); }
  [[nodiscard]] Index frames() const { return data.cols(); }
};

/// Per-frame k-space sample sets with the same count m in every frame.
/// Flat k-space index is ky * width + kx.
class SamplingPattern {
 public:
  SamplingPattern() = default;
  SamplingPattern(Index n, std::vector<std::vector<Index>> frames);

  [[nodiscard]] Index n() const { return n_; }
  [[nodiscard]] Index m() const { return m_; }
  [[nodiscard]] Index frames() const { return static_cast<Index>(frames_.size()); }
  [[nodiscard]] const std::vector<Index>& frame(Index t) const { return frames_[static_cast<std::size_t>(t)]; }

 private:
  Index n_ = 0;
  Index m_ = 0;
  std::vector<std::vector<Index>> frames_;
};

/// Frame t samples `lines` full k-space rows spaced floor(h / lines) apart,
/// starting at row t mod spacing.
SamplingPattern make_epi_pattern(Index height, Index width, Index lines, Index frames);

/// Full sampling of all n locations in each frame.
SamplingPattern make_full_pattern(Index n, Index frames);

struct PatternSpec {
  Index height = 0;
  Index width = 0;
  Index frames = 0;
  Index lines_per_frame = 0;
  std::string offset_rule = "shift_by_one";
};

/// JSON object {h, w, L, lines_per_frame, offset_rule}.
PatternSpec load_pattern_spec(const std::string& path);
void save_pattern_spec(const PatternSpec& spec, const std::string& path);
SamplingPattern make_pattern(const PatternSpec& spec);

/// Linear map from n x L images to (c m) x L measurements. Column t of the
/// measurements holds frame t, coil-major.
class ForwardOperator {
 public:
  enum class Kind { cartesian_dft, cartesian_identity, dense };

  /// Subsampled unitary 2-D DFT. `coil_maps` is c x n (empty: one unit coil).
  static ForwardOperator cartesian(Index height, Index width, SamplingPattern pattern,
                                   ComplexMatrix coil_maps = {});
  /// Same sampling with the DFT replaced by the identity.
  static ForwardOperator cartesian_identity(Index height, Index width, SamplingPattern pattern,
                                            ComplexMatrix coil_maps = {});
  /// One m x n matrix shared by all frames.
  static ForwardOperator dense(ComplexMatrix matrix, Index frames);
  /// Independent m x n matrix per frame.
  static ForwardOperator dense_per_frame(std::vector<ComplexMatrix> matrices);

  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] Index n() const { return n_; }
  [[nodiscard]] Index m() const { return m_; }
  [[nodiscard]] Index frames() const { return frames_; }
  [[nodiscard]] Index coils() const { return coils_; }
  [[nodiscard]] Index measurement_rows() const { return coils_ * m_; }

  /// Nonnegative per-sample loss weights, measurement_rows() x L. Empty means
  /// all ones. apply and adjoint ignore them.
  [[nodiscard]] const Eigen::MatrixXd& weights() const { return weights_; }
  void set_weights(Eigen::MatrixXd weights);

  [[nodiscard]] ComplexMatrix apply(const ComplexMatrix& image) const;
  [[nodiscard]] ComplexMatrix adjoint(const ComplexMatrix& measurements) const;

 private:
  void check_image(const ComplexMatrix& image) const;
  void check_measurements(const ComplexMatrix& measurements) const;
  [[nodiscard]] const ComplexMatrix& frame_matrix(Index t) const;

  Kind kind_ = Kind::dense;
  Index n_ = 0;
  Index m_ = 0;
  Index frames_ = 0;
  Index coils_ = 1;
  Index height_ = 0;
  Index width_ = 0;
  SamplingPattern pattern_;
  ComplexMatrix coil_maps_;
  std::vector<ComplexMatrix> matrices_;
  Eigen::MatrixXd weights_;
};

/// i.i.d. complex Gaussian entries of variance 1/m.
ForwardOperator make_gaussian_operator(Index n, Index m, Index frames, std::uint64_t seed, bool per_frame = false);

/// Power iteration on A^H A; returns |||A|||.
double estimate_spectral_norm(const ForwardOperator& op, double rel_tol = 1e-8, int max_iters = 1000);

struct BilipschitzEstimate {
  double alpha = 0.0;
  double beta = 0.0;
  Index pairs = 0;
};

/// Extremes of ||A(x - x')||^2 / ||x - x'||^2 over random pairs of cone
/// points: each voxel gets a random atom times a random positive scale
/// (uniform in (0, 1] or drawn from `scales` when given).
BilipschitzEstimate estimate_bilipschitz(const ForwardOperator& op, const ComplexRowTable& atoms, Index pairs,
                                         std::uint64_t seed, std::span<const double> scales = {});

/// Exact extremes over every pair of cone points whose scales lie in
/// `scales`. Only feasible for a handful of voxels and atoms.
BilipschitzEstimate exhaustive_bilipschitz(const ForwardOperator& op, const ComplexRowTable& atoms,
                                           std::span<const double> scales);

}  // namespace coverblip
