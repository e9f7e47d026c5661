#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "coverblip/cover_tree.hpp"
#include "coverblip/dictionary.hpp"
#include "coverblip/forward_model.hpp"
#include "coverblip/projection.hpp"
#include "coverblip/types.hpp"

namespace coverblip {

/// tm: one projected back-projection. blip_exact: projected gradient with
/// brute-force projections. coverblip: the same with cover-tree searches.
enum class SolverMode { tm, blip_exact, coverblip };
enum class StepPolicy { reset_each_iter, carry_over };

std::string to_string(SolverMode mode);
SolverMode parse_solver_mode(const std::string& text);

struct SolverConfig {
  SolverMode mode = SolverMode::coverblip;
  double epsilon = 0.0;
  /// Defaults to n / m.
  std::optional<double> mu_init;
  double zeta = 2.0;
  int max_iters = 50;
  /// Stop once the relative decrease of the squared fidelity drops below this.
  double rel_tol = 1e-6;
  int max_shrink_per_iter = 60;
  StepPolicy step_policy = StepPolicy::reset_each_iter;
  /// Constant step size; disables shrinkage.
  std::optional<double> fixed_step;
  /// Weight the loss with the operator's sample weights.
  bool weights_enabled = false;
  /// Called with every gradient update and its projection, rejected step
  /// sizes included.
  std::function<void(const ComplexMatrix&, const ConeProjection&)> projection_observer;
};

struct IterationRecord {
  int k = 0;
  /// Fidelity ||Y - A(X^{k-1})|| of the iterate the step started from.
  double start_fidelity = 0.0;
  /// Fidelity ||Y - A(X^k)|| right after the projection, before any rescaling.
  double fidelity = 0.0;
  double mu = 0.0;
  int shrinks = 0;
  std::uint64_t cost = 0;
  std::optional<double> nmse;
  double seconds = 0.0;
};

struct SolveTrace {
  std::vector<IterationRecord> iterations;
  std::uint64_t total_cost = 0;
  double total_seconds = 0.0;
  /// Energy ratio ||Y|| / ||A(X^1)|| applied after the first iteration.
  double kappa = 1.0;
  /// "rel_tol", "max_iters", "fixed_point" or "single_pass".
  std::string stop_reason;

  [[nodiscard]] int iteration_count() const { return static_cast<int>(iterations.size()); }
};

/// Per-voxel parameter estimates.
struct ParameterMaps {
  Eigen::VectorXd t1;
  Eigen::VectorXd t2;
  Eigen::VectorXd b0;
  Eigen::VectorXd pd;
};

struct SolveResult {
  /// n x L estimate.
  ComplexMatrix image;
  std::vector<Index> indices;
  ParameterMaps maps;
  SolveTrace trace;
};

/// Result of one step-size trial: ||dX||^2 and the (weighted) ||A dX||^2.
struct StepTrial {
  double change = 0.0;
  double image_change = 0.0;
};

struct StepOutcome {
  double mu = 0.0;
  int shrinks = 0;
  bool fixed_point = false;
};

/// Shrinks mu by zeta until mu < change / image_change. The trial functor
/// recomputes the gradient step and projection for a given mu. A zero
/// image change counts as accepted; a zero change is a fixed point.
StepOutcome step_shrinkage(double mu, double zeta, int max_shrinks, const std::function<StepTrial(double)>& trial);

/// Iterative projected gradient with the atoms of `dict`. `tree` must be
/// built on dict.atoms() when mode is coverblip. `ground_truth` enables the
/// per-iteration NMSE.
SolveResult solve(const ComplexMatrix& measurements, const ForwardOperator& op, const Dictionary& dict,
                  const CoverTree<Complex>* tree, const SolverConfig& config,
                  const ComplexMatrix* ground_truth = nullptr);

/// Same iteration in the rank-s temporal subspace of `compressed`; the tree,
/// if any, is built on compressed.atoms(). Proton densities refer to the
/// unit-norm uncompressed fingerprints.
SolveResult solve_compressed(const ComplexMatrix& measurements, const ForwardOperator& op, const Dictionary& dict,
                             const CompressedDictionary& compressed, const CoverTree<Complex>* tree,
                             const SolverConfig& config, const ComplexMatrix* ground_truth = nullptr);

struct ConvergenceCertificate {
  double alpha = 0.0;
  double beta = 0.0;
  double spectral_norm = 0.0;
  double epsilon = 0.0;
  double zeta = 0.0;
  /// sqrt(2 eps + eps^2) |||A||| / sqrt(alpha)
  double delta = 0.0;
  /// sqrt(zeta beta / alpha - 1) + delta
  double rho = 0.0;
  /// 2 sqrt(beta) / alpha + delta / sqrt(alpha)
  double kappa_w = 0.0;
  /// zeta beta < (2 - 2 delta + delta^2) alpha
  bool condition_ok = false;
  /// False when alpha <= 0; the remaining fields are then infinite.
  bool embedding_evidence = false;
};

ConvergenceCertificate make_certificate(double alpha, double beta, double spectral_norm, double epsilon, double zeta);

/// Estimates the constants with estimate_bilipschitz and estimate_spectral_norm.
ConvergenceCertificate certificate(const ForwardOperator& op, const ComplexRowTable& atoms, double epsilon,
                                   double zeta, Index pairs = 2000, std::uint64_t seed = 1);

/// iter,fidelity,mu,shrinks,cost,nmse,seconds
void write_trace_csv(const SolveTrace& trace, const std::string& path);

/// One line per image row, comma separated.
void write_map_csv(const Eigen::VectorXd& values, Index height, Index width, const std::string& path);

}  // namespace coverblip
