#include "coverblip/solver.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace coverblip {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Iterates live either in the full temporal space or in the coordinates of
// a compressed basis.
struct IterateSpace {
  const ComplexRowTable& atoms;
  const CompressedDictionary* compressed = nullptr;

  [[nodiscard]] ComplexMatrix lift(const ComplexMatrix& x) const {
    return compressed ? compressed->decompress(x) : x;
  }
  [[nodiscard]] ComplexMatrix lower(const ComplexMatrix& x) const {
    return compressed ? compressed->compress(x) : x;
  }
};

class LossWeights {
 public:
  LossWeights(const ForwardOperator& op, bool enabled) {
    if (enabled && op.weights().size() != 0) weights_ = op.weights();
  }

  [[nodiscard]] ComplexMatrix apply(ComplexMatrix r) const {
    if (weights_.size() != 0) r.array() *= weights_.array().cast<Complex>();
    return r;
  }

  /// sum_i w_i |r_i|^2
  [[nodiscard]] double squared_norm(const ComplexMatrix& r) const {
    if (weights_.size() == 0) return r.squaredNorm();
    return (r.cwiseAbs2().array() * weights_.array()).sum();
  }

 private:
  Eigen::MatrixXd weights_;
};

SolveResult run_solver(const ComplexMatrix& y, const ForwardOperator& op, const IterateSpace& space,
                       const CoverTree<Complex>* tree, const SolverConfig& cfg, const ComplexMatrix* gt) {
  const auto start = Clock::now();
  if (y.rows() != op.measurement_rows() || y.cols() != op.frames()) {
    throw InvalidArgument("measurements do not match the operator");
  }
  const Index length = space.compressed ? space.compressed->length() : space.atoms.cols();
  if (length != op.frames()) throw InvalidArgument("dictionary length does not match the operator frame count");
  if (gt && (gt->rows() != op.n() || gt->cols() != op.frames())) {
    throw InvalidArgument("ground truth does not match the operator");
  }
  if (!(cfg.zeta > 1.0)) throw InvalidArgument("zeta must exceed 1");
  if (!(cfg.epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  if (cfg.max_iters < 1 || cfg.max_shrink_per_iter < 0) throw InvalidArgument("bad iteration limits");
  if (cfg.mode == SolverMode::coverblip) {
    if (!tree) throw InvalidArgument("coverblip mode needs a cover tree");
    if (tree->dim() != space.atoms.cols() || tree->size() != space.atoms.rows()) {
      throw InvalidArgument("cover tree was not built on the solver's atoms");
    }
  }

  std::optional<ExactConeProjector> exact;
  if (cfg.mode != SolverMode::coverblip) exact.emplace(space.atoms);
  auto project = [&](const ComplexMatrix& z, const ConeProjection* prev) {
    auto p = exact ? exact->project(z) : project_cone_ann(z, *tree, cfg.epsilon, prev);
    if (cfg.projection_observer) cfg.projection_observer(z, p);
    return p;
  };

  const LossWeights weights(op, cfg.weights_enabled);
  double mu_base = cfg.fixed_step.value_or(
      cfg.mu_init.value_or(static_cast<double>(op.n()) / static_cast<double>(op.m())));
  if (!(mu_base > 0.0) || !std::isfinite(mu_base)) throw InvalidArgument("step size must be positive");
  double mu = mu_base;

  SolveResult result;
  SolveTrace& trace = result.trace;
  ComplexMatrix x = ComplexMatrix::Zero(op.n(), space.atoms.cols());
  ComplexMatrix ax = ComplexMatrix::Zero(y.rows(), y.cols());
  double fidelity = std::sqrt(weights.squared_norm(y));
  ConeProjection current;
  bool have_current = false;
  trace.stop_reason = "max_iters";

  for (int k = 1; k <= cfg.max_iters; ++k) {
    const auto iter_start = Clock::now();
    const ComplexMatrix gradient = space.lower(op.adjoint(weights.apply(ax - y)));
    if (cfg.step_policy == StepPolicy::reset_each_iter) mu = mu_base;

    ConeProjection candidate;
    ComplexMatrix candidate_ax;
    std::uint64_t cost = 0;
    auto trial = [&](double step) {
      candidate = project(x - step * gradient, have_current ? &current : nullptr);
      cost += candidate.cost;
      const double change = (candidate.projected - x).squaredNorm();
      if (change == 0.0) return StepTrial{0.0, 0.0};
      const ComplexMatrix image_step = op.apply(space.lift(candidate.projected - x));
      candidate_ax = ax + image_step;
      return StepTrial{change, weights.squared_norm(image_step)};
    };
    StepOutcome outcome;
    if (cfg.fixed_step) {
      outcome = {mu, 0, trial(mu).change == 0.0};
    } else {
      outcome = step_shrinkage(mu, cfg.zeta, cfg.max_shrink_per_iter, trial);
    }
    trace.total_cost += cost;
    if (outcome.fixed_point) {
      trace.stop_reason = "fixed_point";
      break;
    }
    mu = outcome.mu;
    x = std::move(candidate.projected);
    ax = std::move(candidate_ax);
    current = std::move(candidate);
    current.projected = x;
    have_current = true;

    IterationRecord rec;
    rec.k = k;
    rec.start_fidelity = fidelity;
    rec.fidelity = std::sqrt(weights.squared_norm(y - ax));
    rec.mu = mu;
    rec.shrinks = outcome.shrinks;
    rec.cost = cost;
    if (!std::isfinite(rec.fidelity)) {
      throw SolverError("non-finite fidelity at iteration " + std::to_string(k) + " (mu = " + std::to_string(mu) + ")");
    }
    fidelity = rec.fidelity;

    if (k == 1) {
      const double image_norm = ax.norm();
      if (image_norm > 0.0) {
        trace.kappa = y.norm() / image_norm;
        x *= trace.kappa;
        ax *= trace.kappa;
        current.projected = x;
        current.gammas *= trace.kappa;
        if (!cfg.fixed_step) {
          mu_base *= trace.kappa;
          mu *= trace.kappa;
        }
        fidelity = std::sqrt(weights.squared_norm(y - ax));
      }
    }
    if (gt) rec.nmse = (space.lift(x) - *gt).norm() / gt->norm();
    rec.seconds = seconds_since(iter_start);
    trace.iterations.push_back(rec);

    if (cfg.mode == SolverMode::tm) {
      trace.stop_reason = "single_pass";
      break;
    }
    if (k >= 2) {
      const double before = rec.start_fidelity * rec.start_fidelity;
      const double after = rec.fidelity * rec.fidelity;
      if (before == 0.0 || (before - after) / before < cfg.rel_tol) {
        trace.stop_reason = "rel_tol";
        break;
      }
    }
  }

  const Index n = op.n();
  result.image = space.lift(x);
  result.indices = have_current ? current.indices : std::vector<Index>(static_cast<std::size_t>(n), 0);
  // Raw cone gains; fill_maps turns them into proton densities.
  result.maps.pd = have_current ? current.gammas : Eigen::VectorXd::Zero(n);
  trace.total_seconds = seconds_since(start);
  return result;
}

void fill_maps(SolveResult& r, const Dictionary& dict, const Eigen::VectorXd* renorm) {
  const auto n = static_cast<Index>(r.indices.size());
  r.maps.t1.resize(n);
  r.maps.t2.resize(n);
  r.maps.b0.resize(n);
  for (Index v = 0; v < n; ++v) {
    const Index j = r.indices[static_cast<std::size_t>(v)];
    const auto& p = dict.lookup(j);
    r.maps.t1(v) = p.t1;
    r.maps.t2(v) = p.t2;
    r.maps.b0(v) = p.b0;
    if (renorm) r.maps.pd(v) /= (*renorm)(j);
  }
}

}  // namespace

std::string to_string(SolverMode mode) {
  switch (mode) {
    case SolverMode::tm: return "tm";
    case SolverMode::blip_exact: return "blip_exact";
    case SolverMode::coverblip: return "coverblip";
  }
  return "unknown";
}

SolverMode parse_solver_mode(const std::string& text) {
  if (text == "tm") return SolverMode::tm;
  if (text == "blip_exact" || text == "blip") return SolverMode::blip_exact;
  if (text == "coverblip") return SolverMode::coverblip;
  throw InvalidArgument("unknown solver mode '" + text + "'");
}

StepOutcome step_shrinkage(double mu, double zeta, int max_shrinks, const std::function<StepTrial(double)>& trial) {
  if (!(zeta > 1.0)) throw InvalidArgument("zeta must exceed 1");
  if (!(mu > 0.0)) throw InvalidArgument("step size must be positive");
  for (int shrinks = 0;; ++shrinks) {
    const StepTrial t = trial(mu);
    if (t.change == 0.0) return {mu, shrinks, true};
    if (t.image_change == 0.0 || mu < t.change / t.image_change) return {mu, shrinks, false};
    if (shrinks >= max_shrinks) {
      throw SolverError("step-size collapse: " + std::to_string(shrinks) + " shrinks, mu = " + std::to_string(mu) +
                        ", ratio = " + std::to_string(t.change / t.image_change));
    }
    mu /= zeta;
  }
}

SolveResult solve(const ComplexMatrix& measurements, const ForwardOperator& op, const Dictionary& dict,
                  const CoverTree<Complex>* tree, const SolverConfig& config, const ComplexMatrix* ground_truth) {
  SolveResult r = run_solver(measurements, op, IterateSpace{dict.atoms()}, tree, config, ground_truth);
  fill_maps(r, dict, nullptr);
  return r;
}

SolveResult solve_compressed(const ComplexMatrix& measurements, const ForwardOperator& op, const Dictionary& dict,
                             const CompressedDictionary& compressed, const CoverTree<Complex>* tree,
                             const SolverConfig& config, const ComplexMatrix* ground_truth) {
  if (compressed.size() != dict.size() || compressed.length() != dict.length()) {
    throw InvalidArgument("compressed dictionary does not belong to the dictionary");
  }
  SolveResult r =
      run_solver(measurements, op, IterateSpace{compressed.atoms(), &compressed}, tree, config, ground_truth);
  fill_maps(r, dict, &compressed.renorm_factors());
  return r;
}

ConvergenceCertificate make_certificate(double alpha, double beta, double spectral_norm, double epsilon, double zeta) {
  ConvergenceCertificate c;
  c.alpha = alpha;
  c.beta = beta;
  c.spectral_norm = spectral_norm;
  c.epsilon = epsilon;
  c.zeta = zeta;
  if (!(alpha > 0.0)) {
    const double inf = std::numeric_limits<double>::infinity();
    c.delta = c.rho = c.kappa_w = inf;
    return c;
  }
  c.embedding_evidence = true;
  const double phi = std::sqrt(2.0 * epsilon + epsilon * epsilon);
  c.delta = phi * spectral_norm / std::sqrt(alpha);
  c.rho = std::sqrt(std::max(zeta * beta / alpha - 1.0, 0.0)) + c.delta;
  c.kappa_w = 2.0 * std::sqrt(beta) / alpha + c.delta / std::sqrt(alpha);
  c.condition_ok = zeta * beta < (2.0 - 2.0 * c.delta + c.delta * c.delta) * alpha;
  return c;
}

ConvergenceCertificate certificate(const ForwardOperator& op, const ComplexRowTable& atoms, double epsilon,
                                   double zeta, Index pairs, std::uint64_t seed) {
  const auto est = estimate_bilipschitz(op, atoms, pairs, seed);
  return make_certificate(est.alpha, est.beta, estimate_spectral_norm(op), epsilon, zeta);
}

void write_trace_csv(const SolveTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << std::setprecision(10) << "iter,fidelity,mu,shrinks,cost,nmse,seconds\n";
  for (const auto& r : trace.iterations) {
    out << r.k << ',' << r.fidelity << ',' << r.mu << ',' << r.shrinks << ',' << r.cost << ',';
    if (r.nmse) out << *r.nmse;
    out << ',' << r.seconds << '\n';
  }
}

void write_map_csv(const Eigen::VectorXd& values, Index height, Index width, const std::string& path) {
  if (values.size() != height * width) throw InvalidArgument("map size does not match the grid");
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << std::setprecision(10);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) out << (c ? "," : "") << values(r * width + c);
    out << '\n';
  }
}

}  // namespace coverblip
