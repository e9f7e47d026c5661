#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "coverblip/cover_tree.hpp"
#include "coverblip/dictionary.hpp"
#include "coverblip/forward_model.hpp"
#include "coverblip/harness.hpp"
#include "coverblip/projection.hpp"
#include "coverblip/solver.hpp"
#include "test_util.hpp"

using namespace coverblip;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// Least-squares line y = a + b x; returns {b, r^2}.
std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  return {slope, syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0};
}

double nmse(const ComplexMatrix& x, const ComplexMatrix& gt) { return (x - gt).norm() / gt.norm(); }

// ---------------------------------------------------------------------------
// 1. Every search result is within (1 + eps) of the brute-force distance.

template <typename Scalar>
void anns_trials(const RowTable<Scalar>& points, const std::vector<RowTable<Scalar>>& query_sets,
                 std::mt19937_64& rng, long& trials, long& failures, long& exact_mismatch) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto tree = CoverTree<Scalar>::build(points);
  const std::vector<double> epsilons = {0.0, 0.1, 0.4, 0.8, 1.6, 4.0};
  std::uniform_int_distribution<Index> pick(0, points.rows() - 1);
  std::bernoulli_distribution warm(0.3);
  for (const auto& queries : query_sets) {
    for (Index i = 0; i < queries.rows(); ++i) {
      const Vector q = queries.row(i).transpose();
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < points.rows(); ++j) best = std::min(best, euclidean_distance(points.row(j).transpose(), q));
      const double eps = epsilons[static_cast<std::size_t>(i) % epsilons.size()];
      const std::optional<Index> start = warm(rng) ? std::optional<Index>(pick(rng)) : std::nullopt;
      const auto r = tree.ann_search(q, eps, start);
      ++trials;
      const bool consistent = r.index >= 0 && r.distance == tree.distance_to(q, r.index);
      if (!consistent || !(r.distance <= (1.0 + eps) * best)) ++failures;
      if (eps == 0.0 && r.distance != best) ++exact_mismatch;
    }
  }
}

Outcome anns_correctness() {
  std::mt19937_64 rng(101);
  long trials = 0, failures = 0, exact_mismatch = 0;

  // Gaussian clouds, real and complex, several dimensions and sizes.
  std::uint64_t seed = 1;
  for (Index dim : {2, 5, 16, 64}) {
    for (Index d : {200, 1500, 5000}) {
      const auto pts = test::random_real_points(d, dim, seed++);
      RowTable<double> near = pts.topRows(200) + 0.05 * test::random_real_points(200, dim, seed++);
      anns_trials<double>(pts, {test::random_real_points(400, dim, seed++), near}, rng, trials, failures,
                          exact_mismatch);
    }
  }
  for (Index dim : {4, 32}) {
    const auto pts = test::random_complex_points(3000, dim, seed++);
    anns_trials<Complex>(pts, {test::random_complex_points(1000, dim, seed++)}, rng, trials, failures, exact_mismatch);
  }

  // Clustered data with exact duplicates.
  {
    RowTable<double> pts(4000, 8);
    const auto centres = test::random_real_points(20, 8, seed++);
    const auto jitter = test::random_real_points(4000, 8, seed++);
    for (Index i = 0; i < pts.rows(); ++i) pts.row(i) = 10.0 * centres.row(i % 20) + 1e-3 * jitter.row(i);
    for (Index i = 0; i < 200; ++i) pts.row(3999 - i) = pts.row(i);
    anns_trials<double>(pts, {10.0 * test::random_real_points(500, 8, seed++)}, rng, trials, failures,
                        exact_mismatch);
  }

  // Unit-norm fingerprint dictionaries with normalized noisy queries.
  for (const auto& [t1, t2, b0] : {std::tuple{"100:50:2000", "20:20:300", "-40:20:40"},
                                   std::tuple{"300:300:3000", "10:30:400", "0"}}) {
    const auto dict = generate_fingerprints({parse_ranges(t1), parse_ranges(t2), parse_ranges(b0)}, 8.0, 48);
    if (dict.size() > 5000) return {false, "fingerprint dictionary exceeds d = 5000"};
    ComplexRowTable q = dict.atoms().topRows(600) + 0.1 * test::random_complex_points(600, 48, seed++) / std::sqrt(48.0);
    q.rowwise().normalize();
    anns_trials<Complex>(dict.atoms(), {q}, rng, trials, failures, exact_mismatch);
  }

  const bool pass = trials >= 10000 && failures == 0 && exact_mismatch == 0;
  return {pass, fmt("%ld trials, %ld guarantee violations, %ld eps=0 mismatches", trials, failures, exact_mismatch)};
}

// ---------------------------------------------------------------------------
// 2. Structural invariants after build and after 1000 inserts.

template <typename Scalar>
bool structure_trial(const RowTable<Scalar>& initial, const RowTable<Scalar>& inserts, std::string& why) {
  auto tree = CoverTree<Scalar>::build(initial);
  auto violations = verify_invariants(tree, 1e-9);
  if (!violations.empty()) {
    why = "after build: " + to_string(violations.front().kind) + " " + violations.front().detail;
    return false;
  }
  for (Index i = 0; i < inserts.rows(); ++i) {
    tree.insert(inserts.row(i).transpose());
    if ((i + 1) % 250 == 0) {
      violations = verify_invariants(tree, 1e-9);
      if (!violations.empty()) {
        why = fmt("after %ld inserts: ", static_cast<long>(i + 1)) + to_string(violations.front().kind) + " " +
              violations.front().detail;
        return false;
      }
    }
  }
  return tree.size() == initial.rows() + inserts.rows();
}

Outcome structural_suite() {
  int trials = 0, failures = 0;
  std::string first_failure;
  auto record = [&](bool ok, const std::string& why) {
    ++trials;
    if (!ok) {
      ++failures;
      if (first_failure.empty()) first_failure = why;
    }
  };
  std::uint64_t seed = 200;
  for (Index dim : {1, 2, 3, 10, 40}) {
    std::string why;
    record(structure_trial<double>(test::random_real_points(1000, dim, seed), test::random_real_points(1000, dim, seed + 1), why), why);
    seed += 2;
  }
  for (Index dim : {3, 24}) {
    std::string why;
    record(structure_trial<Complex>(test::random_complex_points(800, dim, seed), test::random_complex_points(1000, dim, seed + 1), why), why);
    seed += 2;
  }
  {
    // Inserts far outside the initial spread force the root scale to grow.
    std::string why;
    const RowTable<double> inserts = 1e3 * test::random_real_points(1000, 4, seed + 1);
    record(structure_trial<double>(test::random_real_points(300, 4, seed), inserts, why), why);
    seed += 2;
  }
  {
    // Duplicates and near duplicates across six orders of magnitude.
    std::string why;
    RowTable<double> base = test::random_real_points(500, 3, seed);
    RowTable<double> inserts(1000, 3);
    const auto jitter = test::random_real_points(1000, 3, seed + 1);
    for (Index i = 0; i < inserts.rows(); ++i) {
      const double scale = std::pow(10.0, -static_cast<double>(i % 7));
      inserts.row(i) = base.row(i % 500) + (i % 7 == 6 ? 0.0 : scale) * jitter.row(i);
    }
    record(structure_trial<double>(base, inserts, why), why);
    seed += 2;
  }
  {
    const auto dict = generate_fingerprints({parse_ranges("100:40:2000"), parse_ranges("20:20:300"), parse_ranges("-40:20:40")}, 8.0, 32);
    ComplexRowTable extra = dict.atoms().bottomRows(1000) + 0.01 * test::random_complex_points(1000, 32, seed);
    extra.rowwise().normalize();
    std::string why;
    record(structure_trial<Complex>(dict.atoms().topRows(std::min<Index>(dict.size(), 4000)), extra, why), why);
  }
  return {failures == 0, fmt("%d/%d trials clean", trials - failures, trials) +
                             (first_failure.empty() ? "" : "; first: " + first_failure)};
}

// ---------------------------------------------------------------------------
// 3. Fidelity strictly decreases on every accepted iteration.

Outcome monotone_convergence() {
  const auto dict = test::manifold_dictionary_256();
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  PhantomOptions popt;
  const auto phantom = build_phantom(16, 16, popt, dict);

  struct Case {
    std::string name;
    ForwardOperator op;
    ComplexMatrix gt;
  };
  std::vector<Case> cases;
  cases.push_back({"epi", ForwardOperator::cartesian(16, 16, make_epi_pattern(16, 16, 4, dict.length())),
                   phantom.ground_truth.data});
  cases.push_back({"gaussian", make_gaussian_operator(64, 32, dict.length(), 31), test::on_model_image(dict.atoms(), 64, 32)});

  int runs = 0, violations = 0, iterations = 0;
  std::string where;
  for (const auto& c : cases) {
    for (std::optional<double> snr : {std::optional<double>{}, std::optional<double>{50.0}}) {
      const ComplexMatrix y = simulate_measurements(c.gt, c.op, snr, 33);
      for (double eps : {0.0, 0.4, 1.6}) {
        SolverConfig cfg;
        cfg.mode = SolverMode::coverblip;
        cfg.epsilon = eps;
        cfg.rel_tol = 1e-9;
        cfg.max_iters = 100;
        const auto r = solve(y, c.op, dict, &tree, cfg, &c.gt);
        const int bad = test::monotonicity_violations(r.trace);
        ++runs;
        iterations += r.trace.iteration_count();
        violations += bad;
        if (bad > 0 && where.empty()) where = fmt("; first in %s eps=%g snr=%s", c.name.c_str(), eps, snr ? "50" : "inf");
      }
    }
  }
  return {violations == 0, fmt("%d runs, %d accepted iterations, %d violations", runs, iterations, violations) + where};
}

// ---------------------------------------------------------------------------
// 4. Step sizes for a unitary operator with zeta = 2 and mu_init = 4.

Outcome step_bounds() {
  const auto dict = test::manifold_dictionary_256();
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  PhantomOptions popt;
  const auto phantom = build_phantom(16, 16, popt, dict);
  const auto op = ForwardOperator::cartesian(16, 16, make_full_pattern(256, dict.length()));

  int records = 0, outside = 0, too_many = 0;
  double lo = INFINITY, hi = 0.0;
  int max_shrinks = 0;
  for (std::optional<double> snr : {std::optional<double>{}, std::optional<double>{30.0}}) {
    const ComplexMatrix y = simulate_measurements(phantom.ground_truth.data, op, snr, 41);
    for (SolverMode mode : {SolverMode::blip_exact, SolverMode::coverblip}) {
      SolverConfig cfg;
      cfg.mode = mode;
      cfg.epsilon = 0.4;
      cfg.zeta = 2.0;
      cfg.mu_init = 4.0;
      const auto r = solve(y, op, dict, &tree, cfg);
      for (const auto& rec : r.trace.iterations) {
        ++records;
        lo = std::min(lo, rec.mu);
        hi = std::max(hi, rec.mu);
        max_shrinks = std::max(max_shrinks, rec.shrinks);
        if (!(rec.mu > 0.5 && rec.mu <= 1.0)) ++outside;
        if (rec.shrinks > 3) ++too_many;
      }
    }
  }
  return {records > 0 && outside == 0 && too_many == 0,
          fmt("%d iterations, mu in [%.17g, %.17g], %d outside (1/2, 1], max shrinks %d", records, lo, hi, outside,
              max_shrinks)};
}

// ---------------------------------------------------------------------------
// 5. Gaussian recovery with eps = 0.4.

Outcome gaussian_recovery() {
  const auto dict = test::manifold_dictionary_256();
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  int instances = 0, failed = 0;
  double worst_nmse = 0.0, worst_ratio = 0.0;
  int worst_iters = 0;
  std::string failing;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto op = make_gaussian_operator(64, 32, dict.length(), 500 + seed);
    const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 600 + seed);
    SolverConfig cfg;
    cfg.mode = SolverMode::coverblip;
    cfg.epsilon = 0.4;
    cfg.max_iters = 50;
    const auto r = solve(op.apply(gt), op, dict, &tree, cfg, &gt);
    const double err = nmse(r.image, gt);
    double ratio = 0.0;
    const auto& its = r.trace.iterations;
    for (std::size_t k = 1; k < its.size(); ++k) {
      ratio = std::max(ratio, *its[k].nmse / *its[k - 1].nmse);
    }
    ++instances;
    worst_nmse = std::max(worst_nmse, err);
    worst_ratio = std::max(worst_ratio, ratio);
    worst_iters = std::max(worst_iters, r.trace.iteration_count());
    if (!(err < 1e-3) || !(ratio < 1.0)) {
      ++failed;
      failing += fmt("; instance %d: NMSE %.3e, error ratio %.4f", static_cast<int>(seed), err, ratio);
    }
  }
  return {failed == 0, fmt("%d/%d instances pass, worst NMSE %.3e, worst error ratio %.4f, max %d iterations",
                           instances - failed, instances, worst_nmse, worst_ratio, worst_iters) +
                           failing};
}

// ---------------------------------------------------------------------------
// 6. Brainweb-like phantom, 16x undersampled EPI, exact vs tree search.

Outcome desk_scale_table() {
  const auto dict = generate_fingerprints(
      {parse_ranges("100:100:2000,2400:400:6000"), parse_ranges("20:10:200,240:40:600"),
       parse_ranges("-250:40:-190,-50:10:50,190:40:250")},
      1.5, 200);
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  PhantomOptions popt;
  const auto phantom = build_phantom(64, 64, popt, dict);
  const auto op = ForwardOperator::cartesian(64, 64, make_epi_pattern(64, 64, 4, dict.length()));
  const ComplexMatrix y = simulate_measurements(phantom.ground_truth.data, op, 50.0, 61);

  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  const auto blip = solve(y, op, dict, nullptr, cfg);
  cfg.mode = SolverMode::coverblip;
  cfg.epsilon = 0.4;
  const auto cover = solve(y, op, dict, &tree, cfg);

  const double e_blip = nmse(blip.image, phantom.ground_truth.data);
  const double e_cover = nmse(cover.image, phantom.ground_truth.data);
  const double rel = std::abs(e_cover - e_blip) / e_blip;
  const double cost_ratio = static_cast<double>(blip.trace.total_cost) / static_cast<double>(cover.trace.total_cost);
  return {rel <= 0.15 && cost_ratio >= 10.0,
          fmt("d=%ld, NMSE blip %.4e (%d it), coverblip %.4e (%d it), rel diff %.3f, cost ratio %.1f",
              static_cast<long>(dict.size()), e_blip, blip.trace.iteration_count(), e_cover,
              cover.trace.iteration_count(), rel, cost_ratio)};
}

// ---------------------------------------------------------------------------
// 7. eps = 0 tree search reproduces the exact solver bit for bit.

Outcome zero_epsilon_equivalence() {
  const std::vector<std::tuple<const char*, const char*, const char*>> grids = {
      {"400:200:1800", "20:20:160", "-30:20:30"}, {"100:50:1500", "10:15:300", "0"},
      {"200:100:3000", "40:40:400", "-20:10:20"}};
  int identical = 0, total = 0;
  std::string first;
  for (int inst = 0; inst < 20; ++inst) {
    const auto& [t1, t2, b0] = grids[static_cast<std::size_t>(inst) % grids.size()];
    const auto dict = generate_fingerprints({parse_ranges(t1), parse_ranges(t2), parse_ranges(b0)}, 10.0, 24);
    const auto tree = CoverTree<Complex>::build(dict.atoms());
    const auto seed = static_cast<std::uint64_t>(700 + inst);
    ForwardOperator op = inst % 2 == 0 ? make_gaussian_operator(36, 12 + inst, dict.length(), seed)
                                       : ForwardOperator::cartesian(6, 6, make_epi_pattern(6, 6, 1 + inst % 3, dict.length()));
    const ComplexMatrix gt = test::on_model_image(dict.atoms(), 36, seed + 1000);
    const ComplexMatrix y = simulate_measurements(gt, op, inst % 4 < 2 ? std::optional<double>{} : 20.0, seed);
    SolverConfig cfg;
    cfg.mode = SolverMode::blip_exact;
    std::vector<ConeProjection> exact_steps, tree_steps;
    cfg.projection_observer = [&](const ComplexMatrix&, const ConeProjection& p) { exact_steps.push_back(p); };
    const auto a = solve(y, op, dict, nullptr, cfg);
    cfg.mode = SolverMode::coverblip;
    cfg.epsilon = 0.0;
    cfg.projection_observer = [&](const ComplexMatrix&, const ConeProjection& p) { tree_steps.push_back(p); };
    const auto b = solve(y, op, dict, &tree, cfg);

    bool same = a.indices == b.indices && a.maps.pd == b.maps.pd && a.image == b.image &&
                exact_steps.size() == tree_steps.size() && a.trace.iteration_count() == b.trace.iteration_count();
    for (std::size_t s = 0; same && s < exact_steps.size(); ++s) {
      same = exact_steps[s].indices == tree_steps[s].indices && exact_steps[s].gammas == tree_steps[s].gammas;
    }
    for (int k = 0; same && k < a.trace.iteration_count(); ++k) {
      same = a.trace.iterations[static_cast<std::size_t>(k)].fidelity == b.trace.iterations[static_cast<std::size_t>(k)].fidelity;
    }
    ++total;
    if (same) {
      ++identical;
    } else if (first.empty()) {
      first = fmt("; first mismatch in instance %d", inst);
    }
  }
  return {identical == total, fmt("%d/%d instances bitwise identical", identical, total) + first};
}

// ---------------------------------------------------------------------------
// 8. Exact-rank compression and residual monotonicity.

Dictionary exact_rank_dictionary(Index rank, Index length, Index atoms, std::uint64_t seed) {
  const Eigen::MatrixXcd basis = Eigen::HouseholderQR<Eigen::MatrixXcd>(test::random_complex_matrix(length, rank, seed))
                                     .householderQ() *
                                 Eigen::MatrixXcd::Identity(length, rank);
  ComplexRowTable rows = test::random_complex_matrix(atoms, rank, seed + 1) * basis.transpose();
  Eigen::VectorXd norms = rows.rowwise().norm();
  rows.rowwise().normalize();
  std::vector<ParameterTriple> table;
  for (Index j = 0; j < atoms; ++j) {
    table.push_back({100.0 + 10.0 * static_cast<double>(j), 10.0 + static_cast<double>(j % 50),
                     static_cast<double>(j % 7) - 3.0});
  }
  return Dictionary(std::move(rows), std::move(norms), std::move(table), 5.0, atoms);
}

Outcome compression_equivalence() {
  int same_maps = 0, total = 0;
  for (Index rank : {2, 5, 9}) {
    const auto dict = exact_rank_dictionary(rank, 40, 300, 800 + static_cast<std::uint64_t>(rank));
    const auto compressed = svd_compress(dict, rank);
    const auto tree = CoverTree<Complex>::build(compressed.atoms());
    const auto full_tree = CoverTree<Complex>::build(dict.atoms());
    const auto op = ForwardOperator::cartesian(8, 8, make_epi_pattern(8, 8, 2, 40));
    const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 900 + static_cast<std::uint64_t>(rank));
    const ComplexMatrix y = op.apply(gt);
    for (SolverMode mode : {SolverMode::blip_exact, SolverMode::coverblip}) {
      SolverConfig cfg;
      cfg.mode = mode;
      cfg.epsilon = 0.0;
      const auto a = solve(y, op, dict, &full_tree, cfg);
      const auto b = solve_compressed(y, op, dict, compressed, &tree, cfg);
      const bool same = a.indices == b.indices && a.maps.t1 == b.maps.t1 && a.maps.t2 == b.maps.t2 &&
                        a.maps.b0 == b.maps.b0 && (a.maps.pd - b.maps.pd).norm() <= 1e-9 * a.maps.pd.norm();
      ++total;
      same_maps += same ? 1 : 0;
    }
  }

  const auto dict = generate_fingerprints({parse_ranges("100:50:2000"), parse_ranges("20:20:300"), parse_ranges("-40:20:40")}, 8.0, 48);
  int non_monotone = 0;
  double previous = INFINITY;
  for (Index s = 1; s <= dict.length(); ++s) {
    const double res = compression_residual(dict, svd_compress(dict, s));
    if (res > previous) ++non_monotone;
    previous = res;
  }
  const double rank_zero = compression_residual(dict, svd_compress(dict, dict.length()));
  return {same_maps == total && non_monotone == 0 && rank_zero <= 1e-8 * static_cast<double>(dict.size()),
          fmt("%d/%d exact-rank solves with identical maps, %d residual increases over s=1..%ld, full-rank residual %.2e",
              same_maps, total, non_monotone, static_cast<long>(dict.length()), rank_zero)};
}

// ---------------------------------------------------------------------------
// 9. Search cost grows sublinearly with the dictionary size.

Outcome search_cost_scaling() {
  const double tr = 5.0;
  const Index length = 32;
  const std::vector<std::tuple<const char*, const char*, const char*>> grids = {
      {"100:433:4000", "10:65:600", "-80:17:80"},
      {"100:186:4000", "10:28:600", "-80:7.6:80"},
      {"100:84.8:4000", "10:12.8:600", "-80:3.48:80"}};

  // Off-grid fingerprints with continuous parameters as queries.
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> t1(100.0, 4000.0), t2(10.0, 600.0), b0(-80.0, 80.0);
  const Index queries = 500;
  ComplexRowTable q(queries, length);
  for (Index i = 0; i < queries; ++i) {
    double a = t1(rng), b = t2(rng);
    if (b > a) std::swap(a, b);
    q.row(i) = fingerprint({a, b, b0(rng)}, tr, length).normalized().transpose();
  }

  std::vector<double> log_d, log_cost, log_exact_cost, log_brute;
  std::string sizes;
  for (const auto& [a, b, c] : grids) {
    const auto dict = generate_fingerprints({parse_ranges(a), parse_ranges(b), parse_ranges(c)}, tr, length);
    const auto tree = CoverTree<Complex>::build(dict.atoms());
    double cost = 0.0, exact_cost = 0.0;
    for (Index i = 0; i < queries; ++i) {
      cost += static_cast<double>(tree.ann_search(q.row(i).transpose(), 0.4).cost);
      exact_cost += static_cast<double>(tree.ann_search(q.row(i).transpose(), 0.0).cost);
    }
    log_d.push_back(std::log(static_cast<double>(dict.size())));
    log_cost.push_back(std::log(cost / static_cast<double>(queries)));
    log_exact_cost.push_back(std::log(exact_cost / static_cast<double>(queries)));
    log_brute.push_back(std::log(static_cast<double>(dict.size())));
    sizes += fmt("%s d=%ld: %.0f", sizes.empty() ? "" : ",", static_cast<long>(dict.size()),
                 cost / static_cast<double>(queries));
  }
  const double slope = linear_fit(log_d, log_cost).first;
  const double exact_slope = linear_fit(log_d, log_exact_cost).first;
  const double brute = linear_fit(log_d, log_brute).first;
  return {slope < 0.7,
          fmt("eps=0.4 slope %.3f (eps=0 slope %.3f, brute force %.2f);", slope, exact_slope, brute) + sizes};
}

// ---------------------------------------------------------------------------
// 10. Final error grows linearly with the noise norm.

Outcome noise_robustness() {
  const auto dict = test::manifold_dictionary_256();
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  const auto op = make_gaussian_operator(64, 32, dict.length(), 1001);
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 1002);
  const ComplexMatrix clean = op.apply(gt);
  std::vector<double> noise, error;
  std::string points;
  for (double rel : {0.0, 1e-3, 1e-2, 1e-1}) {
    const double level = rel * clean.norm();
    const ComplexMatrix y =
        level > 0.0 ? ComplexMatrix(clean + test::noise_of_norm(clean.rows(), clean.cols(), level, 1003)) : clean;
    SolverConfig cfg;
    cfg.mode = SolverMode::coverblip;
    cfg.epsilon = 0.4;
    const auto r = solve(y, op, dict, &tree, cfg);
    noise.push_back(level);
    error.push_back((r.image - gt).norm());
    points += fmt(" (%.3g, %.3g)", level, error.back());
  }
  const auto [slope, r2] = linear_fit(noise, error);
  return {r2 > 0.9, fmt("slope %.3f, R^2 %.4f; (noise, error):", slope, r2) + points};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "ANNS correctness", 120.0, anns_correctness},
      {2, "cover tree structural suite", 60.0, structural_suite},
      {3, "monotone convergence", 300.0, monotone_convergence},
      {4, "step-size bounds", 0.0, step_bounds},
      {5, "near-exact Gaussian recovery", 120.0, gaussian_recovery},
      {6, "desk-scale phantom reconstruction", 900.0, desk_scale_table},
      {7, "eps=0 equivalence", 120.0, zero_epsilon_equivalence},
      {8, "compression equivalence", 60.0, compression_equivalence},
      {9, "search-cost scaling", 600.0, search_cost_scaling},
      {10, "noise robustness", 300.0, noise_robustness},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_seconds <= 0.0 || secs < c.limit_seconds;
    const bool pass = out.pass && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << out.detail
              << fmt(" (%.1f s", secs) << (c.limit_seconds > 0.0 ? fmt(", limit %.0f s)", c.limit_seconds) : ")")
              << (in_time ? "" : " time limit exceeded") << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
