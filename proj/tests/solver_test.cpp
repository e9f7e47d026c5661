#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/SVD>

#include "coverblip/solver.hpp"
#include "test_util.hpp"

namespace coverblip {
namespace {

using test::monotonicity_violations;

Dictionary small_dictionary(Index length = 24) {
  return generate_fingerprints({parse_ranges("200:200:1600"), parse_ranges("20:30:200"), parse_ranges("-30:20:30")},
                               5.0, length);
}

double nmse(const ComplexMatrix& x, const ComplexMatrix& gt) { return (x - gt).norm() / gt.norm(); }

TEST(Solver, TemplateMatchingFullSamplingIsExact) {
  const auto dict = small_dictionary();
  const auto op = ForwardOperator::cartesian(8, 8, make_full_pattern(64, dict.length()));
  std::vector<Index> truth;
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 1, &truth);
  SolverConfig cfg;
  cfg.mode = SolverMode::tm;
  const auto r = solve(op.apply(gt), op, dict, nullptr, cfg, &gt);
  EXPECT_EQ(r.trace.iteration_count(), 1);
  EXPECT_LT(nmse(r.image, gt), 1e-9);
  EXPECT_EQ(r.indices, truth);
  for (Index v = 0; v < 64; ++v) {
    const auto& p = dict.lookup(truth[static_cast<std::size_t>(v)]);
    EXPECT_EQ(r.maps.t1(v), p.t1);
    EXPECT_EQ(r.maps.t2(v), p.t2);
    EXPECT_EQ(r.maps.b0(v), p.b0);
    EXPECT_NEAR(r.maps.pd(v), gt.row(v).norm(), 1e-9);
  }
}

TEST(Solver, ZeroEpsilonMatchesExactIterates) {
  const auto dict = small_dictionary();
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  const auto op = ForwardOperator::cartesian(16, 16, make_epi_pattern(16, 16, 4, dict.length()));
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 256, 2);
  ComplexMatrix y = op.apply(gt);
  y += test::noise_of_norm(y.rows(), y.cols(), 1e-2 * y.norm(), 3);

  std::vector<ConeProjection> exact_steps, ann_steps;
  SolverConfig cfg;
  cfg.max_iters = 15;
  cfg.mode = SolverMode::blip_exact;
  cfg.projection_observer = [&](const ComplexMatrix&, const ConeProjection& p) { exact_steps.push_back(p); };
  const auto exact = solve(y, op, dict, nullptr, cfg);
  cfg.mode = SolverMode::coverblip;
  cfg.epsilon = 0.0;
  cfg.projection_observer = [&](const ComplexMatrix&, const ConeProjection& p) { ann_steps.push_back(p); };
  const auto ann = solve(y, op, dict, &tree, cfg);

  ASSERT_EQ(exact_steps.size(), ann_steps.size());
  for (std::size_t k = 0; k < exact_steps.size(); ++k) {
    EXPECT_EQ(exact_steps[k].indices, ann_steps[k].indices);
    EXPECT_EQ(exact_steps[k].gammas, ann_steps[k].gammas);
  }
  EXPECT_EQ(exact.image, ann.image);
  EXPECT_EQ(exact.trace.iteration_count(), ann.trace.iteration_count());
  EXPECT_LT(ann.trace.total_cost, exact.trace.total_cost);
  EXPECT_EQ(monotonicity_violations(exact.trace), 0);
}

TEST(Solver, GaussianRecoveryWithCheckedProjections) {
  const auto dict = test::manifold_dictionary_256();
  const auto tree = CoverTree<Complex>::build(dict.atoms());
  const auto op = make_gaussian_operator(64, 32, dict.length(), 4);
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 5);
  const ComplexMatrix y = op.apply(gt);
  for (double eps : {0.0, 0.2, 0.4}) {
    SolverConfig cfg;
    cfg.mode = SolverMode::coverblip;
    cfg.epsilon = eps;
    cfg.rel_tol = 1e-12;
    int checked = 0;
    cfg.projection_observer = [&](const ComplexMatrix& z, const ConeProjection& p) {
      const auto exact = project_cone_exact(z, dict.atoms());
      for (Index v = 0; v < z.rows(); ++v) {
        const double norm = z.row(v).norm();
        if (norm == 0.0) continue;
        const Eigen::RowVectorXcd q = z.row(v) / norm;
        const auto slot = static_cast<std::size_t>(v);
        const double got = (q - dict.atoms().row(p.indices[slot])).norm();
        const double best = (q - dict.atoms().row(exact.indices[slot])).norm();
        ASSERT_LE(got, (1 + eps) * best * (1 + 1e-12));
        if (eps == 0.0) {
          ASSERT_EQ(p.indices[slot], exact.indices[slot]);
        }
      }
      ++checked;
    };
    const auto r = solve(y, op, dict, &tree, cfg, &gt);
    EXPECT_GT(checked, 0);
    EXPECT_LE(r.trace.iteration_count(), 50);
    EXPECT_EQ(monotonicity_violations(r.trace), 0) << "eps " << eps;
    EXPECT_LT(nmse(r.image, gt), 1e-4) << "eps " << eps;
  }
}

TEST(StepShrinkage, UnitaryConstants) {
  // ||A dX|| = ||dX|| for a unitary operator, so the ratio is exactly 1.
  int trials = 0;
  const auto out = step_shrinkage(4.0, 2.0, 60, [&](double) {
    ++trials;
    return StepTrial{3.0, 3.0};
  });
  EXPECT_FALSE(out.fixed_point);
  EXPECT_GE(out.mu, 0.5);
  EXPECT_LE(out.mu, 1.0);
  EXPECT_LE(out.shrinks, 3);
  EXPECT_EQ(trials, out.shrinks + 1);
}

TEST(StepShrinkage, FixedPointAndAnnihilatedChange) {
  const auto fixed = step_shrinkage(4.0, 2.0, 60, [](double) { return StepTrial{0.0, 0.0}; });
  EXPECT_TRUE(fixed.fixed_point);
  EXPECT_EQ(fixed.shrinks, 0);
  const auto null = step_shrinkage(4.0, 2.0, 60, [](double) { return StepTrial{1.0, 0.0}; });
  EXPECT_FALSE(null.fixed_point);
  EXPECT_EQ(null.mu, 4.0);
}

TEST(StepShrinkage, CollapseThrows) {
  EXPECT_THROW(step_shrinkage(1.0, 2.0, 60, [](double) { return StepTrial{1e-300, 1.0}; }), SolverError);
  EXPECT_THROW(step_shrinkage(1.0, 1.0, 60, [](double) { return StepTrial{1.0, 1.0}; }), InvalidArgument);
}

TEST(StepShrinkage, DiagonalOperatorBounds) {
  // diag(3, 1) across two voxels, applied per frame: alpha = 1, beta = 9.
  ComplexMatrix d = ComplexMatrix::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  const auto op = ForwardOperator::dense(d, 2);
  const auto dict = generate_fingerprints({{300.0, 900.0}, {50.0, 100.0}, {0.0, 40.0}}, 5.0, 2);
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 2, 7);
  const ComplexMatrix y = op.apply(gt) + test::noise_of_norm(2, 2, 0.05, 8);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  cfg.mu_init = 4.0;
  const auto r = solve(y, op, dict, nullptr, cfg);
  // The step rule accepts mu < ||dX||^2 / ||A dX||^2 <= 1 / alpha = 1; a shrunk
  // step was rejected at zeta * mu >= 1 / beta = 1 / 9.
  for (const auto& rec : r.trace.iterations) {
    EXPECT_LT(rec.mu, 1.0);
    if (rec.shrinks > 0) {
      EXPECT_GE(rec.mu, 1.0 / 18.0);
    }
    const double start = rec.k == 1 ? 4.0 : 4.0 * r.trace.kappa;
    EXPECT_LE(rec.shrinks, static_cast<int>(std::ceil(std::log2(9.0 * start))) + 1);
  }
  EXPECT_EQ(monotonicity_violations(r.trace), 0);
}

TEST(StepShrinkage, EstimatedGaussianBounds) {
  const auto dict = test::manifold_dictionary_256();
  const auto op = make_gaussian_operator(64, 32, dict.length(), 9);
  const auto est = estimate_bilipschitz(op, dict.atoms(), 4000, 10);
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 11);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  cfg.mu_init = 1.0 / est.alpha * 1.5;
  cfg.max_iters = 30;
  const auto r = solve(op.apply(gt), op, dict, nullptr, cfg);
  // sampled constants only bracket the true ones from inside
  const double tol = 0.25;
  for (const auto& rec : r.trace.iterations) {
    EXPECT_LE(rec.mu, 1.0 / est.alpha * (1 + tol));
    if (rec.shrinks > 0) {
      EXPECT_GT(rec.mu, 1.0 / (cfg.zeta * est.beta) * (1 - tol));
    }
  }
  EXPECT_EQ(monotonicity_violations(r.trace), 0);
}

TEST(Certificate, KnownConstants) {
  const auto near_one = make_certificate(1.0, 1.0, 1.0, 0.0, 1.01);
  EXPECT_NEAR(near_one.rho, 0.1, 1e-12);
  EXPECT_EQ(near_one.delta, 0.0);
  EXPECT_TRUE(near_one.condition_ok);
  const auto boundary = make_certificate(1.0, 1.0, 1.0, 0.0, 2.0);
  EXPECT_DOUBLE_EQ(boundary.rho, 1.0);
  EXPECT_FALSE(boundary.condition_ok);
  const auto none = make_certificate(0.0, 1.0, 1.0, 0.0, 2.0);
  EXPECT_FALSE(none.embedding_evidence);
  EXPECT_FALSE(none.condition_ok);
}

TEST(Certificate, GaussianRecomputation) {
  const auto dict = test::manifold_dictionary_256();
  const Index n = 16;
  const auto op = make_gaussian_operator(n, 12, dict.length(), 12);
  const auto cert = certificate(op, dict.atoms(), 0.1, 2.0, 500, 13);

  const auto est = estimate_bilipschitz(op, dict.atoms(), 500, 13);
  ComplexMatrix g(12, n);
  for (Index v = 0; v < n; ++v) {
    ComplexMatrix e = ComplexMatrix::Zero(n, dict.length());
    e(v, 0) = 1.0;
    g.col(v) = op.apply(e).col(0);
  }
  const double norm = Eigen::JacobiSVD<ComplexMatrix>(g).singularValues()(0);
  const double delta = std::sqrt(0.2 + 0.01) * norm / std::sqrt(est.alpha);
  EXPECT_EQ(cert.alpha, est.alpha);
  EXPECT_EQ(cert.beta, est.beta);
  EXPECT_NEAR(cert.spectral_norm, norm, 1e-4 * norm);
  EXPECT_NEAR(cert.delta, delta, 1e-4 * delta);
  EXPECT_NEAR(cert.rho, std::sqrt(2.0 * est.beta / est.alpha - 1.0) + delta, 1e-4);
  EXPECT_NEAR(cert.kappa_w, 2.0 * std::sqrt(est.beta) / est.alpha + delta / std::sqrt(est.alpha), 1e-4);
  EXPECT_EQ(cert.condition_ok, 2.0 * est.beta < (2.0 - 2.0 * delta + delta * delta) * est.alpha);
}

Dictionary rank_two_dictionary(Index length) {
  const ComplexMatrix basis = test::random_complex_matrix(2, length, 20);
  std::vector<ParameterTriple> table;
  ComplexRowTable atoms(40, length);
  Eigen::VectorXd norms(40);
  for (Index j = 0; j < 40; ++j) {
    const double angle = 0.08 * static_cast<double>(j);
    atoms.row(j) = std::cos(angle) * basis.row(0) + Complex(0.0, std::sin(angle)) * basis.row(1);
    norms(j) = atoms.row(j).norm();
    atoms.row(j) /= norms(j);
    table.push_back({100.0 + 10.0 * static_cast<double>(j), 10.0, 0.0});
  }
  return Dictionary(atoms, norms, table, 1.0, 40);
}

TEST(SolveCompressed, ExactRankMatchesUncompressed) {
  const auto dict = rank_two_dictionary(16);
  const auto compressed = svd_compress(dict, 2);
  const auto op = ForwardOperator::cartesian(4, 4, make_epi_pattern(4, 4, 2, 16));
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 16, 21);
  const ComplexMatrix y = op.apply(gt);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  const auto full = solve(y, op, dict, nullptr, cfg);
  const auto small = solve_compressed(y, op, dict, compressed, nullptr, cfg);
  EXPECT_EQ(full.indices, small.indices);
  EXPECT_EQ(full.maps.t1, small.maps.t1);
  EXPECT_LT((full.image - small.image).norm(), 1e-8 * full.image.norm());
}

TEST(SolveCompressed, FullRankMatchesUncompressed) {
  const auto dict = small_dictionary();
  const auto compressed = svd_compress(dict, dict.length());
  const auto op = ForwardOperator::cartesian(8, 8, make_epi_pattern(8, 8, 2, dict.length()));
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 22);
  const ComplexMatrix y = op.apply(gt) + test::noise_of_norm(op.measurement_rows(), dict.length(), 0.01, 23);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  cfg.max_iters = 10;
  const auto full = solve(y, op, dict, nullptr, cfg);
  const auto same = solve_compressed(y, op, dict, compressed, nullptr, cfg);
  EXPECT_EQ(full.indices, same.indices);
  EXPECT_LT((full.image - same.image).norm(), 1e-10 * full.image.norm());
}

TEST(SolveCompressed, LargerSubspaceFitsBetter) {
  const auto dict = generate_fingerprints({parse_ranges("200:150:2000"), parse_ranges("20:20:200"), parse_ranges("-40:20:40")},
                                          2.0, 200);
  const auto op = ForwardOperator::cartesian(16, 16, make_epi_pattern(16, 16, 4, dict.length()));
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 256, 24);
  ComplexMatrix y = op.apply(gt);
  y += test::noise_of_norm(y.rows(), y.cols(), 3e-3 * y.norm(), 25);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  const auto coarse = solve_compressed(y, op, dict, svd_compress(dict, 20), nullptr, cfg);
  const auto fine = solve_compressed(y, op, dict, svd_compress(dict, 200), nullptr, cfg);
  EXPECT_LE(fine.trace.iterations.back().fidelity, coarse.trace.iterations.back().fidelity);
  EXPECT_EQ(monotonicity_violations(coarse.trace), 0);
  EXPECT_EQ(monotonicity_violations(fine.trace), 0);
}

TEST(Solver, CarryOverPolicyAndWeights) {
  const auto dict = small_dictionary();
  const auto op_plain = ForwardOperator::cartesian(8, 8, make_epi_pattern(8, 8, 2, dict.length()));
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 64, 30);
  const ComplexMatrix y = op_plain.apply(gt) + test::noise_of_norm(op_plain.measurement_rows(), dict.length(), 0.05, 31);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  cfg.step_policy = StepPolicy::carry_over;
  const auto carried = solve(y, op_plain, dict, nullptr, cfg);
  EXPECT_EQ(monotonicity_violations(carried.trace), 0);

  auto op = op_plain;
  op.set_weights(Eigen::MatrixXd::Ones(op.measurement_rows(), dict.length()));
  cfg.step_policy = StepPolicy::reset_each_iter;
  cfg.weights_enabled = true;
  const auto unit = solve(y, op, dict, nullptr, cfg);
  cfg.weights_enabled = false;
  const auto plain = solve(y, op, dict, nullptr, cfg);
  EXPECT_EQ(unit.image, plain.image);

  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(op.measurement_rows(), dict.length());
  for (Index i = 0; i < w.rows(); i += 3) w.row(i).setConstant(0.25);
  op.set_weights(w);
  cfg.weights_enabled = true;
  const auto weighted = solve(y, op, dict, nullptr, cfg);
  EXPECT_EQ(monotonicity_violations(weighted.trace), 0);
  EXPECT_NE(weighted.image, plain.image);
}

TEST(Solver, InvalidInputs) {
  const auto dict = small_dictionary();
  const auto op = ForwardOperator::cartesian(4, 4, make_full_pattern(16, dict.length()));
  const ComplexMatrix y = ComplexMatrix::Zero(16, dict.length());
  SolverConfig cfg;
  EXPECT_THROW(solve(y, op, dict, nullptr, cfg), InvalidArgument);
  cfg.mode = SolverMode::blip_exact;
  EXPECT_THROW(solve(ComplexMatrix::Zero(15, dict.length()), op, dict, nullptr, cfg), InvalidArgument);
  cfg.zeta = 1.0;
  EXPECT_THROW(solve(y, op, dict, nullptr, cfg), InvalidArgument);
  cfg.zeta = 2.0;
  const auto r = solve(y, op, dict, nullptr, cfg);
  EXPECT_EQ(r.trace.stop_reason, "fixed_point");
  EXPECT_EQ(r.image.norm(), 0.0);
}

TEST(Solver, TraceAndMapCsv) {
  const auto dict = small_dictionary();
  const auto op = ForwardOperator::cartesian(4, 4, make_epi_pattern(4, 4, 2, dict.length()));
  const ComplexMatrix gt = test::on_model_image(dict.atoms(), 16, 40);
  SolverConfig cfg;
  cfg.mode = SolverMode::blip_exact;
  const auto r = solve(op.apply(gt), op, dict, nullptr, cfg, &gt);
  const auto dir = std::filesystem::temp_directory_path();
  const auto trace_path = (dir / "coverblip_trace.csv").string();
  const auto map_path = (dir / "coverblip_t1.csv").string();
  write_trace_csv(r.trace, trace_path);
  write_map_csv(r.maps.t1, 4, 4, map_path);
  std::ifstream trace(trace_path), map(map_path);
  std::string line;
  std::getline(trace, line);
  EXPECT_EQ(line, "iter,fidelity,mu,shrinks,cost,nmse,seconds");
  int rows = 0;
  while (std::getline(trace, line)) ++rows;
  EXPECT_EQ(rows, r.trace.iteration_count());
  rows = 0;
  while (std::getline(map, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
  EXPECT_THROW(write_map_csv(r.maps.t1, 3, 4, map_path), InvalidArgument);
}

}  // namespace
}  // namespace coverblip
