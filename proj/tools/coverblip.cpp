#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coverblip/cover_tree.hpp"
#include "coverblip/dictionary.hpp"
#include "coverblip/harness.hpp"

using namespace coverblip;

namespace {

ComplexRowTable search_points(const Dictionary& dict, Index rank) {
  if (rank <= 0) return dict.atoms();
  return svd_compress(dict, rank).atoms();
}

int cmd_run(const std::string& config_path) {
  const auto report = run_experiment(config_path);
  std::cout << "output: " << report.output_dir << '\n';
  std::cout << std::left << std::setw(26) << "run" << std::setw(8) << "iters" << std::setw(14) << "nmse"
            << std::setw(12) << "t1_acc" << std::setw(12) << "t2_acc" << "search_cost\n";
  for (const auto& r : report.runs) {
    std::cout << std::setw(26) << r.run << std::setw(8) << r.iterations << std::setw(14) << r.metrics.nmse
              << std::setw(12) << r.metrics.t1_accuracy << std::setw(12) << r.metrics.t2_accuracy << r.search_cost
              << '\n';
  }
  return 0;
}

void print_dictionary(const Dictionary& dict) {
  std::cout << "atoms: " << dict.size() << "\nlength: " << dict.length() << "\ntr_ms: " << dict.tr_ms()
            << "\ngrid_points: " << dict.unfiltered_count() << '\n';
  if (dict.size() == 0) return;
  auto range = [&](auto field, const char* name) {
    double lo = field(dict.table().front()), hi = lo;
    for (const auto& p : dict.table()) {
      lo = std::min(lo, field(p));
      hi = std::max(hi, field(p));
    }
    std::cout << name << ": [" << lo << ", " << hi << "]\n";
  };
  range([](const ParameterTriple& p) { return p.t1; }, "t1_ms");
  range([](const ParameterTriple& p) { return p.t2; }, "t2_ms");
  range([](const ParameterTriple& p) { return p.b0; }, "b0_hz");
}

int cmd_dict_build(const std::string& t1, const std::string& t2, const std::string& b0, double tr, Index length,
                   const std::string& out, const std::string& csv) {
  const auto dict = generate_fingerprints({parse_ranges(t1), parse_ranges(t2), parse_ranges(b0)}, tr, length);
  save_dictionary(dict, out);
  if (!csv.empty()) export_lookup_csv(dict, csv);
  print_dictionary(dict);
  return 0;
}

int cmd_dict_inspect(const std::string& path, const std::vector<Index>& ranks) {
  const auto dict = load_dictionary(path);
  print_dictionary(dict);
  for (Index s : ranks) {
    const auto c = svd_compress(dict, s);
    std::cout << "rank " << s << " residual: " << compression_residual(dict, c) << '\n';
  }
  return 0;
}

int cmd_tree_build(const std::string& dict_path, Index rank, const std::string& out) {
  const auto dict = load_dictionary(dict_path);
  const auto tree = CoverTree<Complex>::build(search_points(dict, rank));
  save_tree(tree, out);
  std::cout << "points: " << tree.size() << "\nnodes: " << tree.node_count() << "\ndim: " << tree.dim()
            << "\nsigma: " << tree.sigma() << "\nmax_scale: " << tree.max_scale()
            << "\nbuild_distances: " << tree.build_distance_count() << '\n';
  return 0;
}

int cmd_tree_check(const std::string& dict_path, Index rank, const std::string& tree_path) {
  const auto dict = load_dictionary(dict_path);
  const auto tree = load_tree<Complex>(tree_path, search_points(dict, rank));
  const auto violations = verify_invariants(tree);
  std::cout << "points: " << tree.size() << "\nnodes: " << tree.node_count() << "\nmax_scale: " << tree.max_scale()
            << "\nviolations: " << violations.size() << '\n';
  for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 20); ++i) {
    std::cout << "  " << to_string(violations[i].kind) << ": " << violations[i].detail << '\n';
  }
  return violations.empty() ? 0 : 1;
}

int cmd_bench_anns(const std::string& dict_path, Index rank, const std::vector<double>& epsilons, Index queries,
                   double noise, std::uint64_t seed) {
  const auto dict = load_dictionary(dict_path);
  const auto points = search_points(dict, rank);
  const auto tree = CoverTree<Complex>::build(points);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, points.rows() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  ComplexMatrix q(queries, points.cols());
  for (Index i = 0; i < queries; ++i) {
    ComplexVector e(points.cols());
    for (Index k = 0; k < e.size(); ++k) {
      const double re = normal(rng);
      e(k) = Complex(re, normal(rng));
    }
    q.row(i) = points.row(pick(rng)) + (noise * e.normalized()).transpose();
  }
  Eigen::VectorXd best(queries);
  for (Index i = 0; i < queries; ++i) best(i) = (points.rowwise() - q.row(i)).rowwise().norm().minCoeff();

  std::cout << "epsilon,queries,mean_cost,mean_ratio,max_ratio,linear_cost\n";
  for (double eps : epsilons) {
    double cost = 0.0, ratio_sum = 0.0, ratio_max = 1.0;
    for (Index i = 0; i < queries; ++i) {
      const auto r = tree.ann_search(q.row(i).transpose(), eps);
      cost += static_cast<double>(r.cost);
      const double ratio = best(i) > 0.0 ? r.distance / best(i) : (r.distance > 0.0 ? INFINITY : 1.0);
      ratio_sum += ratio;
      ratio_max = std::max(ratio_max, ratio);
    }
    const auto nq = static_cast<double>(queries);
    std::cout << eps << ',' << queries << ',' << cost / nq << ',' << ratio_sum / nq << ',' << ratio_max << ','
              << points.rows() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cover-tree accelerated MR fingerprinting reconstruction"};
  app.require_subcommand(1);
  int status = 0;

  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  std::string config_path;
  run->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);

  auto* dict = app.add_subcommand("dict", "Build or inspect fingerprint dictionaries");
  dict->require_subcommand(1);
  auto* dict_build = dict->add_subcommand("build", "Simulate a dictionary over a parameter grid");
  std::string t1, t2, b0, dict_out, lookup_csv;
  double tr = 0.0;
  Index length = 0;
  dict_build->add_option("--t1", t1, "T1 ranges in ms, e.g. 100:20:4000")->required();
  dict_build->add_option("--t2", t2, "T2 ranges in ms")->required();
  dict_build->add_option("--b0", b0, "Off-resonance ranges in Hz")->required();
  dict_build->add_option("--tr", tr, "Repetition time in ms")->required();
  dict_build->add_option("--length", length, "Frames per fingerprint")->required();
  dict_build->add_option("-o,--out", dict_out, "Output dictionary file")->required();
  dict_build->add_option("--lookup-csv", lookup_csv, "Also write the index to parameter table");

  auto* dict_inspect = dict->add_subcommand("inspect", "Print a dictionary's size and parameter ranges");
  std::string inspect_path;
  std::vector<Index> inspect_ranks;
  dict_inspect->add_option("file", inspect_path, "Dictionary file")->required()->check(CLI::ExistingFile);
  dict_inspect->add_option("--svd", inspect_ranks, "Report the compression residual at these ranks");

  auto* tree = app.add_subcommand("tree", "Build or check cover trees");
  tree->require_subcommand(1);
  std::string tree_dict, tree_file;
  Index tree_rank = 0;
  auto* tree_build = tree->add_subcommand("build", "Build a cover tree over a dictionary");
  tree_build->add_option("--dict", tree_dict, "Dictionary file")->required()->check(CLI::ExistingFile);
  tree_build->add_option("--rank", tree_rank, "Index the rank-s compressed atoms (0: uncompressed)");
  tree_build->add_option("-o,--out", tree_file, "Output tree file")->required();
  auto* tree_check = tree->add_subcommand("check", "Verify the invariants of a stored tree");
  tree_check->add_option("--dict", tree_dict, "Dictionary file")->required()->check(CLI::ExistingFile);
  tree_check->add_option("--rank", tree_rank, "Rank the tree was built with");
  tree_check->add_option("tree", tree_file, "Tree file")->required()->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* bench_anns = bench->add_subcommand("anns", "Search cost and accuracy against brute force");
  std::string bench_dict;
  Index bench_rank = 0, queries = 1000;
  std::vector<double> epsilons = {0.0, 0.2, 0.4, 0.8, 1.6};
  double noise = 0.1;
  std::uint64_t seed = 1;
  bench_anns->add_option("--dict", bench_dict, "Dictionary file")->required()->check(CLI::ExistingFile);
  bench_anns->add_option("--rank", bench_rank, "Search the rank-s compressed atoms");
  bench_anns->add_option("--eps", epsilons, "Approximation levels")->delimiter(',');
  bench_anns->add_option("--queries", queries, "Number of queries")->check(CLI::PositiveNumber);
  bench_anns->add_option("--noise", noise, "Norm of the perturbation added to each query atom");
  bench_anns->add_option("--seed", seed, "Query seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      status = cmd_run(config_path);
    } else if (*dict_build) {
      status = cmd_dict_build(t1, t2, b0, tr, length, dict_out, lookup_csv);
    } else if (*dict_inspect) {
      status = cmd_dict_inspect(inspect_path, inspect_ranks);
    } else if (*tree_build) {
      status = cmd_tree_build(tree_dict, tree_rank, tree_file);
    } else if (*tree_check) {
      status = cmd_tree_check(tree_dict, tree_rank, tree_file);
    } else if (*bench_anns) {
      status = cmd_bench_anns(bench_dict, bench_rank, epsilons, queries, noise, seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return status;
}
