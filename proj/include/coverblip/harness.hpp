#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "coverblip/dictionary.hpp"
#include "coverblip/forward_model.hpp"
#include "coverblip/solver.hpp"
#include "coverblip/types.hpp"

namespace coverblip {

struct Tissue {
  std::string name;
  ParameterTriple params;
  double pd = 1.0;
};

/// CSF, grey matter, white matter, adipose, skin/muscle; labels 1..5.
std::vector<Tissue> reference_tissues();

enum class PhantomLayout { brainweb_like, blocks, custom_file };
PhantomLayout parse_layout(const std::string& text);

struct PhantomOptions {
  PhantomLayout layout = PhantomLayout::brainweb_like;
  /// Move tissue parameters to the nearest dictionary grid values.
  bool snap = true;
  /// Block grid for the blocks layout; block k (row-major) gets tissue k.
  Index block_rows = 2;
  Index block_cols = 2;
  /// Tissues for the blocks layout (default: the first two reference tissues).
  std::vector<Tissue> block_tissues;
  /// JSON {"height", "width", "labels": [...], "tissues": {"1": {"t1", "t2", "b0", "pd"}, ...}}.
  std::string custom_file;
};

/// Labelled phantom with its ground-truth image X0[v] = pd[v] * fingerprint.
struct Phantom {
  Index height = 0;
  Index width = 0;
  /// 0 is background.
  Eigen::VectorXi labels;
  std::map<int, Tissue> tissues;
  Eigen::VectorXd pd;
  Eigen::VectorXd t1;
  Eigen::VectorXd t2;
  Eigen::VectorXd b0;
  MrfImage ground_truth;

  [[nodiscard]] Index voxels() const { return labels.size(); }
};

/// Tissue fingerprints come from `dict` (unit-norm atoms) when snapped, and
/// are synthesised with the dictionary's TR and length otherwise.
Phantom build_phantom(Index height, Index width, const PhantomOptions& options, const Dictionary& dict);

/// Y = A(X0) + noise with ||A(X0)|| / ||noise|| = 10^(snr_db / 20); no noise
/// when snr_db is empty or infinite.
ComplexMatrix simulate_measurements(const ComplexMatrix& x0, const ForwardOperator& op, std::optional<double> snr_db,
                                    std::uint64_t seed);

struct Metrics {
  double nmse = 0.0;
  double t1_accuracy = 0.0;
  double t2_accuracy = 0.0;
  double b0_accuracy = 0.0;
  Index mask_voxels = 0;
};

/// NMSE over the whole image; accuracies 1 - mean relative error over the
/// tissue voxels whose estimated proton density exceeds mask_fraction * max.
/// B0 errors are relative to max(|B0|, 1 Hz).
Metrics compute_metrics(const ParameterMaps& maps, const ComplexMatrix& estimate, const Phantom& phantom,
                        double mask_fraction = 0.05);

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::string output_dir = "runs";

  Index height = 16;
  Index width = 16;
  PhantomOptions phantom;

  std::string dictionary_file;
  std::string t1_range;
  std::string t2_range;
  std::string b0_range;
  double tr_ms = 0.0;
  Index length = 0;

  /// "epi", "full", "gaussian" or "pattern_file".
  std::string operator_kind = "epi";
  Index lines_per_frame = 0;
  Index gaussian_rows = 0;
  std::string pattern_file;
  std::optional<double> snr_db;

  SolverConfig solver;
  std::vector<SolverMode> algorithms;
  std::vector<double> epsilons = {0.0};
  /// 0 means no compression.
  std::vector<Index> ranks = {0};

  /// Canonical JSON of the resolved configuration.
  std::string resolved_json;
};

/// Raised for malformed configurations; the message starts with
/// "<source>:<line>:".
class ConfigError : public Error {
 public:
  using Error::Error;
};

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source = "config");
ExperimentConfig load_experiment_config(const std::string& path);

struct RunSummary {
  std::string run;
  std::string algorithm;
  double epsilon = 0.0;
  Index rank = 0;
  int iterations = 0;
  std::string stop_reason;
  Metrics metrics;
  /// Distance evaluations over all projections.
  std::uint64_t search_cost = 0;
  /// search_cost times the search dimension.
  std::uint64_t search_flops = 0;
  double final_fidelity = 0.0;
  double seconds = 0.0;
};

struct ExperimentReport {
  std::string output_dir;
  std::vector<RunSummary> runs;
};

/// Runs every (algorithm, epsilon, rank) combination and writes summary.csv,
/// summary.json, timings.csv, plotdata_cost_vs_nmse.csv, trace_<run>.csv and
/// maps_<run>/{t1,t2,b0,pd}.csv under <output root>/<name>. The output root
/// is COVERBLIP_OUTPUT_ROOT when set, else config.output_dir.
/// COVERBLIP_WORKERS caps the thread count.
ExperimentReport run_experiment(const ExperimentConfig& config);
ExperimentReport run_experiment(const std::string& config_path);

}  // namespace coverblip
