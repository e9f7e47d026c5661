#include "coverblip/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "coverblip/binary_io.hpp"
#include "coverblip/cover_tree.hpp"
#include "json.hpp"

namespace coverblip {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<Tissue> reference_tissues() {
  return {
      {"csf", {5012.0, 512.0, -20.0}, 1.0},
      {"grey_matter", {1545.0, 83.0, -40.0}, 0.85},
      {"white_matter", {811.0, 77.0, -30.0}, 0.7},
      {"adipose", {530.0, 77.0, 50.0}, 0.9},
      {"skin_muscle", {1425.0, 41.0, 250.0}, 0.6},
  };
}

PhantomLayout parse_layout(const std::string& text) {
  if (text == "brainweb_like") return PhantomLayout::brainweb_like;
  if (text == "blocks") return PhantomLayout::blocks;
  if (text == "custom_file") return PhantomLayout::custom_file;
  throw InvalidArgument("unknown phantom layout '" + text + "'");
}

namespace {

double nearest_value(const std::vector<double>& sorted, double x) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), x);
  if (it == sorted.end()) return sorted.back();
  if (it == sorted.begin()) return *it;
  const double hi = *it, lo = *(it - 1);
  return (x - lo) <= (hi - x) ? lo : hi;
}

// Concentric ellipses, outermost first: skin, adipose, grey matter, white
// matter, ventricles.
int brainweb_label(Index y, Index x, Index h, Index w) {
  const double dy = (static_cast<double>(y) + 0.5 - 0.5 * static_cast<double>(h)) / (0.5 * static_cast<double>(h));
  const double dx = (static_cast<double>(x) + 0.5 - 0.5 * static_cast<double>(w)) / (0.5 * static_cast<double>(w));
  const double r = std::sqrt(dx * dx + dy * dy);
  if (r >= 0.94) return 0;
  if (r >= 0.82) return 5;
  if (r >= 0.72) return 4;
  if (r >= 0.52) return 2;
  if (r >= 0.18) return 3;
  return 1;
}

Tissue tissue_from_json(const json& j, const std::string& where) {
  try {
    Tissue t;
    t.name = j.value("name", std::string());
    t.params = {j.at("t1").get<double>(), j.at("t2").get<double>(), j.at("b0").get<double>()};
    t.pd = j.value("pd", 1.0);
    return t;
  } catch (const json::exception& e) {
    throw FormatError(where + ": bad tissue entry: " + e.what());
  }
}

}  // namespace

Phantom build_phantom(Index height, Index width, const PhantomOptions& options, const Dictionary& dict) {
  Phantom ph;
  std::map<int, Tissue> tissues;
  Eigen::VectorXi labels;

  switch (options.layout) {
    case PhantomLayout::brainweb_like: {
      if (height <= 0 || width <= 0) throw InvalidArgument("phantom needs positive dimensions");
      const auto ref = reference_tissues();
      for (std::size_t k = 0; k < ref.size(); ++k) tissues[static_cast<int>(k + 1)] = ref[k];
      labels.resize(height * width);
      for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) labels(y * width + x) = brainweb_label(y, x, height, width);
      }
      break;
    }
    case PhantomLayout::blocks: {
      if (height <= 0 || width <= 0) throw InvalidArgument("phantom needs positive dimensions");
      if (options.block_rows <= 0 || options.block_cols <= 0) throw InvalidArgument("block grid must be positive");
      auto list = options.block_tissues;
      if (list.empty()) {
        const auto ref = reference_tissues();
        list.assign(ref.begin(), ref.begin() + 2);
      }
      for (std::size_t k = 0; k < list.size(); ++k) tissues[static_cast<int>(k + 1)] = list[k];
      labels.resize(height * width);
      for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) {
          const Index block = (y * options.block_rows / height) * options.block_cols + x * options.block_cols / width;
          labels(y * width + x) = block < static_cast<Index>(list.size()) ? static_cast<int>(block + 1) : 0;
        }
      }
      break;
    }
    case PhantomLayout::custom_file: {
      std::ifstream in(options.custom_file);
      if (!in) throw Error("cannot open phantom file '" + options.custom_file + "'");
      json j;
      try {
        j = json::parse(in);
        height = j.at("height").get<Index>();
        width = j.at("width").get<Index>();
        const auto raw = j.at("labels").get<std::vector<int>>();
        if (height <= 0 || width <= 0 || static_cast<Index>(raw.size()) != height * width) {
          throw FormatError(options.custom_file + ": labels must have height * width entries");
        }
        labels = Eigen::Map<const Eigen::VectorXi>(raw.data(), static_cast<Index>(raw.size()));
        for (const auto& [key, value] : j.at("tissues").items()) {
          tissues[std::stoi(key)] = tissue_from_json(value, options.custom_file);
        }
      } catch (const json::exception& e) {
        throw FormatError(options.custom_file + ": " + e.what());
      }
      for (Index v = 0; v < labels.size(); ++v) {
        if (labels(v) != 0 && !tissues.count(labels(v))) {
          throw FormatError(options.custom_file + ": label " + std::to_string(labels(v)) + " has no tissue");
        }
      }
      break;
    }
  }

  // Per-axis snapping onto the dictionary grid.
  std::vector<double> t1_axis, t2_axis, b0_axis;
  {
    std::set<double> a, b, c;
    for (const auto& p : dict.table()) {
      a.insert(p.t1);
      b.insert(p.t2);
      c.insert(p.b0);
    }
    t1_axis.assign(a.begin(), a.end());
    t2_axis.assign(b.begin(), b.end());
    b0_axis.assign(c.begin(), c.end());
  }
  std::map<int, ComplexVector> rows;
  for (auto& [label, tissue] : tissues) {
    if (label == 0) throw InvalidArgument("tissue label 0 is reserved for background");
    if (!(tissue.pd >= 0.0)) throw InvalidArgument("proton density must be nonnegative");
    if (options.snap) {
      tissue.params = {nearest_value(t1_axis, tissue.params.t1), nearest_value(t2_axis, tissue.params.t2),
                       nearest_value(b0_axis, tissue.params.b0)};
      const Index j = dict.find(tissue.params);
      if (j < 0) throw InvalidArgument("snapped parameters of tissue '" + tissue.name + "' are not in the dictionary");
      rows[label] = dict.atoms().row(j).transpose();
    } else {
      rows[label] = fingerprint(tissue.params, dict.tr_ms(), dict.length()).normalized();
    }
  }

  const Index n = labels.size();
  ph.height = height;
  ph.width = width;
  ph.labels = labels;
  ph.tissues = tissues;
  ph.pd = Eigen::VectorXd::Zero(n);
  ph.t1 = Eigen::VectorXd::Zero(n);
  ph.t2 = Eigen::VectorXd::Zero(n);
  ph.b0 = Eigen::VectorXd::Zero(n);
  ComplexMatrix gt = ComplexMatrix::Zero(n, dict.length());
  for (Index v = 0; v < n; ++v) {
    const int label = labels(v);
    if (label == 0) continue;
    const auto& t = tissues.at(label);
    ph.pd(v) = t.pd;
    ph.t1(v) = t.params.t1;
    ph.t2(v) = t.params.t2;
    ph.b0(v) = t.params.b0;
    gt.row(v) = t.pd * rows.at(label).transpose();
  }
  ph.ground_truth = MrfImage(std::move(gt), height, width);
  return ph;
}

ComplexMatrix simulate_measurements(const ComplexMatrix& x0, const ForwardOperator& op, std::optional<double> snr_db,
                                    std::uint64_t seed) {
  ComplexMatrix y = op.apply(x0);
  if (!snr_db || std::isinf(*snr_db)) return y;
  if (std::isnan(*snr_db)) throw InvalidArgument("SNR must not be NaN");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ComplexMatrix noise(y.rows(), y.cols());
  for (Index i = 0; i < noise.size(); ++i) {
    const double re = normal(rng);
    noise.data()[i] = Complex(re, normal(rng));
  }
  const double target = y.norm() * std::pow(10.0, -*snr_db / 20.0);
  const double norm = noise.norm();
  if (norm > 0.0) y += noise * (target / norm);
  return y;
}

Metrics compute_metrics(const ParameterMaps& maps, const ComplexMatrix& estimate, const Phantom& phantom,
                        double mask_fraction) {
  const Index n = phantom.voxels();
  if (estimate.rows() != n || estimate.cols() != phantom.ground_truth.frames() || maps.pd.size() != n ||
      maps.t1.size() != n || maps.t2.size() != n || maps.b0.size() != n) {
    throw InvalidArgument("estimate does not match the phantom");
  }
  Metrics m;
  const double gt_norm = phantom.ground_truth.data.norm();
  m.nmse = gt_norm > 0.0 ? (estimate - phantom.ground_truth.data).norm() / gt_norm : 0.0;
  const double threshold = mask_fraction * maps.pd.maxCoeff();
  double e1 = 0.0, e2 = 0.0, eb = 0.0;
  for (Index v = 0; v < n; ++v) {
    if (phantom.labels(v) == 0 || !(maps.pd(v) > threshold)) continue;
    ++m.mask_voxels;
    e1 += std::abs(maps.t1(v) - phantom.t1(v)) / phantom.t1(v);
    e2 += std::abs(maps.t2(v) - phantom.t2(v)) / phantom.t2(v);
    eb += std::abs(maps.b0(v) - phantom.b0(v)) / std::max(std::abs(phantom.b0(v)), 1.0);
  }
  if (m.mask_voxels == 0) throw InvalidArgument("metrics mask is empty");
  const auto count = static_cast<double>(m.mask_voxels);
  m.t1_accuracy = 1.0 - e1 / count;
  m.t2_accuracy = 1.0 - e2 / count;
  m.b0_accuracy = 1.0 - eb / count;
  return m;
}

namespace {

class ConfigReader {
 public:
  ConfigReader(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& message) const {
    std::string dotted;
    for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
    throw ConfigError(source_ + ":" + std::to_string(line_of(path)) + ": " + (dotted.empty() ? "" : dotted + ": ") +
                      message);
  }

  void only_keys(const json& obj, const std::vector<std::string>& path, std::initializer_list<const char*> keys) const {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
      if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) == keys.end()) {
        auto where = path;
        where.push_back(key);
        fail(where, "unknown key");
      }
    }
  }

  template <typename T>
  T get(const json& obj, std::vector<std::string> path, const std::string& key, const T& fallback) const {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    return require<T>(obj, std::move(path), key);
  }

  template <typename T>
  T require(const json& obj, std::vector<std::string> path, const std::string& key) const {
    path.push_back(key);
    if (!obj.contains(key)) {
      path.pop_back();
      fail(path, "missing key '" + key + "'");
    }
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      fail(path, "wrong type");
    }
  }

 private:
  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& key : path) {
      const auto hit = text_.find("\"" + key + "\"", pos);
      if (hit == std::string::npos) break;
      pos = hit;
    }
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
  }

  const std::string& text_;
  std::string source_;
};

std::string resolve_path(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

json config_to_json(const ExperimentConfig& c) {
  json phantom = {{"height", c.height},
                  {"width", c.width},
                  {"snap", c.phantom.snap}};
  switch (c.phantom.layout) {
    case PhantomLayout::brainweb_like: phantom["layout"] = "brainweb_like"; break;
    case PhantomLayout::blocks:
      phantom["layout"] = "blocks";
      phantom["block_rows"] = c.phantom.block_rows;
      phantom["block_cols"] = c.phantom.block_cols;
      if (!c.phantom.block_tissues.empty()) {
        json list = json::array();
        for (const auto& t : c.phantom.block_tissues) {
          list.push_back({{"name", t.name}, {"t1", t.params.t1}, {"t2", t.params.t2}, {"b0", t.params.b0}, {"pd", t.pd}});
        }
        phantom["tissues"] = list;
      }
      break;
    case PhantomLayout::custom_file:
      phantom["layout"] = "custom_file";
      phantom["file"] = c.phantom.custom_file;
      break;
  }
  json dictionary;
  if (!c.dictionary_file.empty()) {
    dictionary = {{"file", c.dictionary_file}};
  } else {
    dictionary = {{"t1", c.t1_range}, {"t2", c.t2_range}, {"b0", c.b0_range}, {"tr_ms", c.tr_ms}, {"length", c.length}};
  }
  json op = {{"kind", c.operator_kind}};
  if (c.operator_kind == "epi") op["lines_per_frame"] = c.lines_per_frame;
  if (c.operator_kind == "gaussian") op["m"] = c.gaussian_rows;
  if (c.operator_kind == "pattern_file") op["pattern_file"] = c.pattern_file;
  json solver = {{"zeta", c.solver.zeta},
                 {"max_iters", c.solver.max_iters},
                 {"rel_tol", c.solver.rel_tol},
                 {"max_shrink_per_iter", c.solver.max_shrink_per_iter},
                 {"step_policy", c.solver.step_policy == StepPolicy::carry_over ? "carry_over" : "reset_each_iter"},
                 {"weights", c.solver.weights_enabled}};
  solver["mu_init"] = c.solver.mu_init ? json(*c.solver.mu_init) : json(nullptr);
  solver["fixed_step"] = c.solver.fixed_step ? json(*c.solver.fixed_step) : json(nullptr);
  json algorithms = json::array();
  for (auto a : c.algorithms) algorithms.push_back(to_string(a));
  return {{"name", c.name},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"phantom", phantom},
          {"dictionary", dictionary},
          {"operator", op},
          {"noise", {{"snr_db", c.snr_db ? json(*c.snr_db) : json(nullptr)}}},
          {"solver", solver},
          {"runs", {{"algorithms", algorithms}, {"epsilons", c.epsilons}, {"ranks", c.ranks}}}};
}

ExperimentConfig parse_config_impl(const std::string& text, const std::string& source, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  const ConfigReader r(text, source);
  r.only_keys(root, {}, {"name", "seed", "output_dir", "phantom", "dictionary", "operator", "noise", "solver", "runs"});

  ExperimentConfig c;
  c.name = r.get<std::string>(root, {}, "name", c.name);
  c.seed = r.get<std::uint64_t>(root, {}, "seed", c.seed);
  c.output_dir = r.get<std::string>(root, {}, "output_dir", c.output_dir);
  if (c.name.empty() || c.name.find('/') != std::string::npos) r.fail({"name"}, "must be a plain directory name");

  const json empty = json::object();
  const json& ph = root.contains("phantom") ? root.at("phantom") : empty;
  r.only_keys(ph, {"phantom"}, {"height", "width", "layout", "snap", "block_rows", "block_cols", "tissues", "file"});
  c.height = r.get<Index>(ph, {"phantom"}, "height", c.height);
  c.width = r.get<Index>(ph, {"phantom"}, "width", c.width);
  if (c.height <= 0 || c.width <= 0) r.fail({"phantom", "height"}, "dimensions must be positive");
  try {
    c.phantom.layout = parse_layout(r.get<std::string>(ph, {"phantom"}, "layout", "brainweb_like"));
  } catch (const InvalidArgument& e) {
    r.fail({"phantom", "layout"}, e.what());
  }
  c.phantom.snap = r.get<bool>(ph, {"phantom"}, "snap", true);
  c.phantom.block_rows = r.get<Index>(ph, {"phantom"}, "block_rows", c.phantom.block_rows);
  c.phantom.block_cols = r.get<Index>(ph, {"phantom"}, "block_cols", c.phantom.block_cols);
  if (ph.contains("tissues")) {
    if (!ph.at("tissues").is_array()) r.fail({"phantom", "tissues"}, "expected an array");
    for (const auto& t : ph.at("tissues")) {
      try {
        c.phantom.block_tissues.push_back(tissue_from_json(t, source));
      } catch (const FormatError& e) {
        r.fail({"phantom", "tissues"}, e.what());
      }
    }
  }
  c.phantom.custom_file = resolve_path(r.get<std::string>(ph, {"phantom"}, "file", ""), base_dir);
  if (c.phantom.layout == PhantomLayout::custom_file && c.phantom.custom_file.empty()) {
    r.fail({"phantom", "layout"}, "custom_file layout needs 'file'");
  }

  if (!root.contains("dictionary")) r.fail({}, "missing key 'dictionary'");
  const json& dj = root.at("dictionary");
  r.only_keys(dj, {"dictionary"}, {"file", "t1", "t2", "b0", "tr_ms", "length"});
  c.dictionary_file = resolve_path(r.get<std::string>(dj, {"dictionary"}, "file", ""), base_dir);
  if (c.dictionary_file.empty()) {
    c.t1_range = r.require<std::string>(dj, {"dictionary"}, "t1");
    c.t2_range = r.require<std::string>(dj, {"dictionary"}, "t2");
    c.b0_range = r.require<std::string>(dj, {"dictionary"}, "b0");
    c.tr_ms = r.require<double>(dj, {"dictionary"}, "tr_ms");
    c.length = r.require<Index>(dj, {"dictionary"}, "length");
    for (const char* key : {"t1", "t2", "b0"}) {
      try {
        (void)parse_ranges(dj.at(key).get<std::string>());
      } catch (const InvalidArgument& e) {
        r.fail({"dictionary", key}, e.what());
      }
    }
    if (!(c.tr_ms > 0.0)) r.fail({"dictionary", "tr_ms"}, "must be positive");
    if (c.length < 2) r.fail({"dictionary", "length"}, "must be at least 2");
  }

  const json& oj = root.contains("operator") ? root.at("operator") : empty;
  r.only_keys(oj, {"operator"}, {"kind", "lines_per_frame", "m", "pattern_file"});
  c.operator_kind = r.get<std::string>(oj, {"operator"}, "kind", c.operator_kind);
  if (c.operator_kind == "epi") {
    c.lines_per_frame = r.require<Index>(oj, {"operator"}, "lines_per_frame");
    if (c.lines_per_frame < 1 || c.lines_per_frame > c.height) {
      r.fail({"operator", "lines_per_frame"}, "must lie in [1, height]");
    }
  } else if (c.operator_kind == "gaussian") {
    c.gaussian_rows = r.require<Index>(oj, {"operator"}, "m");
    if (c.gaussian_rows < 1) r.fail({"operator", "m"}, "must be positive");
  } else if (c.operator_kind == "pattern_file") {
    c.pattern_file = resolve_path(r.require<std::string>(oj, {"operator"}, "pattern_file"), base_dir);
  } else if (c.operator_kind != "full") {
    r.fail({"operator", "kind"}, "expected one of epi, full, gaussian, pattern_file");
  }

  const json& nj = root.contains("noise") ? root.at("noise") : empty;
  r.only_keys(nj, {"noise"}, {"snr_db"});
  if (nj.contains("snr_db") && !nj.at("snr_db").is_null()) {
    const auto& v = nj.at("snr_db");
    if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "infinity")) {
      c.snr_db.reset();
    } else if (v.is_number()) {
      c.snr_db = v.get<double>();
    } else {
      r.fail({"noise", "snr_db"}, "expected a number, \"inf\" or null");
    }
  }

  const json& sj = root.contains("solver") ? root.at("solver") : empty;
  r.only_keys(sj, {"solver"},
              {"mu_init", "zeta", "max_iters", "rel_tol", "max_shrink_per_iter", "step_policy", "fixed_step", "weights"});
  if (sj.contains("mu_init") && !sj.at("mu_init").is_null()) c.solver.mu_init = r.require<double>(sj, {"solver"}, "mu_init");
  if (sj.contains("fixed_step") && !sj.at("fixed_step").is_null()) {
    c.solver.fixed_step = r.require<double>(sj, {"solver"}, "fixed_step");
  }
  c.solver.zeta = r.get<double>(sj, {"solver"}, "zeta", c.solver.zeta);
  c.solver.max_iters = r.get<int>(sj, {"solver"}, "max_iters", c.solver.max_iters);
  c.solver.rel_tol = r.get<double>(sj, {"solver"}, "rel_tol", c.solver.rel_tol);
  c.solver.max_shrink_per_iter = r.get<int>(sj, {"solver"}, "max_shrink_per_iter", c.solver.max_shrink_per_iter);
  c.solver.weights_enabled = r.get<bool>(sj, {"solver"}, "weights", false);
  const auto policy = r.get<std::string>(sj, {"solver"}, "step_policy", "reset_each_iter");
  if (policy == "carry_over") {
    c.solver.step_policy = StepPolicy::carry_over;
  } else if (policy != "reset_each_iter") {
    r.fail({"solver", "step_policy"}, "expected reset_each_iter or carry_over");
  }
  if (!(c.solver.zeta > 1.0)) r.fail({"solver", "zeta"}, "must exceed 1");
  if (c.solver.max_iters < 1) r.fail({"solver", "max_iters"}, "must be positive");
  if (!(c.solver.rel_tol > 0.0)) r.fail({"solver", "rel_tol"}, "must be positive");

  if (!root.contains("runs")) r.fail({}, "missing key 'runs'");
  const json& rj = root.at("runs");
  r.only_keys(rj, {"runs"}, {"algorithms", "epsilons", "ranks"});
  for (const auto& name : r.require<std::vector<std::string>>(rj, {"runs"}, "algorithms")) {
    try {
      c.algorithms.push_back(parse_solver_mode(name));
    } catch (const InvalidArgument& e) {
      r.fail({"runs", "algorithms"}, e.what());
    }
  }
  if (c.algorithms.empty()) r.fail({"runs", "algorithms"}, "must not be empty");
  c.epsilons = r.get<std::vector<double>>(rj, {"runs"}, "epsilons", c.epsilons);
  for (double e : c.epsilons) {
    if (!(e >= 0.0)) r.fail({"runs", "epsilons"}, "epsilon must be >= 0");
  }
  if (c.epsilons.empty()) r.fail({"runs", "epsilons"}, "must not be empty");
  if (rj.contains("ranks")) {
    c.ranks.clear();
    if (!rj.at("ranks").is_array()) r.fail({"runs", "ranks"}, "expected an array");
    for (const auto& v : rj.at("ranks")) {
      if (v.is_null()) {
        c.ranks.push_back(0);
      } else if (v.is_number_integer() && v.get<Index>() >= 0) {
        c.ranks.push_back(v.get<Index>());
      } else {
        r.fail({"runs", "ranks"}, "ranks must be nonnegative integers or null");
      }
    }
    if (c.ranks.empty()) r.fail({"runs", "ranks"}, "must not be empty");
  }
  c.resolved_json = config_to_json(c).dump(2);
  return c;
}

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string run_name(SolverMode mode, double eps, Index rank) {
  std::string name = to_string(mode);
  if (mode == SolverMode::coverblip) name += "_eps" + format_number(eps);
  if (rank > 0) name += "_s" + std::to_string(rank);
  return name;
}

std::ofstream open_output(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot open '" + p.string() + "' for writing");
  out << std::setprecision(10);
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source) {
  return parse_config_impl(text, source, "");
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_impl(buf.str(), path, fs::path(path).parent_path().string());
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
#ifdef _OPENMP
  if (const char* workers = std::getenv("COVERBLIP_WORKERS")) {
    const int w = std::atoi(workers);
    if (w > 0) omp_set_num_threads(w);
  }
#endif
  std::string root = config.output_dir;
  if (const char* env = std::getenv("COVERBLIP_OUTPUT_ROOT"); env && *env) root = env;
  const fs::path dir = fs::path(root) / config.name;
  fs::create_directories(dir);

  std::vector<std::pair<std::string, double>> timings;
  auto clock_start = std::chrono::steady_clock::now();
  auto lap = [&](const std::string& what) {
    const auto now = std::chrono::steady_clock::now();
    timings.emplace_back(what, std::chrono::duration<double>(now - clock_start).count());
    clock_start = now;
  };

  const Dictionary dict =
      config.dictionary_file.empty()
          ? generate_fingerprints({parse_ranges(config.t1_range), parse_ranges(config.t2_range),
                                   parse_ranges(config.b0_range)},
                                  config.tr_ms, config.length)
          : load_dictionary(config.dictionary_file);
  lap("dictionary");
  for (Index s : config.ranks) {
    if (s > dict.length()) throw InvalidArgument("rank " + std::to_string(s) + " exceeds the fingerprint length");
  }

  const Phantom phantom = build_phantom(config.height, config.width, config.phantom, dict);
  const Index h = phantom.height, w = phantom.width, n = phantom.voxels();

  const ForwardOperator op = [&] {
    if (config.operator_kind == "epi") {
      return ForwardOperator::cartesian(h, w, make_epi_pattern(h, w, config.lines_per_frame, dict.length()));
    }
    if (config.operator_kind == "full") return ForwardOperator::cartesian(h, w, make_full_pattern(n, dict.length()));
    if (config.operator_kind == "gaussian") {
      return make_gaussian_operator(n, config.gaussian_rows, dict.length(), config.seed);
    }
    const auto spec = load_pattern_spec(config.pattern_file);
    if (spec.height != h || spec.width != w || spec.frames != dict.length()) {
      throw InvalidArgument("pattern file does not match the phantom grid and fingerprint length");
    }
    return ForwardOperator::cartesian(h, w, make_pattern(spec));
  }();
  const ComplexMatrix y = simulate_measurements(phantom.ground_truth.data, op, config.snr_db, config.seed);
  io::save_complex_matrix(y, (dir / "measurements.bin").string());
  lap("measurements");

  std::map<Index, CompressedDictionary> compressed;
  std::map<Index, CoverTree<Complex>> trees;
  const bool need_tree = std::find(config.algorithms.begin(), config.algorithms.end(), SolverMode::coverblip) !=
                         config.algorithms.end();
  for (Index s : config.ranks) {
    if (s > 0 && !compressed.count(s)) compressed.emplace(s, svd_compress(dict, s));
    if (need_tree && !trees.count(s)) {
      trees.emplace(s, CoverTree<Complex>::build(s > 0 ? compressed.at(s).atoms() : dict.atoms()));
      lap("tree_s" + std::to_string(s));
    }
  }

  ExperimentReport report;
  report.output_dir = dir.string();
  for (SolverMode mode : config.algorithms) {
    const std::vector<double> eps_list = mode == SolverMode::coverblip ? config.epsilons : std::vector<double>{0.0};
    for (double eps : eps_list) {
      for (Index s : config.ranks) {
        SolverConfig cfg = config.solver;
        cfg.mode = mode;
        cfg.epsilon = eps;
        const CoverTree<Complex>* tree = mode == SolverMode::coverblip ? &trees.at(s) : nullptr;
        const ComplexMatrix* gt = &phantom.ground_truth.data;
        const SolveResult res = s > 0 ? solve_compressed(y, op, dict, compressed.at(s), tree, cfg, gt)
                                      : solve(y, op, dict, tree, cfg, gt);
        RunSummary row;
        row.run = run_name(mode, eps, s);
        row.algorithm = to_string(mode);
        row.epsilon = mode == SolverMode::coverblip ? eps : 0.0;
        row.rank = s;
        row.iterations = res.trace.iteration_count();
        row.stop_reason = res.trace.stop_reason;
        row.metrics = compute_metrics(res.maps, res.image, phantom);
        row.search_cost = res.trace.total_cost;
        row.search_flops = res.trace.total_cost * static_cast<std::uint64_t>(s > 0 ? s : dict.length());
        row.final_fidelity = res.trace.iterations.empty() ? y.norm() : res.trace.iterations.back().fidelity;
        row.seconds = res.trace.total_seconds;
        timings.emplace_back("run_" + row.run, row.seconds);

        write_trace_csv(res.trace, (dir / ("trace_" + row.run + ".csv")).string());
        const fs::path maps_dir = dir / ("maps_" + row.run);
        fs::create_directories(maps_dir);
        write_map_csv(res.maps.t1, h, w, (maps_dir / "t1.csv").string());
        write_map_csv(res.maps.t2, h, w, (maps_dir / "t2.csv").string());
        write_map_csv(res.maps.b0, h, w, (maps_dir / "b0.csv").string());
        write_map_csv(res.maps.pd, h, w, (maps_dir / "pd.csv").string());
        report.runs.push_back(row);
      }
    }
  }
  clock_start = std::chrono::steady_clock::now();

  {
    auto out = open_output(dir / "summary.csv");
    out << "run,algorithm,epsilon,rank,iterations,stop_reason,nmse,t1_accuracy,t2_accuracy,b0_accuracy,mask_voxels,"
           "search_cost,search_flops,final_fidelity\n";
    for (const auto& r : report.runs) {
      out << r.run << ',' << r.algorithm << ',' << r.epsilon << ',' << r.rank << ',' << r.iterations << ','
          << r.stop_reason << ',' << r.metrics.nmse << ',' << r.metrics.t1_accuracy << ',' << r.metrics.t2_accuracy
          << ',' << r.metrics.b0_accuracy << ',' << r.metrics.mask_voxels << ',' << r.search_cost << ','
          << r.search_flops << ',' << r.final_fidelity << '\n';
    }
  }
  {
    json runs = json::array();
    for (const auto& r : report.runs) {
      runs.push_back({{"run", r.run},
                      {"algorithm", r.algorithm},
                      {"epsilon", r.epsilon},
                      {"rank", r.rank},
                      {"iterations", r.iterations},
                      {"stop_reason", r.stop_reason},
                      {"nmse", r.metrics.nmse},
                      {"t1_accuracy", r.metrics.t1_accuracy},
                      {"t2_accuracy", r.metrics.t2_accuracy},
                      {"b0_accuracy", r.metrics.b0_accuracy},
                      {"mask_voxels", r.metrics.mask_voxels},
                      {"search_cost", r.search_cost},
                      {"search_flops", r.search_flops},
                      {"final_fidelity", r.final_fidelity}});
    }
    const json summary = {{"config", json::parse(config.resolved_json)},
                          {"dictionary_size", dict.size()},
                          {"dictionary_unfiltered", dict.unfiltered_count()},
                          {"voxels", n},
                          {"measurements_per_frame", op.measurement_rows()},
                          {"runs", runs}};
    auto out = open_output(dir / "summary.json");
    out << summary.dump(2) << '\n';
    auto cfg_out = open_output(dir / "resolved_config.json");
    cfg_out << config.resolved_json << '\n';
  }
  {
    auto out = open_output(dir / "plotdata_cost_vs_nmse.csv");
    out << "run,algorithm,epsilon,rank,search_cost,nmse\n";
    for (const auto& r : report.runs) {
      out << r.run << ',' << r.algorithm << ',' << r.epsilon << ',' << r.rank << ',' << r.search_cost << ','
          << r.metrics.nmse << '\n';
    }
  }
  {
    auto out = open_output(dir / "timings.csv");
    out << "stage,seconds\n";
    for (const auto& [stage, secs] : timings) out << stage << ',' << secs << '\n';
  }
  return report;
}

ExperimentReport run_experiment(const std::string& config_path) {
  return run_experiment(load_experiment_config(config_path));
}

}  // namespace coverblip
