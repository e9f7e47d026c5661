#include "coverblip/forward_model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <unsupported/Eigen/FFT>

#include "json.hpp"

namespace coverblip {

namespace {

// Unitary 2-D DFT of a row-major h x w grid, in place.
class GridTransform {
 public:
  GridTransform(Index height, Index width)
      : height_(height), width_(width), scale_(1.0 / std::sqrt(static_cast<double>(height * width))),
        line_(std::max(height, width)), out_(std::max(height, width)) {
    fft_.SetFlag(Eigen::FFT<double>::Unscaled);
  }

  void forward(Complex* grid) { run(grid, false); }
  void inverse(Complex* grid) { run(grid, true); }

 private:
  void transform(Complex* dst, const Complex* src, Index len, bool inverse) {
    if (inverse) {
      fft_.inv(dst, src, len);
    } else {
      fft_.fwd(dst, src, len);
    }
  }

  void run(Complex* grid, bool inverse) {
    for (Index y = 0; y < height_; ++y) {
      Complex* row = grid + y * width_;
      transform(out_.data(), row, width_, inverse);
      std::copy(out_.data(), out_.data() + width_, row);
    }
    for (Index x = 0; x < width_; ++x) {
      for (Index y = 0; y < height_; ++y) line_[static_cast<std::size_t>(y)] = grid[y * width_ + x];
      transform(out_.data(), line_.data(), height_, inverse);
      for (Index y = 0; y < height_; ++y) grid[y * width_ + x] = out_[static_cast<std::size_t>(y)] * scale_;
    }
  }

  Index height_;
  Index width_;
  double scale_;
  std::vector<Complex> line_;
  std::vector<Complex> out_;
  Eigen::FFT<double> fft_;
};

ComplexMatrix check_coil_maps(ComplexMatrix maps, Index n) {
  if (maps.size() == 0) return ComplexMatrix::Ones(1, n);
  if (maps.cols() != n) throw InvalidArgument("coil maps must have one column per voxel");
  return maps;
}

ComplexMatrix random_cone_points(const ComplexRowTable& atoms, Index n, std::mt19937_64& rng,
                                 std::span<const double> scales) {
  std::uniform_int_distribution<Index> pick_atom(0, atoms.rows() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_scale(0, scales.empty() ? 0 : scales.size() - 1);
  ComplexMatrix x(n, atoms.cols());
  for (Index v = 0; v < n; ++v) {
    const double gamma = scales.empty() ? 1.0 - unit(rng) : scales[pick_scale(rng)];
    x.row(v) = gamma * atoms.row(pick_atom(rng));
  }
  return x;
}

void check_cone_inputs(const ForwardOperator& op, const ComplexRowTable& atoms) {
  if (atoms.rows() == 0) throw InvalidArgument("empty atom set");
  if (atoms.cols() != op.frames()) throw InvalidArgument("atom length does not match operator frame count");
}

}  // namespace

MrfImage::MrfImage(ComplexMatrix values, Index h, Index w) : data(std::move(values)), height(h), width(w) {
  if (h <= 0 || w <= 0 || h * w != data.rows()) throw InvalidArgument("image rows must equal height * width");
}

SamplingPattern::SamplingPattern(Index n, std::vector<std::vector<Index>> frames) : n_(n), frames_(std::move(frames)) {
  if (n <= 0 || frames_.empty()) throw InvalidArgument("sampling pattern needs n > 0 and at least one frame");
  m_ = static_cast<Index>(frames_.front().size());
  if (m_ == 0) throw InvalidArgument("sampling pattern frame is empty");
  std::vector<char> seen(static_cast<std::size_t>(n));
  for (const auto& f : frames_) {
    if (static_cast<Index>(f.size()) != m_) throw InvalidArgument("sampling pattern frames differ in size");
    std::fill(seen.begin(), seen.end(), 0);
    for (Index k : f) {
      if (k < 0 || k >= n) throw InvalidArgument("sample index out of range");
      if (seen[static_cast<std::size_t>(k)]++) throw InvalidArgument("sample index repeated within a frame");
    }
  }
}

SamplingPattern make_epi_pattern(Index height, Index width, Index lines, Index frames) {
  if (height <= 0 || width <= 0 || frames <= 0) throw InvalidArgument("EPI pattern needs positive dimensions");
  if (lines < 1 || lines > height) throw InvalidArgument("lines per frame must lie in [1, height]");
  const Index spacing = height / lines;
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(frames));
  for (Index t = 0; t < frames; ++t) {
    auto& f = out[static_cast<std::size_t>(t)];
    f.reserve(static_cast<std::size_t>(lines * width));
    const Index offset = t % spacing;
    for (Index i = 0; i < lines; ++i) {
      const Index ky = offset + i * spacing;
      for (Index kx = 0; kx < width; ++kx) f.push_back(ky * width + kx);
    }
  }
  return SamplingPattern(height * width, std::move(out));
}

SamplingPattern make_full_pattern(Index n, Index frames) {
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) all[static_cast<std::size_t>(k)] = k;
  return SamplingPattern(n, std::vector<std::vector<Index>>(static_cast<std::size_t>(frames), all));
}

PatternSpec load_pattern_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pattern file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    PatternSpec s;
    s.height = j.at("h").get<Index>();
    s.width = j.at("w").get<Index>();
    s.frames = j.at("L").get<Index>();
    s.lines_per_frame = j.at("lines_per_frame").get<Index>();
    s.offset_rule = j.value("offset_rule", std::string("shift_by_one"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("pattern file '" + path + "': " + e.what());
  }
}

void save_pattern_spec(const PatternSpec& spec, const std::string& path) {
  const nlohmann::json j = {{"h", spec.height},
                            {"w", spec.width},
                            {"L", spec.frames},
                            {"lines_per_frame", spec.lines_per_frame},
                            {"offset_rule", spec.offset_rule}};
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

SamplingPattern make_pattern(const PatternSpec& spec) {
  if (spec.offset_rule == "shift_by_one") {
    return make_epi_pattern(spec.height, spec.width, spec.lines_per_frame, spec.frames);
  }
  if (spec.offset_rule == "fixed") {
    const auto first = make_epi_pattern(spec.height, spec.width, spec.lines_per_frame, 1);
    return SamplingPattern(spec.height * spec.width,
                           std::vector<std::vector<Index>>(static_cast<std::size_t>(spec.frames), first.frame(0)));
  }
  throw InvalidArgument("unknown offset_rule '" + spec.offset_rule + "'");
}

ForwardOperator ForwardOperator::cartesian(Index height, Index width, SamplingPattern pattern, ComplexMatrix coil_maps) {
  if (pattern.n() != height * width) throw InvalidArgument("sampling pattern does not match the image grid");
  ForwardOperator op;
  op.kind_ = Kind::cartesian_dft;
  op.height_ = height;
  op.width_ = width;
  op.n_ = height * width;
  op.m_ = pattern.m();
  op.frames_ = pattern.frames();
  op.coil_maps_ = check_coil_maps(std::move(coil_maps), op.n_);
  op.coils_ = op.coil_maps_.rows();
  op.pattern_ = std::move(pattern);
  return op;
}

ForwardOperator ForwardOperator::cartesian_identity(Index height, Index width, SamplingPattern pattern,
                                                    ComplexMatrix coil_maps) {
  auto op = cartesian(height, width, std::move(pattern), std::move(coil_maps));
  op.kind_ = Kind::cartesian_identity;
  return op;
}

ForwardOperator ForwardOperator::dense(ComplexMatrix matrix, Index frames) {
  if (matrix.size() == 0 || frames <= 0) throw InvalidArgument("dense operator needs a nonempty matrix and frames > 0");
  ForwardOperator op;
  op.kind_ = Kind::dense;
  op.n_ = matrix.cols();
  op.m_ = matrix.rows();
  op.frames_ = frames;
  op.matrices_.push_back(std::move(matrix));
  return op;
}

ForwardOperator ForwardOperator::dense_per_frame(std::vector<ComplexMatrix> matrices) {
  if (matrices.empty() || matrices.front().size() == 0) throw InvalidArgument("dense operator needs matrices");
  for (const auto& m : matrices) {
    if (m.rows() != matrices.front().rows() || m.cols() != matrices.front().cols()) {
      throw InvalidArgument("per-frame matrices differ in shape");
    }
  }
  ForwardOperator op;
  op.kind_ = Kind::dense;
  op.n_ = matrices.front().cols();
  op.m_ = matrices.front().rows();
  op.frames_ = static_cast<Index>(matrices.size());
  op.matrices_ = std::move(matrices);
  return op;
}

void ForwardOperator::set_weights(Eigen::MatrixXd weights) {
  if (weights.size() != 0) {
    if (weights.rows() != measurement_rows() || weights.cols() != frames_) {
      throw InvalidArgument("weights must be measurement_rows x frames");
    }
    if ((weights.array() < 0.0).any() || !weights.allFinite()) throw InvalidArgument("weights must be nonnegative");
  }
  weights_ = std::move(weights);
}

const ComplexMatrix& ForwardOperator::frame_matrix(Index t) const {
  return matrices_.size() == 1 ? matrices_.front() : matrices_[static_cast<std::size_t>(t)];
}

void ForwardOperator::check_image(const ComplexMatrix& image) const {
  if (image.rows() != n_ || image.cols() != frames_) {
    throw InvalidArgument("image is " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                          ", operator expects " + std::to_string(n_) + "x" + std::to_string(frames_));
  }
}

void ForwardOperator::check_measurements(const ComplexMatrix& y) const {
  if (y.rows() != measurement_rows() || y.cols() != frames_) {
    throw InvalidArgument("measurements are " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                          ", operator expects " + std::to_string(measurement_rows()) + "x" +
                          std::to_string(frames_));
  }
}

ComplexMatrix ForwardOperator::apply(const ComplexMatrix& image) const {
  check_image(image);
  if (kind_ == Kind::dense) {
    if (matrices_.size() == 1) return matrices_.front() * image;
    ComplexMatrix y(m_, frames_);
    for (Index t = 0; t < frames_; ++t) y.col(t).noalias() = frame_matrix(t) * image.col(t);
    return y;
  }
  ComplexMatrix y(measurement_rows(), frames_);
#pragma omp parallel
  {
    GridTransform dft(height_, width_);
    ComplexVector grid(n_);
#pragma omp for schedule(static)
    for (Index t = 0; t < frames_; ++t) {
      const auto& samples = pattern_.frame(t);
      for (Index c = 0; c < coils_; ++c) {
        grid = coil_maps_.row(c).transpose().cwiseProduct(image.col(t));
        if (kind_ == Kind::cartesian_dft) dft.forward(grid.data());
        for (Index k = 0; k < m_; ++k) y(c * m_ + k, t) = grid(samples[static_cast<std::size_t>(k)]);
      }
    }
  }
  return y;
}

ComplexMatrix ForwardOperator::adjoint(const ComplexMatrix& measurements) const {
  check_measurements(measurements);
  if (kind_ == Kind::dense) {
    if (matrices_.size() == 1) return matrices_.front().adjoint() * measurements;
    ComplexMatrix x(n_, frames_);
    for (Index t = 0; t < frames_; ++t) x.col(t).noalias() = frame_matrix(t).adjoint() * measurements.col(t);
    return x;
  }
  ComplexMatrix x = ComplexMatrix::Zero(n_, frames_);
#pragma omp parallel
  {
    GridTransform dft(height_, width_);
    ComplexVector grid(n_);
#pragma omp for schedule(static)
    for (Index t = 0; t < frames_; ++t) {
      const auto& samples = pattern_.frame(t);
      for (Index c = 0; c < coils_; ++c) {
        grid.setZero();
        for (Index k = 0; k < m_; ++k) grid(samples[static_cast<std::size_t>(k)]) = measurements(c * m_ + k, t);
        if (kind_ == Kind::cartesian_dft) dft.inverse(grid.data());
        x.col(t) += coil_maps_.row(c).adjoint().cwiseProduct(grid);
      }
    }
  }
  return x;
}

ForwardOperator make_gaussian_operator(Index n, Index m, Index frames, std::uint64_t seed, bool per_frame) {
  if (n <= 0 || m <= 0 || frames <= 0) throw InvalidArgument("gaussian operator needs positive dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(2.0 * static_cast<double>(m));
  auto draw = [&] {
    ComplexMatrix a(m, n);
    for (Index i = 0; i < a.size(); ++i) {
      const double re = normal(rng);
      a.data()[i] = Complex(re, normal(rng)) * scale;
    }
    return a;
  };
  if (!per_frame) return ForwardOperator::dense(draw(), frames);
  std::vector<ComplexMatrix> mats;
  for (Index t = 0; t < frames; ++t) mats.push_back(draw());
  return ForwardOperator::dense_per_frame(std::move(mats));
}

double estimate_spectral_norm(const ForwardOperator& op, double rel_tol, int max_iters) {
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ComplexMatrix x(op.n(), op.frames());
  for (Index i = 0; i < x.size(); ++i) {
    const double re = normal(rng);
    x.data()[i] = Complex(re, normal(rng));
  }
  x.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const ComplexMatrix y = op.adjoint(op.apply(x));
    const double next = std::real(x.cwiseProduct(y.conjugate()).sum());
    const double norm = y.norm();
    if (norm == 0.0) return 0.0;
    x = y / norm;
    const bool done = it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next);
    lambda = next;
    if (done) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

BilipschitzEstimate estimate_bilipschitz(const ForwardOperator& op, const ComplexRowTable& atoms, Index pairs,
                                         std::uint64_t seed, std::span<const double> scales) {
  if (pairs < 1) throw InvalidArgument("need at least one pair");
  check_cone_inputs(op, atoms);
  for (double s : scales) {
    if (!(s > 0.0)) throw InvalidArgument("cone scales must be positive");
  }
  std::mt19937_64 rng(seed);
  BilipschitzEstimate est{std::numeric_limits<double>::infinity(), 0.0, 0};
  for (Index p = 0; p < pairs; ++p) {
    const ComplexMatrix diff = random_cone_points(atoms, op.n(), rng, scales) -
                               random_cone_points(atoms, op.n(), rng, scales);
    const double denom = diff.squaredNorm();
    if (denom == 0.0) continue;
    const double ratio = op.apply(diff).squaredNorm() / denom;
    est.alpha = std::min(est.alpha, ratio);
    est.beta = std::max(est.beta, ratio);
    ++est.pairs;
  }
  if (est.pairs == 0) throw InvalidArgument("every sampled pair coincided");
  return est;
}

BilipschitzEstimate exhaustive_bilipschitz(const ForwardOperator& op, const ComplexRowTable& atoms,
                                           std::span<const double> scales) {
  check_cone_inputs(op, atoms);
  if (scales.empty()) throw InvalidArgument("exhaustive mode needs a scale set");
  // Every (scale, atom) pair for x and x' in one voxel.
  std::vector<Eigen::RowVectorXcd> rows;
  for (double s : scales) {
    for (double s2 : scales) {
      for (Index a = 0; a < atoms.rows(); ++a) {
        for (Index b = 0; b < atoms.rows(); ++b) rows.push_back(s * atoms.row(a) - s2 * atoms.row(b));
      }
    }
  }
  const auto per_voxel = static_cast<double>(rows.size());
  if (std::pow(per_voxel, static_cast<double>(op.n())) > 1e7) {
    throw InvalidArgument("exhaustive bi-Lipschitz search too large");
  }
  std::vector<std::size_t> digit(static_cast<std::size_t>(op.n()), 0);
  ComplexMatrix diff(op.n(), atoms.cols());
  BilipschitzEstimate est{std::numeric_limits<double>::infinity(), 0.0, 0};
  while (true) {
    for (Index v = 0; v < op.n(); ++v) diff.row(v) = rows[digit[static_cast<std::size_t>(v)]];
    const double denom = diff.squaredNorm();
    if (denom > 0.0) {
      const double ratio = op.apply(diff).squaredNorm() / denom;
      est.alpha = std::min(est.alpha, ratio);
      est.beta = std::max(est.beta, ratio);
      ++est.pairs;
    }
    std::size_t v = 0;
    while (v < digit.size() && ++digit[v] == rows.size()) digit[v++] = 0;
    if (v == digit.size()) break;
  }
  if (est.pairs == 0) throw InvalidArgument("every pair coincided");
  return est;
}

}  // namespace coverblip
