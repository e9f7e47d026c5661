#include "coverblip/dictionary.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "coverblip/binary_io.hpp"

namespace coverblip {

namespace {

constexpr io::Magic kDictMagic = {'C', 'B', 'D', 'I', 'C', 'T', '\0', '\0'};
constexpr std::uint32_t kDictVersion = 1;

double parse_number(std::string_view token, std::string_view whole) {
  while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
  while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw InvalidArgument("bad number '" + std::string(token) + "' in range '" + std::string(whole) + "'");
  }
  return value;
}

void check_axis(const std::vector<double>& axis, const char* name) {
  if (axis.empty()) throw InvalidArgument(std::string("degenerate grid: no ") + name + " values");
  for (std::size_t k = 1; k < axis.size(); ++k) {
    if (!(axis[k] > axis[k - 1])) throw InvalidArgument(std::string("degenerate grid: ") + name + " not strictly increasing");
  }
}

// Off-resonance phase advances 2 pi B0 TR/1000 per frame, so two B0 values
// that differ by a multiple of 1000/TR Hz give identical atoms.
void check_b0_aliasing(const std::vector<double>& b0, double tr_ms) {
  const double period = 1000.0 / tr_ms;
  for (std::size_t a = 0; a < b0.size(); ++a) {
    for (std::size_t b = a + 1; b < b0.size(); ++b) {
      const double r = std::fmod(std::abs(b0[b] - b0[a]), period);
      if (std::min(r, period - r) <= 1e-9 * period) {
        throw InvalidArgument("B0 values " + std::to_string(b0[a]) + " and " + std::to_string(b0[b]) +
                              " Hz alias at TR=" + std::to_string(tr_ms) + " ms");
      }
    }
  }
}

std::size_t hash_row(const ComplexRowTable& atoms, Index j) {
  std::size_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(atoms.row(j).data());
  for (std::size_t k = 0; k < sizeof(Complex) * static_cast<std::size_t>(atoms.cols()); ++k) {
    h = (h ^ bytes[k]) * 1099511628211ull;
  }
  return h;
}

}  // namespace

std::vector<double> parse_ranges(std::string_view text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string_view piece = text.substr(start, comma - start);
    std::vector<double> parts;
    std::size_t p = 0;
    while (p <= piece.size()) {
      const std::size_t colon = std::min(piece.find(':', p), piece.size());
      parts.push_back(parse_number(piece.substr(p, colon - p), text));
      p = colon + 1;
    }
    if (parts.size() == 1) {
      out.push_back(parts[0]);
    } else {
      const double first = parts[0];
      const double step = parts.size() == 3 ? parts[1] : 1.0;
      const double last = parts.back();
      if (parts.size() > 3 || !(step > 0.0)) throw InvalidArgument("bad range '" + std::string(piece) + "'");
      for (Index k = 0;; ++k) {
        const double v = first + static_cast<double>(k) * step;
        if (v > last + 1e-9 * step) break;
        out.push_back(v);
      }
    }
    start = comma + 1;
  }
  return out;
}

std::vector<ParameterTriple> surviving_triples(const ParameterGrid& grid) {
  check_axis(grid.t1_values, "T1");
  check_axis(grid.t2_values, "T2");
  check_axis(grid.b0_values, "B0");
  std::vector<ParameterTriple> out;
  for (double t1 : grid.t1_values) {
    for (double t2 : grid.t2_values) {
      if (t2 > t1) continue;
      for (double b0 : grid.b0_values) out.push_back({t1, t2, b0});
    }
  }
  if (out.empty()) throw InvalidArgument("degenerate grid: no combination satisfies t2 <= t1");
  return out;
}

ComplexVector fingerprint(const ParameterTriple& params, double tr_ms, Index length) {
  ComplexVector atom(length);
  const double omega = 2.0 * std::numbers::pi * params.b0 * tr_ms / 1000.0;
  for (Index k = 0; k < length; ++k) {
    const double t = static_cast<double>(k + 1) * tr_ms;
    const double envelope = (1.0 - 2.0 * std::exp(-t / params.t1)) * std::exp(-t / params.t2);
    const double phase = omega * static_cast<double>(k + 1);
    atom(k) = envelope * Complex(std::cos(phase), std::sin(phase));
  }
  return atom;
}

Dictionary::Dictionary(ComplexRowTable atoms, Eigen::VectorXd norms, std::vector<ParameterTriple> table,
                       double tr_ms, Index unfiltered_count)
    : atoms_(std::move(atoms)),
      norms_(std::move(norms)),
      table_(std::move(table)),
      tr_ms_(tr_ms),
      unfiltered_count_(unfiltered_count) {
  if (atoms_.rows() == 0) throw InvalidArgument("dictionary has no atoms");
  if (norms_.size() != atoms_.rows() || static_cast<Index>(table_.size()) != atoms_.rows()) {
    throw InvalidArgument("dictionary dimension mismatch between atoms, norms and look-up table");
  }
}

const ParameterTriple& Dictionary::lookup(Index j) const {
  if (j < 0 || j >= size()) {
    throw InvalidArgument("atom index " + std::to_string(j) + " out of range [0, " + std::to_string(size()) + ")");
  }
  return table_[static_cast<std::size_t>(j)];
}

Index Dictionary::find(const ParameterTriple& params) const {
  for (std::size_t j = 0; j < table_.size(); ++j) {
    if (table_[j] == params) return static_cast<Index>(j);
  }
  return -1;
}

Dictionary generate_fingerprints(const ParameterGrid& grid, double tr_ms, Index length) {
  if (!(tr_ms > 0.0) || !std::isfinite(tr_ms)) throw InvalidArgument("TR must be positive");
  if (length < 2) throw InvalidArgument("sequence length must be at least 2");
  auto triples = surviving_triples(grid);
  check_b0_aliasing(grid.b0_values, tr_ms);

  const auto d = static_cast<Index>(triples.size());
  ComplexRowTable atoms(d, length);
  Eigen::VectorXd norms(d);
  for (Index j = 0; j < d; ++j) {
    const ComplexVector raw = fingerprint(triples[static_cast<std::size_t>(j)], tr_ms, length);
    norms(j) = raw.norm();
    if (!(norms(j) > 0.0)) throw InvalidArgument("fingerprint with zero norm");
    atoms.row(j) = raw.transpose() / norms(j);
  }

  // Distinct triples must give distinct atoms.
  std::unordered_multimap<std::size_t, Index> seen;
  seen.reserve(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) {
    const auto h = hash_row(atoms, j);
    auto [lo, hi] = seen.equal_range(h);
    for (auto it = lo; it != hi; ++it) {
      if (atoms.row(it->second) == atoms.row(j)) {
        throw InvalidArgument("atoms " + std::to_string(it->second) + " and " + std::to_string(j) + " coincide");
      }
    }
    seen.emplace(h, j);
  }
  return Dictionary(std::move(atoms), std::move(norms), std::move(triples), tr_ms, grid.unfiltered_size());
}

CompressedDictionary::CompressedDictionary(Eigen::MatrixXcd basis, ComplexRowTable atoms, Eigen::VectorXd renorm,
                                           Eigen::VectorXd singular_values)
    : basis_(std::move(basis)),
      atoms_(std::move(atoms)),
      renorm_(std::move(renorm)),
      singular_values_(std::move(singular_values)) {}

ComplexMatrix CompressedDictionary::compress(const ComplexMatrix& image) const {
  if (image.cols() != length()) throw InvalidArgument("compress: image has wrong number of frames");
  return image * basis_.conjugate();
}

ComplexMatrix CompressedDictionary::decompress(const ComplexMatrix& coords) const {
  if (coords.cols() != rank()) throw InvalidArgument("decompress: wrong subspace dimension");
  return coords * basis_.transpose();
}

CompressedDictionary svd_compress(const Dictionary& dict, Index rank, SvdMethod method) {
  const Index length = dict.length();
  if (rank < 1 || rank > length) {
    throw InvalidArgument("compression rank " + std::to_string(rank) + " outside [1, " + std::to_string(length) + "]");
  }
  if (method == SvdMethod::automatic) {
    method = dict.size() * length <= 10'000'000 ? SvdMethod::full : SvdMethod::gram;
  }

  Eigen::MatrixXcd basis;
  Eigen::VectorXd singular;
  // Columns of `columns` are the atoms D_j.
  const Eigen::MatrixXcd columns = dict.atoms().transpose();
  if (method == SvdMethod::full) {
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(columns, Eigen::ComputeThinU);
    basis = svd.matrixU().leftCols(rank);
    singular = svd.singularValues();
  } else {
    const Eigen::MatrixXcd gram = columns * columns.adjoint();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
    const Index count = std::min(length, dict.size());
    singular.resize(count);
    basis.resize(length, rank);
    for (Index k = 0; k < count; ++k) {
      singular(k) = std::sqrt(std::max(eig.eigenvalues()(length - 1 - k), 0.0));
    }
    for (Index k = 0; k < rank; ++k) basis.col(k) = eig.eigenvectors().col(length - 1 - k);
  }

  ComplexRowTable atoms = dict.atoms() * basis.conjugate();
  Eigen::VectorXd renorm(atoms.rows());
  for (Index j = 0; j < atoms.rows(); ++j) {
    renorm(j) = atoms.row(j).norm();
    if (!(renorm(j) > 0.0)) {
      throw InvalidArgument("atom " + std::to_string(j) + " vanishes in the rank-" + std::to_string(rank) + " subspace");
    }
    atoms.row(j) /= renorm(j);
  }
  return CompressedDictionary(std::move(basis), std::move(atoms), std::move(renorm), std::move(singular));
}

double compression_residual(const Dictionary& dict, const CompressedDictionary& compressed) {
  const Eigen::MatrixXcd columns = dict.atoms().transpose();
  const Eigen::MatrixXcd& v = compressed.basis();
  return (columns - v * (v.adjoint() * columns)).squaredNorm();
}

void save_dictionary(const Dictionary& dict, const std::string& path) {
  io::BinaryWriter w(path);
  w.write_header(kDictMagic, kDictVersion);
  w.write(static_cast<std::uint32_t>(sizeof(Complex)));
  w.write(static_cast<std::uint64_t>(dict.size()));
  w.write(static_cast<std::uint64_t>(dict.length()));
  w.write(dict.tr_ms());
  w.write(static_cast<std::uint64_t>(dict.unfiltered_count()));
  w.write_bytes(dict.atoms().data(), sizeof(Complex) * static_cast<std::size_t>(dict.atoms().size()));
  w.write_bytes(dict.norms().data(), sizeof(double) * static_cast<std::size_t>(dict.size()));
  for (auto field : {&ParameterTriple::t1, &ParameterTriple::t2, &ParameterTriple::b0}) {
    for (const auto& p : dict.table()) w.write(p.*field);
  }
  w.finish();
}

Dictionary load_dictionary(const std::string& path) {
  io::BinaryReader r(path);
  if (r.read_header(kDictMagic) != kDictVersion) throw FormatError("'" + path + "': unsupported dictionary version");
  const auto width = r.read<std::uint32_t>();
  const auto d = r.read<std::uint64_t>();
  const auto length = r.read<std::uint64_t>();
  const auto tr = r.read<double>();
  const auto unfiltered = r.read<std::uint64_t>();
  if (width != 16 && width != 8) throw FormatError("'" + path + "': bad element width");
  if (d == 0 || length == 0 || length > (std::uint64_t{1} << 32) || d > (std::uint64_t{1} << 40) / length) {
    throw FormatError("'" + path + "': implausible dictionary shape");
  }
  r.require(d * length, width, "atom table");
  ComplexRowTable atoms(static_cast<Index>(d), static_cast<Index>(length));
  if (width == 16) {
    r.read_bytes(atoms.data(), 16 * static_cast<std::size_t>(atoms.size()));
  } else {
    std::vector<std::complex<float>> buf(static_cast<std::size_t>(atoms.size()));
    r.read_bytes(buf.data(), 8 * buf.size());
    for (std::size_t k = 0; k < buf.size(); ++k) atoms.data()[k] = Complex(buf[k]);
  }
  r.require(4 * d, sizeof(double), "norms and look-up table");
  Eigen::VectorXd norms(static_cast<Index>(d));
  r.read_bytes(norms.data(), sizeof(double) * d);
  std::vector<ParameterTriple> table(d);
  for (auto field : {&ParameterTriple::t1, &ParameterTriple::t2, &ParameterTriple::b0}) {
    for (auto& p : table) p.*field = r.read<double>();
  }
  if (r.remaining() != 0) throw FormatError("'" + path + "': trailing bytes");
  return Dictionary(std::move(atoms), std::move(norms), std::move(table), tr, static_cast<Index>(unfiltered));
}

void export_lookup_csv(const Dictionary& dict, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "index,t1_ms,t2_ms,b0_hz\n";
  for (Index j = 0; j < dict.size(); ++j) {
    const auto& p = dict.lookup(j);
    out << j << ',' << p.t1 << ',' << p.t2 << ',' << p.b0 << '\n';
  }
}

}  // namespace coverblip
