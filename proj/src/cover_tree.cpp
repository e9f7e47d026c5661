#include "coverblip/cover_tree.hpp"

#include "coverblip/binary_io.hpp"

namespace coverblip {

template class CoverTree<double>;
template class CoverTree<Complex>;

std::string to_string(TreeViolation::Kind kind) {
  switch (kind) {
    case TreeViolation::Kind::structure: return "structure";
    case TreeViolation::Kind::nesting: return "nesting";
    case TreeViolation::Kind::covering: return "covering";
    case TreeViolation::Kind::separation: return "separation";
    case TreeViolation::Kind::maxdist: return "maxdist";
  }
  return "unknown";
}

namespace {

constexpr io::Magic kTreeMagic = {'C', 'B', 'T', 'R', 'E', 'E', '\0', '\0'};
constexpr std::uint32_t kTreeVersion = 1;

template <typename Scalar>
constexpr std::uint8_t scalar_tag() {
  return std::is_same_v<Scalar, Complex> ? 2 : 1;
}

}  // namespace

template <typename Scalar>
void save_tree(const CoverTree<Scalar>& tree, const std::string& path) {
  io::BinaryWriter w(path);
  w.write_header(kTreeMagic, kTreeVersion);
  w.write(scalar_tag<Scalar>());
  w.write(static_cast<std::uint64_t>(tree.dim()));
  w.write(static_cast<std::uint64_t>(tree.size()));
  w.write(static_cast<std::uint64_t>(tree.node_count()));
  w.write(tree.sigma());
  std::uint64_t duplicate_count = 0;
  for (Index k = 0; k < tree.node_count(); ++k) {
    const auto& n = tree.nodes()[static_cast<std::size_t>(k)];
    w.write(static_cast<std::int64_t>(n.point));
    w.write(static_cast<std::int32_t>(n.scale));
    w.write(static_cast<std::int64_t>(n.parent));
    w.write(tree.maxdist(k));
    duplicate_count += n.duplicates.size();
  }
  w.write(duplicate_count);
  for (Index k = 0; k < tree.node_count(); ++k) {
    for (Index dup : tree.nodes()[static_cast<std::size_t>(k)].duplicates) {
      w.write(static_cast<std::int64_t>(dup));
      w.write(static_cast<std::int64_t>(k));
    }
  }
  w.finish();
}

template <typename Scalar>
CoverTree<Scalar> load_tree(const std::string& path, RowTable<Scalar> points) {
  io::BinaryReader r(path);
  if (r.read_header(kTreeMagic) != kTreeVersion) throw FormatError("'" + path + "': unsupported tree version");
  if (r.read<std::uint8_t>() != scalar_tag<Scalar>()) throw FormatError("'" + path + "': scalar type mismatch");
  const auto dim = r.read<std::uint64_t>();
  const auto size = r.read<std::uint64_t>();
  const auto node_count = r.read<std::uint64_t>();
  const auto sigma = r.read<double>();
  if (dim != static_cast<std::uint64_t>(points.cols()) || size != static_cast<std::uint64_t>(points.rows())) {
    throw InvalidArgument("'" + path + "': tree was built on " + std::to_string(size) + " points of dim " +
                          std::to_string(dim));
  }
  if (node_count == 0 || node_count > size) throw FormatError("'" + path + "': bad node count");
  r.require(node_count, 28, "node table");
  std::vector<typename CoverTree<Scalar>::Node> nodes(node_count);
  std::vector<double> stored(node_count);
  for (std::size_t k = 0; k < node_count; ++k) {
    nodes[k].point = static_cast<Index>(r.read<std::int64_t>());
    nodes[k].scale = r.read<std::int32_t>();
    nodes[k].parent = static_cast<Index>(r.read<std::int64_t>());
    stored[k] = r.read<double>();
  }
  const auto duplicate_count = r.read<std::uint64_t>();
  r.require(duplicate_count, 16, "duplicate table");
  std::vector<std::pair<Index, Index>> duplicates(duplicate_count);
  for (auto& [point, node] : duplicates) {
    point = static_cast<Index>(r.read<std::int64_t>());
    node = static_cast<Index>(r.read<std::int64_t>());
  }
  auto tree = CoverTree<Scalar>::from_node_table(std::move(points), sigma, std::move(nodes), std::move(duplicates));
  for (std::size_t k = 0; k < node_count; ++k) {
    const double now = tree.maxdist(static_cast<Index>(k));
    if (std::abs(now - stored[k]) > 1e-9 * std::max(1.0, stored[k])) {
      throw FormatError("'" + path + "': stored maxdist does not match the supplied points");
    }
  }
  return tree;
}

template void save_tree(const CoverTree<double>&, const std::string&);
template void save_tree(const CoverTree<Complex>&, const std::string&);
template CoverTree<double> load_tree(const std::string&, RowTable<double>);
template CoverTree<Complex> load_tree(const std::string&, RowTable<Complex>);

}  // namespace coverblip
