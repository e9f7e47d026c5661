#include "coverblip/binary_io.hpp"

#include <complex>
#include <vector>

namespace coverblip::io {

BinaryWriter::BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw Error("cannot open '" + path + "' for writing");
}

void BinaryWriter::write_header(const Magic& magic, std::uint32_t version) {
  write_bytes(magic.data(), magic.size());
  write(version);
}

void BinaryWriter::finish() {
  out_.flush();
  if (!out_) throw Error("write to '" + path_ + "' failed");
}

BinaryReader::BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw Error("cannot open '" + path + "' for reading");
}

void BinaryReader::read_bytes(void* data, std::size_t size) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (in_.gcount() != static_cast<std::streamsize>(size)) {
    throw FormatError("'" + path_ + "': unexpected end of file");
  }
}

std::uint32_t BinaryReader::read_header(const Magic& magic) {
  Magic found{};
  read_bytes(found.data(), found.size());
  if (found != magic) {
    throw FormatError("'" + path_ + "': bad magic, expected " +
                      std::string(magic.data(), std::strlen(magic.data())));
  }
  return read<std::uint32_t>();
}

std::uint64_t BinaryReader::remaining() {
  const auto here = in_.tellg();
  in_.seekg(0, std::ios::end);
  const auto end = in_.tellg();
  in_.seekg(here);
  return static_cast<std::uint64_t>(end - here);
}

void BinaryReader::require(std::uint64_t count, std::uint64_t elem_size, std::string_view what) {
  if (elem_size != 0 && count > remaining() / elem_size) {
    throw FormatError("'" + path_ + "': truncated " + std::string(what));
  }
}

void save_complex_matrix(const ComplexMatrix& m, const std::string& path) {
  BinaryWriter w(path);
  w.write_header(kMatrixMagic, kMatrixVersion);
  w.write(static_cast<std::uint64_t>(m.rows()));
  w.write(static_cast<std::uint64_t>(m.cols()));
  w.write(static_cast<std::uint32_t>(sizeof(Complex)));
  const ComplexRowTable rows = m;
  w.write_bytes(rows.data(), sizeof(Complex) * static_cast<std::size_t>(rows.size()));
  w.finish();
}

ComplexMatrix load_complex_matrix(const std::string& path) {
  BinaryReader r(path);
  const auto version = r.read_header(kMatrixMagic);
  if (version != kMatrixVersion) throw FormatError("'" + path + "': unsupported version");
  const auto rows = r.read<std::uint64_t>();
  const auto cols = r.read<std::uint64_t>();
  const auto width = r.read<std::uint32_t>();
  if (width != 16 && width != 8) throw FormatError("'" + path + "': bad element width");
  if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) {
    throw FormatError("'" + path + "': implausible shape");
  }
  r.require(rows * cols, width, "matrix data");
  ComplexRowTable table(static_cast<Index>(rows), static_cast<Index>(cols));
  if (width == 16) {
    r.read_bytes(table.data(), 16 * static_cast<std::size_t>(table.size()));
  } else {
    std::vector<std::complex<float>> buf(static_cast<std::size_t>(table.size()));
    r.read_bytes(buf.data(), 8 * buf.size());
    for (Index i = 0; i < table.size(); ++i) table.data()[i] = Complex(buf[static_cast<std::size_t>(i)]);
  }
  return table;
}

}  // namespace coverblip::io
