#include "qlr/matrix_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace qlr::io {
namespace {

template <typename UInt>
void put_le(std::string &out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename UInt>
UInt get_le(std::string_view bytes, std::size_t offset) {
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    value |= static_cast<UInt>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return value;
}

} // namespace

std::string encode_matrix(const Matrix &m) {
  constexpr auto kMaxDim = std::numeric_limits<std::uint32_t>::max();
  if (m.rows() < 1 || m.cols() < 1 || m.rows() > kMaxDim || m.cols() > kMaxDim)
    throw Error(ErrorCode::ConfigInvalid, "matrix dimensions not representable in QLRM");
  if (!m.allFinite())
    throw Error(ErrorCode::NonFinitePayload, "refusing to write a non-finite matrix");

  std::string out;
  out.reserve(kHeaderBytes + static_cast<std::size_t>(m.size()) * 8);
  out.append(kMagic);
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint8_t>(out, kDtypeFloat64);
  put_le<std::uint8_t>(out, 0);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m(i, j)));
  return out;
}

Matrix decode_matrix(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes)
    throw Error(ErrorCode::Truncated, "file shorter than the 16-byte header");
  if (bytes.substr(0, 4) != kMagic)
    throw Error(ErrorCode::BadMagic, "expected magic \"QLRM\"");
  if (get_le<std::uint16_t>(bytes, 4) != kVersion)
    throw Error(ErrorCode::BadVersion,
                "unsupported version " + std::to_string(get_le<std::uint16_t>(bytes, 4)));
  if (get_le<std::uint8_t>(bytes, 6) != kDtypeFloat64)
    throw Error(ErrorCode::BadVersion, "unsupported dtype " +
                                           std::to_string(get_le<std::uint8_t>(bytes, 6)));

  const std::uint64_t rows = get_le<std::uint32_t>(bytes, 8);
  const std::uint64_t cols = get_le<std::uint32_t>(bytes, 12);
  if (rows == 0 || cols == 0)
    throw Error(ErrorCode::ConfigInvalid, "matrix file has a zero dimension");
  const std::uint64_t expected = kHeaderBytes + rows * cols * 8;
  if (bytes.size() < expected)
    throw Error(ErrorCode::Truncated, "payload has " + std::to_string(bytes.size() - kHeaderBytes) +
                                          " bytes, expected " +
                                          std::to_string(rows * cols * 8));
  if (bytes.size() > expected)
    throw Error(ErrorCode::Truncated, "trailing bytes after payload");

  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::size_t offset = kHeaderBytes;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j, offset += 8) {
      const double v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonFinitePayload, "entry (" + std::to_string(i) + ", " +
                                                     std::to_string(j) + ") is not finite");
      m(i, j) = v;
    }
  }
  return m;
}

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path &path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out)
      throw Error(ErrorCode::Io, "write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(ErrorCode::Io, "rename to " + path.string() + " failed: " + ec.message());
}

Matrix read_matrix(const std::filesystem::path &path) {
  return decode_matrix(read_file(path));
}

void write_matrix(const std::filesystem::path &path, const Matrix &m) {
  write_file_atomic(path, encode_matrix(m));
}

} // namespace qlr::io
