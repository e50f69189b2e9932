#pragma once

// QLRM binary matrix files. Layout (all integers little-endian):
//   offset 0   4 bytes  magic "QLRM"
//   offset 4   u16      version = 1
//   offset 6   u8       dtype = 0 (IEEE-754 binary64)
//   offset 7   u8       reserved = 0
//   offset 8   u32      rows
//   offset 12  u32      cols
//   offset 16  rows*cols binary64 values, row-major, little-endian

#include "qlr/core.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace qlr::io {

inline constexpr std::string_view kMagic = "QLRM";
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 0;
inline constexpr std::size_t kHeaderBytes = 16;

std::string encode_matrix(const Matrix &m);
Matrix decode_matrix(std::string_view bytes);

Matrix read_matrix(const std::filesystem::path &path);
void write_matrix(const std::filesystem::path &path, const Matrix &m);

/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path &path, std::string_view contents);
std::string read_file(const std::filesystem::path &path);

} // namespace qlr::io
