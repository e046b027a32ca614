#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg {

// TNSR container layout (all integers little-endian):
//   "TNSR" | u8 version (1) | u8 dtype (0=f32, 1=f64, 2=u8) | u8 ndim |
//   ndim x u32 extents | row-major payload

enum class TnsrDType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

inline constexpr std::uint8_t kTnsrVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ByteArray {
  Shape shape;
  std::vector<std::uint8_t> values;
};

std::string encode_tnsr(const Tensor& t);
std::string encode_tnsr(const ByteArray& a);

/// Decodes a float container into a Tensor of the stored dtype.
Tensor decode_tnsr_tensor(std::string_view bytes);
ByteArray decode_tnsr_bytes(std::string_view bytes);
/// Dtype code stored in a container, after validating the header.
TnsrDType peek_tnsr_dtype(std::string_view bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
void save_bytes(const std::filesystem::path& path, const ByteArray& a);
ByteArray load_bytes(const std::filesystem::path& path);

// File helpers shared by every on-disk artifact.

/// Writes to a sibling temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);
/// FNV-1a 64-bit digest as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace tamseg
