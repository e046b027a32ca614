#include "tamseg/tnsr.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace tamseg {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(std::string_view bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<std::uint8_t>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

void put_header(std::string& out, TnsrDType dtype, const Shape& shape) {
  if (shape.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw FormatError("TNSR: rank " + std::to_string(shape.size()) + " exceeds 255");
  }
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kTnsrVersion));
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(shape.size()));
  for (auto e : shape) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("TNSR: extent " + std::to_string(e) + " exceeds u32");
    }
    put_le(out, static_cast<std::uint32_t>(e));
  }
}

struct Header {
  TnsrDType dtype;
  Shape shape;
  std::size_t payload_offset;
};

std::size_t element_size(TnsrDType dtype) {
  switch (dtype) {
    case TnsrDType::kF32: return 4;
    case TnsrDType::kF64: return 8;
    case TnsrDType::kU8: return 1;
  }
  return 0;
}

Header parse_header(std::string_view bytes) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("TNSR: missing magic bytes");
  }
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kTnsrVersion) {
    throw FormatError("TNSR: unsupported version " + std::to_string(version));
  }
  const auto code = static_cast<std::uint8_t>(bytes[5]);
  if (code > 2) throw FormatError("TNSR: unknown dtype code " + std::to_string(code));
  const auto ndim = static_cast<std::uint8_t>(bytes[6]);
  Header h{static_cast<TnsrDType>(code), {}, 7 + 4 * static_cast<std::size_t>(ndim)};
  if (bytes.size() < h.payload_offset) throw FormatError("TNSR: truncated header");
  for (std::size_t i = 0; i < ndim; ++i) h.shape.push_back(get_le<std::uint32_t>(bytes, 7 + 4 * i));
  const std::size_t expected = h.payload_offset + shape_numel(h.shape) * element_size(h.dtype);
  if (bytes.size() != expected) {
    throw FormatError("TNSR: payload is " + std::to_string(bytes.size() - h.payload_offset) +
                      " bytes, expected " + std::to_string(expected - h.payload_offset));
  }
  return h;
}

}  // namespace

std::string encode_tnsr(const Tensor& t) {
  std::string out;
  const bool f64 = t.dtype() == DType::kFloat64;
  put_header(out, f64 ? TnsrDType::kF64 : TnsrDType::kF32, t.shape());
  out.reserve(out.size() + t.numel() * (f64 ? 8 : 4));
  if (f64) {
    for (double v : t.data<double>()) put_le(out, std::bit_cast<std::uint64_t>(v));
  } else {
    for (float v : t.data<float>()) put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::string encode_tnsr(const ByteArray& a) {
  if (shape_numel(a.shape) != a.values.size()) {
    throw ShapeError("TNSR: byte array shape " + shape_str(a.shape) + " does not match " +
                     std::to_string(a.values.size()) + " values");
  }
  std::string out;
  put_header(out, TnsrDType::kU8, a.shape);
  out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size());
  return out;
}

TnsrDType peek_tnsr_dtype(std::string_view bytes) { return parse_header(bytes).dtype; }

Tensor decode_tnsr_tensor(std::string_view bytes) {
  const Header h = parse_header(bytes);
  if (h.dtype == TnsrDType::kU8) throw FormatError("TNSR: u8 payload where a float tensor was expected");
  const bool f64 = h.dtype == TnsrDType::kF64;
  Tensor t = Tensor::zeros(h.shape, f64 ? DType::kFloat64 : DType::kFloat32);
  std::size_t off = h.payload_offset;
  if (f64) {
    for (auto& v : t.mutable_data<double>()) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, off));
      off += 8;
    }
  } else {
    for (auto& v : t.mutable_data<float>()) {
      v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, off));
      off += 4;
    }
  }
  return t;
}

ByteArray decode_tnsr_bytes(std::string_view bytes) {
  const Header h = parse_header(bytes);
  if (h.dtype != TnsrDType::kU8) throw FormatError("TNSR: float payload where u8 was expected");
  ByteArray a{h.shape, {}};
  a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), bytes.end());
  return a;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  atomic_write(path, encode_tnsr(t));
}

Tensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tnsr_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_bytes(const std::filesystem::path& path, const ByteArray& a) {
  atomic_write(path, encode_tnsr(a));
}

ByteArray load_bytes(const std::filesystem::path& path) {
  try {
    return decode_tnsr_bytes(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void atomic_write(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace tamseg
