#include "edsam/binio.hpp"

#include <bit>
#include <cstring>
#include <sstream>
#include <string>

#include "edsam/error.hpp"

namespace edsam::binio {

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw ParseError(std::string("truncated input while reading ") + what);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { put_le(out, v); }
void write_u16(std::ostream& out, std::uint16_t v) { put_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
void write_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
void write_bytes(std::ostream& out, std::string_view bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}
void write_blob(std::ostream& out, std::string_view bytes) {
  write_u32(out, static_cast<std::uint32_t>(bytes.size()));
  write_bytes(out, bytes);
}

std::uint8_t read_u8(std::istream& in, const char* what) { return get_le<std::uint8_t>(in, what); }
std::uint16_t read_u16(std::istream& in, const char* what) {
  return get_le<std::uint16_t>(in, what);
}
std::uint32_t read_u32(std::istream& in, const char* what) {
  return get_le<std::uint32_t>(in, what);
}
std::uint64_t read_u64(std::istream& in, const char* what) {
  return get_le<std::uint64_t>(in, what);
}
double read_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, what));
}

std::string read_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw ParseError(std::string("truncated input while reading ") + what);
  }
  return s;
}

std::string read_blob(std::istream& in, const char* what) {
  const auto n = read_u32(in, what);
  if (n > (1u << 28)) throw ParseError(std::string("implausible length for ") + what);
  return read_bytes(in, n, what);
}

void expect_magic(std::istream& in, std::string_view magic, const char* format) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || got != magic) {
    throw ParseError(std::string(format) + ": bad magic bytes");
  }
}

void expect_version(std::istream& in, std::uint16_t supported, const char* format) {
  const auto v = read_u16(in, "format version");
  if (v != supported) {
    throw UnsupportedVersion(std::string(format) + ": unsupported format version " +
                             std::to_string(v) + " (expected " + std::to_string(supported) + ")");
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("missing file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open file: " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  return out;
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  auto out = open_output(path);
  write_bytes(out, contents);
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace edsam::binio
