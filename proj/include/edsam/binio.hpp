#pragma once

// Little-endian primitives for the on-disk formats.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

namespace edsam::binio {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_bytes(std::ostream& out, std::string_view bytes);
// u32 length followed by the bytes.
void write_blob(std::ostream& out, std::string_view bytes);

// Readers throw ParseError on a short read; `what` names the field.
std::uint8_t read_u8(std::istream& in, const char* what);
std::uint16_t read_u16(std::istream& in, const char* what);
std::uint32_t read_u32(std::istream& in, const char* what);
std::uint64_t read_u64(std::istream& in, const char* what);
double read_f64(std::istream& in, const char* what);
std::string read_bytes(std::istream& in, std::size_t n, const char* what);
std::string read_blob(std::istream& in, const char* what);

// Reads and checks a magic prefix, then the u16 version.
void expect_magic(std::istream& in, std::string_view magic, const char* format);
void expect_version(std::istream& in, std::uint16_t supported, const char* format);

std::ifstream open_input(const std::filesystem::path& path);
std::ofstream open_output(const std::filesystem::path& path);

// Writes `contents` to path atomically enough for our purposes (temp + rename).
void write_file(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace edsam::binio
