#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace reprompt::io {

// All on-disk integers and floats are little-endian.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_magic(std::ostream& os, const char magic[4]);
void write_string(std::ostream& os, const std::string& s);

std::uint32_t read_u32(std::istream& is, const char* what);
std::uint64_t read_u64(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
void expect_magic(std::istream& is, const char magic[4], const char* format_name);
void expect_version(std::istream& is, std::uint32_t expected, const char* format_name);
std::string read_string(std::istream& is, const char* what);

void write_f32_array(std::ostream& os, const double* data, std::size_t n);
void read_f32_array(std::istream& is, double* data, std::size_t n, const char* what);

/// Writes through a temp file in the same directory and renames into place,
/// so a failure never leaves a partial output file.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);

std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace reprompt::io
