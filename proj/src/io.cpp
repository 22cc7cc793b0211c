#include "reprompt/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "reprompt/rng.hpp"

namespace reprompt::io {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace {
template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
  return v;
}
}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_raw(os, v); }
void write_f32(std::ostream& os, float v) { write_raw(os, v); }
void write_f64(std::ostream& os, double v) { write_raw(os, v); }

void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is, const char* what) { return read_raw<std::uint32_t>(is, what); }
std::uint64_t read_u64(std::istream& is, const char* what) { return read_raw<std::uint64_t>(is, what); }
float read_f32(std::istream& is, const char* what) { return read_raw<float>(is, what); }
double read_f64(std::istream& is, const char* what) { return read_raw<double>(is, what); }

void expect_magic(std::istream& is, const char magic[4], const char* format_name) {
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error(std::string(format_name) + ": bad magic");
  }
}

void expect_version(std::istream& is, std::uint32_t expected, const char* format_name) {
  std::uint32_t v = read_u32(is, "version");
  if (v != expected) {
    throw std::runtime_error(std::string(format_name) + ": unsupported version " + std::to_string(v));
  }
}

std::string read_string(std::istream& is, const char* what) {
  std::uint32_t n = read_u32(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
  return s;
}

void write_f32_array(std::ostream& os, const double* data, std::size_t n) {
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_f32_array(std::istream& is, double* data, std::size_t n, const char* what) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
  for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(buf[i]);
}

void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + tmp.string());
    try {
      writer(os);
      os.flush();
      if (!os) throw std::runtime_error("write failed: " + tmp.string());
    } catch (...) {
      os.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
  }
  std::filesystem::rename(tmp, path);
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[8192];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace reprompt::io
