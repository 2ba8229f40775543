#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "qdq/errors.hpp"

namespace qdq {

// Little-endian binary writer. Doubles are written as their IEEE-754 bit
// pattern so round trips are bit-exact.
class BinWriter {
 public:
  explicit BinWriter(const std::string& path);
  ~BinWriter();
  BinWriter(const BinWriter&) = delete;
  BinWriter& operator=(const BinWriter&) = delete;

  void bytes(const void* p, std::size_t n);
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const double* p, std::size_t n);
  void str(const std::string& s);  // u32 length + raw bytes
  void magic(const char m[6]) { bytes(m, 6); }
  void close();

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::FILE* f_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path);
  ~BinReader();
  BinReader(const BinReader&) = delete;
  BinReader& operator=(const BinReader&) = delete;

  void bytes(void* p, std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(double* p, std::size_t n);
  std::string str();
  // reads 6 bytes and returns them; use expect_magic for validation
  std::string magic();
  // throws ArtifactError naming the producing stage when the magic mismatches
  void expect_magic(const char* want, const char* what);
  bool at_eof();

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::FILE* f_;
};

// maps a magic string to the stage that writes it, for error messages
std::string producer_of_magic(const std::string& magic);

bool file_exists(const std::string& path);
std::vector<unsigned char> slurp_file(const std::string& path);

}  // namespace qdq
