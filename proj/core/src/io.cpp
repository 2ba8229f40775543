#include "qdq/io.hpp"

#include <sys/stat.h>

#include <array>
#include <cstring>

namespace qdq {

BinWriter::BinWriter(const std::string& path) : path_(path) {
  f_ = std::fopen(path.c_str(), "wb");
  if (!f_) throw ArtifactError("cannot open for writing: " + path);
}

BinWriter::~BinWriter() {
  if (f_) std::fclose(f_);
}

void BinWriter::close() {
  if (f_) {
    if (std::fclose(f_) != 0) {
      f_ = nullptr;
      throw ArtifactError("write failure closing " + path_);
    }
    f_ = nullptr;
  }
}

void BinWriter::bytes(const void* p, std::size_t n) {
  if (std::fwrite(p, 1, n, f_) != n) throw ArtifactError("short write to " + path_);
}

void BinWriter::u32(std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 4);
}

void BinWriter::u64(std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 8);
}

void BinWriter::f64s(const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) f64(p[i]);
}

void BinWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

BinReader::BinReader(const std::string& path) : path_(path) {
  f_ = std::fopen(path.c_str(), "rb");
  if (!f_) throw ArtifactError("missing artifact: " + path);
}

BinReader::~BinReader() {
  if (f_) std::fclose(f_);
}

void BinReader::bytes(void* p, std::size_t n) {
  if (std::fread(p, 1, n, f_) != n)
    throw ArtifactError("truncated artifact: " + path_);
}

std::uint8_t BinReader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint32_t BinReader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t BinReader::u64() {
  unsigned char b[8];
  bytes(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void BinReader::f64s(double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = f64();
}

std::string BinReader::str() {
  std::uint32_t n = u32();
  if (n > (1u << 28)) throw ArtifactError("corrupt string length in " + path_);
  std::string s(n, '\0');
  if (n) bytes(s.data(), n);
  return s;
}

std::string BinReader::magic() {
  char m[6];
  bytes(m, 6);
  return std::string(m, 6);
}

std::string producer_of_magic(const std::string& m) {
  if (m == "QDQDS1") return "gen-data (trajectory dataset)";
  if (m == "QDQQS1") return "build-qwindow (truncated-Q dataset)";
  if (m == "QDQDM1") return "train-diffusion (score model)";
  if (m == "QDQCM1") return "distill-consistency (consistency model)";
  if (m == "QDQCK1") return "train-qdq (training checkpoint)";
  if (m == "QDQMD1") return "verify-tabular (replayable mdp)";
  if (m == "QDQNN1") return "network checkpoint";
  return "unknown producer";
}

void BinReader::expect_magic(const char* want, const char* what) {
  std::string got = magic();
  if (got != std::string(want, 6)) {
    throw ArtifactError(std::string("artifact type mismatch for ") + what + ": " + path_ +
                        ": expected " + want + " (" + producer_of_magic(want) +
                        "), found " + got + " (" + producer_of_magic(got) + ")");
  }
}

bool BinReader::at_eof() {
  int c = std::fgetc(f_);
  if (c == EOF) return true;
  std::ungetc(c, f_);
  return false;
}

bool file_exists(const std::string& path) {
  struct stat st;
  return ::stat(path.c_str(), &st) == 0;
}

std::vector<unsigned char> slurp_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw ArtifactError("missing artifact: " + path);
  std::vector<unsigned char> out;
  std::array<unsigned char, 65536> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), f)) > 0)
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  std::fclose(f);
  return out;
}

}  // namespace qdq
