#pragma once

// Little-endian binary container primitives shared by the adapter bundle,
// model checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedopal/error.hpp"
#include "fedopal/tensor.hpp"

namespace fedopal::binio {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);

  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t n);
  void str(const std::string& s);
  void tensor(const Tensor& t);
  /// Flushes and reports any I/O failure with the path.
  void finish();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void bytes(void* data, std::size_t n);
  std::string str();
  Tensor tensor();
  bool at_end();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace fedopal::binio
