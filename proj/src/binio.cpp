#include "fedopal/binio.hpp"

#include <array>

namespace fedopal::binio {
namespace {

// Guards against absurd lengths from corrupted files before allocating.
constexpr std::uint64_t kMaxElements = 1ULL << 32;
constexpr std::uint32_t kMaxString = 1u << 20;
constexpr std::uint32_t kMaxRank = 8;

template <typename U>
void put_le(std::ofstream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  }
  out.write(buf.data(), buf.size());
}

}  // namespace

Writer::Writer(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
}

void Writer::u8(std::uint8_t v) { put_le(out_, v); }
void Writer::u32(std::uint32_t v) { put_le(out_, v); }
void Writer::u64(std::uint64_t v) { put_le(out_, v); }
void Writer::f64(double v) { put_le(out_, std::bit_cast<std::uint64_t>(v)); }

void Writer::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void Writer::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void Writer::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.shape().size()));
  for (auto e : t.shape()) u64(e);
  for (double v : t.data()) f64(v);
}

void Writer::finish() {
  out_.flush();
  if (!out_) throw IoError("write failed for " + path_.string());
}

Reader::Reader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string() + " for reading");
}

void Reader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw FormatError("unexpected end of file in " + path_.string());
  }
}

std::uint8_t Reader::u8() {
  std::uint8_t v = 0;
  bytes(&v, 1);
  return v;
}

std::uint32_t Reader::u32() {
  std::array<unsigned char, 4> b{};
  bytes(b.data(), b.size());
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  std::array<unsigned char, 8> b{};
  bytes(b.data(), b.size());
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const auto n = u32();
  if (n > kMaxString) throw FormatError("string too long in " + path_.string());
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

Tensor Reader::tensor() {
  const auto rank = u32();
  if (rank > kMaxRank) throw FormatError("bad tensor rank in " + path_.string());
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    e = u64();
    if (e == 0 || e > kMaxElements) {
      throw FormatError("bad tensor extent in " + path_.string());
    }
    count *= e;
    if (count > kMaxElements) {
      throw FormatError("tensor too large in " + path_.string());
    }
  }
  std::vector<double> values(count);
  for (auto& v : values) v = f64();
  return Tensor::from(std::move(shape), std::move(values));
}

bool Reader::at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

}  // namespace fedopal::binio
