#pragma once

#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "tensor.hpp"

namespace autopose {

// Little-endian binary archive helpers for checkpoints and dataset caches.

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}

  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i32(std::int32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void bytes(const std::vector<std::uint8_t>& b) {
    u64(b.size());
    raw(b.data(), b.size());
  }

  template <typename T>
  void tensor(const Tensor<T>& t) {
    u32(static_cast<std::uint32_t>(sizeof(T)));
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) i32(d);
    raw(t.data.data(), t.data.size() * sizeof(T));
  }

 private:
  void raw(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os_) throw std::runtime_error("archive write failure");
  }
  std::ostream& os_;
};

class BinReader {
 public:
  explicit BinReader(std::istream& is) : is_(is) {}

  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    std::string s(u64(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<std::uint8_t> bytes() {
    std::vector<std::uint8_t> b(u64());
    raw(b.data(), b.size());
    return b;
  }

  template <typename T>
  Tensor<T> tensor() {
    if (u32() != sizeof(T)) throw std::runtime_error("archive: scalar width mismatch");
    std::vector<int> shape(u32());
    for (auto& d : shape) d = i32();
    Tensor<T> t(shape);
    raw(t.data.data(), t.data.size() * sizeof(T));
    return t;
  }

 private:
  void raw(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw std::runtime_error("archive: unexpected end of file");
  }
  std::istream& is_;
};

}  // namespace autopose
