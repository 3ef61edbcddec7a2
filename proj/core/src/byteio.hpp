#pragma once

// Little-endian byte encoding shared by the container and checkpoint formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msam/errors.hpp"
#include "msam/tensor.hpp"

namespace msam::detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(std::byte((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(std::byte((v >> (8 * i)) & 0xFF));
  }
  void f32s(std::span<const float> values) {
    for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::byte>& buffer() { return buf_; }

 private:
  std::vector<std::byte> buf_;
};

class Reader {
 public:
  // `kind` names the format in truncation messages.
  Reader(std::span<const std::byte> bytes, const char* kind) : bytes_(bytes), kind_(kind) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw CorruptionError(std::string(kind_) + " truncated while reading " + what);
    }
  }
  void skip(std::size_t n, const char* what) {
    need(n, what);
    pos_ += n;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string out(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  Tensor<float> f32s(Shape shape, const char* what) {
    // Divide instead of multiplying so hostile counts cannot overflow.
    std::size_t budget = remaining() / 4;
    for (auto d : shape) {
      if (d > budget) throw CorruptionError(std::string(kind_) + " truncated while reading " + what);
      budget = d ? budget / d : budget;
    }
    const std::size_t count = shape_size(shape);
    if (count > remaining() / 4) {
      throw CorruptionError(std::string(kind_) + " truncated while reading " + what);
    }
    std::vector<float> values(count);
    for (auto& v : values) v = std::bit_cast<float>(u32(what));
    return Tensor<float>(std::move(shape), std::move(values));
  }

 private:
  std::span<const std::byte> bytes_;
  const char* kind_;
  std::size_t pos_ = 0;
};

}  // namespace msam::detail
