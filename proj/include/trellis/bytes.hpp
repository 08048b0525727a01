#pragma once

#include "trellis/common.hpp"

#include <cstddef>
#include <cstring>
#include <span>
#include <type_traits>
#include <vector>

namespace trellis {

using Bytes = std::vector<std::byte>;

/// Append a trivially copyable value to a byte buffer.
template <typename T>
void put(Bytes& buf, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
void put_span(Bytes& buf, std::span<const T> vs) {
  static_assert(std::is_trivially_copyable_v<T>);
  put<std::uint64_t>(buf, vs.size());
  const auto* p = reinterpret_cast<const std::byte*>(vs.data());
  buf.insert(buf.end(), p, p + vs.size_bytes());
}

/// Sequential reader over a received byte buffer.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> data) : data_(data) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    TRELLIS_REQUIRE(pos_ + sizeof(T) <= data_.size(), "byte buffer underrun");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  template <typename T>
  std::vector<T> get_vector() {
    const auto n = get<std::uint64_t>();
    TRELLIS_REQUIRE(pos_ + n * sizeof(T) <= data_.size(), "byte buffer underrun");
    std::vector<T> vs(n);
    std::memcpy(vs.data(), data_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return vs;
  }

  bool exhausted() const { return pos_ == data_.size(); }

 private:
  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
};

}  // namespace trellis
