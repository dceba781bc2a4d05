// Copyright 2026 The Vton Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef VTON_BYTES_HPP_
#define VTON_BYTES_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

#include "vton/error.hpp"

namespace vton {

// Little-endian fixed-width encoding.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { out_ += s; }
  // u32 length prefix.
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void str64(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  std::string& bytes() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

// Bounds-checked reads; every failure is a ParseError at the offending offset.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context) : b_(bytes), context_(std::move(context)) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what, std::size_t at) const { throw ParseError(context_ + ": " + what, at); }

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(get(8, what)); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }
  std::string_view raw(std::size_t n, const char* what) {
    if (remaining() < n) fail(std::string("truncated ") + what, pos_);
    const std::string_view s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  // Length prefix checked against the bytes left; a bad length is reported at
  // the prefix.
  std::string_view str32(const char* what) { return sized(u32(what), 4, what); }
  std::string_view str64(const char* what) { return sized(u64(what), 8, what); }

 private:
  std::uint64_t get(int n, const char* what) {
    if (remaining() < static_cast<std::size_t>(n)) fail(std::string("truncated ") + what, pos_);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view sized(std::uint64_t n, std::size_t prefix, const char* what) {
    if (n > remaining()) fail(std::string(what) + " length " + std::to_string(n) + " out of range", pos_ - prefix);
    return raw(static_cast<std::size_t>(n), what);
  }

  std::string_view b_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace vton

#endif  // VTON_BYTES_HPP_
