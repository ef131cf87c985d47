//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace farbench {

enum class ValidationReason {
  truncated,
  magic,
  version,
  crc,
  index,
  budget,
  duplicate,
  group,
  order,
  shape,
};

inline const char* reason_name(ValidationReason r) {
  switch (r) {
    case ValidationReason::truncated: return "truncated";
    case ValidationReason::magic: return "magic";
    case ValidationReason::version: return "version";
    case ValidationReason::crc: return "crc";
    case ValidationReason::index: return "index";
    case ValidationReason::budget: return "budget";
    case ValidationReason::duplicate: return "duplicate";
    case ValidationReason::group: return "group";
    case ValidationReason::order: return "order";
    case ValidationReason::shape: return "shape";
  }
  return "unknown";
}

/// Raised by every blob/model loader. Callers that deploy hardware state treat
/// it as "fall back to baseline".
class ValidationError : public std::runtime_error {
 public:
  ValidationError(ValidationReason reason, const std::string& what)
      : std::runtime_error(std::string(reason_name(reason)) + ": " + what), reason_(reason) {}

  ValidationReason reason() const noexcept { return reason_; }

 private:
  ValidationReason reason_;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; blobs here are far below 4 GiB.
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v));
    u16(static_cast<std::uint16_t>(v >> 16));
  }
  void tag(std::string_view four_cc) { buf_.insert(buf_.end(), four_cc.begin(), four_cc.end()); }

  /// Appends CRC32 of everything written so far and returns the buffer.
  std::vector<std::uint8_t> finish_with_crc() && {
    const std::uint32_t crc = crc32_of(buf_);
    u32(crc);
    return std::move(buf_);
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (std::uint16_t{u8()} << 8));
  }
  std::uint32_t u32() {
    const std::uint32_t lo = u16();
    return lo | (std::uint32_t{u16()} << 16);
  }
  void expect_tag(std::string_view four_cc) {
    need(four_cc.size());
    if (std::memcmp(bytes_.data() + pos_, four_cc.data(), four_cc.size()) != 0) {
      throw ValidationError(ValidationReason::magic, "expected magic " + std::string(four_cc));
    }
    pos_ += four_cc.size();
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ValidationError(ValidationReason::truncated, "unexpected end of blob");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Checks the trailing CRC32 and returns the payload span without it.
inline std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> bytes, std::string_view what) {
  if (bytes.size() < 8) throw ValidationError(ValidationReason::truncated, std::string(what) + " shorter than header");
  const auto payload = bytes.first(bytes.size() - 4);
  ByteReader trailer(bytes.last(4));
  if (trailer.u32() != crc32_of(payload)) {
    throw ValidationError(ValidationReason::crc, std::string(what) + " CRC32 mismatch");
  }
  return payload;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace farbench
