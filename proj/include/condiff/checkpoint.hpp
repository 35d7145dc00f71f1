// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Binary container for named float64 arrays.
//
//   "DSR1"                      4-byte magic
//   u8   version                currently 1
//   u32  record count
//   records, sorted by name:
//     u32  name length, name bytes (UTF-8)
//     u8   dtype tag            1 = float64
//     u32  ndim, then ndim x u64 dims
//     prod(dims) x f64 payload
// All integers and floats are little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "condiff/numerics.hpp"

namespace condiff {

using Checkpoint = std::map<std::string, Array>;

class CheckpointError : public std::runtime_error {
 public:
  enum class Code { io, bad_magic, bad_version, truncated, bad_dtype, trailing_bytes };

  CheckpointError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

  [[nodiscard]] Code code() const noexcept { return code_; }

 private:
  Code code_;
};

inline constexpr std::string_view kCheckpointMagic = "DSR1";
inline constexpr std::uint8_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw CheckpointError(CheckpointError::Code::truncated, "checkpoint: truncated data");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.push_back(kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& [name, array] : ckpt) {  // std::map iterates in name order
    detail::put_le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF64);
    detail::put_le(out, static_cast<std::uint32_t>(array.ndim()));
    for (std::size_t d : array.shape()) detail::put_le(out, static_cast<std::uint64_t>(d));
    for (double v : array.data()) detail::put_le(out, v);
  }
  return out;
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  using Code = CheckpointError::Code;
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw CheckpointError(Code::bad_magic, "checkpoint: bad magic");
  }
  detail::Reader in(bytes.subspan(kCheckpointMagic.size()));
  const auto version = in.get<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Code::bad_version,
                          "checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  Checkpoint out;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.get_string(name_len);
    if (in.get<std::uint8_t>() != kDtypeF64) {
      throw CheckpointError(Code::bad_dtype, "checkpoint: unsupported dtype for " + name);
    }
    const auto ndim = in.get<std::uint32_t>();
    if (ndim > in.remaining() / sizeof(std::uint64_t)) {
      throw CheckpointError(Code::truncated, "checkpoint: truncated data");
    }
    std::vector<std::size_t> shape;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = in.get<std::uint64_t>();
      shape.push_back(static_cast<std::size_t>(dim));
      n *= dim;
    }
    if (n > in.remaining() / sizeof(double)) {
      throw CheckpointError(Code::truncated, "checkpoint: truncated data");
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = in.get<double>();
    out.emplace(std::move(name), Array(std::move(shape), std::move(data)));
  }
  if (in.remaining() != 0) {
    throw CheckpointError(Code::trailing_bytes, "checkpoint: trailing bytes after last record");
  }
  return out;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Code::io, "checkpoint: cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Code::io, "checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Code::io, "checkpoint: cannot read " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

/// Stores text as one code unit per element (used for embedded config text).
inline Array text_to_array(std::string_view text) {
  std::vector<double> v;
  v.reserve(text.size());
  for (unsigned char c : text) v.push_back(static_cast<double>(c));
  return Array::vector(std::move(v));
}

inline std::string array_to_text(const Array& a) {
  std::string s;
  s.reserve(a.size());
  for (double v : a.data()) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

}  // namespace condiff
