// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte encoding and whole-file I/O shared by the checkpoint and
// corpus formats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace m3d {

class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(std::string_view b) { buf_.append(b); }
  const std::string& str() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Reads from a borrowed buffer; every accessor throws std::runtime_error
// prefixed with `context` on truncation.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string_view bytes(std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t offset() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace m3d
