// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// AVHT binary container: a fixed header listing named, typed, n-dimensional
// arrays followed by 64-byte aligned little-endian payloads.
//
//   "AVHT" | u32 version | u32 array_count
//   per array: u32 name_len | name bytes | u32 dtype | u32 rank | u64 dims[rank] | u64 offset
//   payloads at the recorded absolute offsets
//
// Datasets, aligned-sample shards and checkpoints all use this format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fusetrack {

enum class DType : std::uint32_t { kF32 = 1, kF64 = 2, kU8 = 3, kI32 = 4 };

std::size_t dtype_size(DType dtype);

struct ArrayRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  std::uint64_t element_count() const;
};

class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr char kMagic[4] = {'A', 'V', 'H', 'T'};

  void put_f32(const std::string& name, std::vector<std::uint64_t> dims, std::span<const double> values);
  void put_f32(const std::string& name, std::vector<std::uint64_t> dims, std::span<const float> values);
  void put_f64(const std::string& name, std::vector<std::uint64_t> dims, std::span<const double> values);
  void put_i32(const std::string& name, std::vector<std::uint64_t> dims, std::span<const std::int32_t> values);
  void put_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const;
  const ArrayRecord& record(const std::string& name) const;
  std::vector<std::string> names() const;

  // Any numeric dtype is widened to double.
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::int32_t> get_i32(const std::string& name) const;
  std::string get_text(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  void put(ArrayRecord record);

  std::vector<ArrayRecord> arrays_;  // insertion order is serialization order
  std::map<std::string, std::size_t> index_;
};

}  // namespace fusetrack
