// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fusetrack/errors.hpp"

namespace fusetrack {

namespace {

constexpr std::size_t kAlignment = 64;

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw, raw + sizeof(T));
  }
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T read_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("AVHT: truncated header");
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw, raw + sizeof(T));
  }
  pos += sizeof(T);
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

template <typename T>
std::vector<std::uint8_t> to_bytes(std::span<const T> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(T));
  for (const T& v : values) append_le(out, v);
  return out;
}

std::uint64_t product(const std::vector<std::uint64_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kI32: return 4;
  }
  throw IoError("AVHT: unknown dtype code " + std::to_string(static_cast<std::uint32_t>(dtype)));
}

std::uint64_t ArrayRecord::element_count() const { return product(dims); }

void Container::put(ArrayRecord record) {
  if (record.element_count() * dtype_size(record.dtype) != record.bytes.size()) {
    throw ShapeError("AVHT: array '" + record.name + "' payload does not match its dims");
  }
  if (auto it = index_.find(record.name); it != index_.end()) {
    arrays_[it->second] = std::move(record);
    return;
  }
  index_[record.name] = arrays_.size();
  arrays_.push_back(std::move(record));
}

void Container::put_f32(const std::string& name, std::vector<std::uint64_t> dims,
                        std::span<const double> values) {
  std::vector<float> narrowed(values.begin(), values.end());
  put_f32(name, std::move(dims), std::span<const float>(narrowed));
}

void Container::put_f32(const std::string& name, std::vector<std::uint64_t> dims,
                        std::span<const float> values) {
  put({name, DType::kF32, std::move(dims), to_bytes(values)});
}

void Container::put_f64(const std::string& name, std::vector<std::uint64_t> dims,
                        std::span<const double> values) {
  put({name, DType::kF64, std::move(dims), to_bytes(values)});
}

void Container::put_i32(const std::string& name, std::vector<std::uint64_t> dims,
                        std::span<const std::int32_t> values) {
  put({name, DType::kI32, std::move(dims), to_bytes(values)});
}

void Container::put_text(const std::string& name, const std::string& text) {
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  put({name, DType::kU8, {bytes.size()}, std::move(bytes)});
}

bool Container::contains(const std::string& name) const { return index_.contains(name); }

const ArrayRecord& Container::record(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IoError("AVHT: no array named '" + name + "'");
  return arrays_[it->second];
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(arrays_.size());
  for (const auto& a : arrays_) out.push_back(a.name);
  return out;
}

std::vector<double> Container::get_f64(const std::string& name) const {
  const ArrayRecord& r = record(name);
  const std::size_t n = r.element_count();
  std::vector<double> out(n);
  std::size_t pos = 0;
  std::span<const std::uint8_t> in(r.bytes);
  for (std::size_t i = 0; i < n; ++i) {
    switch (r.dtype) {
      case DType::kF32: out[i] = read_le<float>(in, pos); break;
      case DType::kF64: out[i] = read_le<double>(in, pos); break;
      case DType::kU8: out[i] = read_le<std::uint8_t>(in, pos); break;
      case DType::kI32: out[i] = read_le<std::int32_t>(in, pos); break;
    }
  }
  return out;
}

std::vector<std::int32_t> Container::get_i32(const std::string& name) const {
  const ArrayRecord& r = record(name);
  if (r.dtype != DType::kI32) throw IoError("AVHT: array '" + name + "' is not i32");
  std::vector<std::int32_t> out(r.element_count());
  std::size_t pos = 0;
  for (auto& v : out) v = read_le<std::int32_t>(r.bytes, pos);
  return out;
}

std::string Container::get_text(const std::string& name) const {
  const ArrayRecord& r = record(name);
  if (r.dtype != DType::kU8) throw IoError("AVHT: array '" + name + "' is not text");
  return std::string(r.bytes.begin(), r.bytes.end());
}

std::vector<std::uint8_t> Container::serialize() const {
  std::vector<std::uint8_t> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  append_le<std::uint32_t>(header, kVersion);
  append_le<std::uint32_t>(header, static_cast<std::uint32_t>(arrays_.size()));

  // Header size is known before offsets are, so size it first.
  std::size_t header_size = header.size();
  for (const auto& a : arrays_) {
    header_size += 4 + a.name.size() + 4 + 4 + 8 * a.dims.size() + 8;
  }
  auto align = [](std::size_t x) { return (x + kAlignment - 1) / kAlignment * kAlignment; };

  std::vector<std::uint64_t> offsets;
  std::size_t cursor = align(header_size);
  for (const auto& a : arrays_) {
    offsets.push_back(cursor);
    cursor = align(cursor + a.bytes.size());
  }

  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    const auto& a = arrays_[i];
    append_le<std::uint32_t>(header, static_cast<std::uint32_t>(a.name.size()));
    header.insert(header.end(), a.name.begin(), a.name.end());
    append_le<std::uint32_t>(header, static_cast<std::uint32_t>(a.dtype));
    append_le<std::uint32_t>(header, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) append_le<std::uint64_t>(header, d);
    append_le<std::uint64_t>(header, offsets[i]);
  }

  std::vector<std::uint8_t> out(cursor, 0);
  std::copy(header.begin(), header.end(), out.begin());
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    std::copy(arrays_[i].bytes.begin(), arrays_[i].bytes.end(), out.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  }
  return out;
}

Container Container::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("AVHT: bad magic");
  }
  std::size_t pos = 4;
  const auto version = read_le<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw IoError("AVHT: unsupported version " + std::to_string(version));
  const auto count = read_le<std::uint32_t>(bytes, pos);

  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArrayRecord r;
    const auto name_len = read_le<std::uint32_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw IoError("AVHT: truncated name");
    r.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    r.dtype = static_cast<DType>(read_le<std::uint32_t>(bytes, pos));
    const auto rank = read_le<std::uint32_t>(bytes, pos);
    for (std::uint32_t k = 0; k < rank; ++k) r.dims.push_back(read_le<std::uint64_t>(bytes, pos));
    const auto offset = read_le<std::uint64_t>(bytes, pos);
    const std::size_t size = r.element_count() * dtype_size(r.dtype);
    if (offset + size > bytes.size()) throw IoError("AVHT: payload of '" + r.name + "' out of range");
    r.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                   bytes.begin() + static_cast<std::ptrdiff_t>(offset + size));
    c.put(std::move(r));
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fusetrack
