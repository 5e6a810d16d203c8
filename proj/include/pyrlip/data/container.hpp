#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyrlip/core/error.hpp"
#include "pyrlip/core/tensor.hpp"

namespace pyrlip::data {

// VST1 layout, all integers little-endian:
//   "VST1" | u32 record count
//   per record: u16 name length | name | u8 dtype | u8 rank | u32 extents[rank] | raw data
//   u32 manifest length | manifest (UTF-8 JSON)

enum class DType : std::uint8_t { f64 = 0, u8 = 1 };

class ContainerError : public Error {
public:
  enum class Kind { bad_magic, truncated, unknown_dtype, duplicate_name, invalid, io };

  ContainerError(Kind kind, const std::string& what) : Error(kind_name(kind) + ": " + what), kind_(kind) {}

  Kind kind() const { return kind_; }

  static std::string kind_name(Kind k) {
    switch (k) {
    case Kind::bad_magic: return "bad magic";
    case Kind::truncated: return "truncated";
    case Kind::unknown_dtype: return "unknown dtype";
    case Kind::duplicate_name: return "duplicate name";
    case Kind::invalid: return "invalid";
    case Kind::io: return "io";
    }
    return "?";
  }

private:
  Kind kind_;
};

struct Record {
  std::string name;
  DType dtype = DType::f64;
  Shape shape;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;

  static Record from_tensor(std::string name, const Tensor& t) {
    Record r;
    r.name = std::move(name);
    r.shape = t.shape();
    r.f64 = t.values();
    return r;
  }

  static Record bytes(std::string name, Shape shape, std::vector<std::uint8_t> data) {
    Record r;
    r.name = std::move(name);
    r.dtype = DType::u8;
    r.shape = std::move(shape);
    r.u8 = std::move(data);
    return r;
  }

  std::size_t count() const { return dtype == DType::f64 ? f64.size() : u8.size(); }

  Tensor tensor() const {
    if (dtype != DType::f64) throw ContainerError(ContainerError::Kind::invalid, "record '" + name + "' is not f64");
    return Tensor(shape, f64);
  }

  bool operator==(const Record&) const = default;
};

struct Container {
  std::vector<Record> records;
  nlohmann::json manifest = nlohmann::json::object();

  const Record& get(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return r;
    throw ContainerError(ContainerError::Kind::invalid, "no record named '" + name + "'");
  }

  bool contains(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return true;
    return false;
  }
};

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t le(std::size_t n, const char* what) {
    need(n, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw ContainerError(ContainerError::Kind::truncated, std::string("file ends inside ") + what + " at byte " +
                                                                std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

} // namespace detail

inline std::string encode_container(const Container& c) {
  std::set<std::string> names;
  std::string out = "VST1";
  detail::put_le(out, c.records.size(), 4);
  for (const auto& r : c.records) {
    if (!names.insert(r.name).second)
      throw ContainerError(ContainerError::Kind::duplicate_name, "record name '" + r.name + "' appears twice");
    if (r.name.size() > 0xffff) throw ContainerError(ContainerError::Kind::invalid, "record name too long");
    if (r.shape.size() > 0xff) throw ContainerError(ContainerError::Kind::invalid, "rank above 255");
    if (numel(r.shape) != r.count())
      throw ContainerError(ContainerError::Kind::invalid, "record '" + r.name + "' has " + std::to_string(r.count()) +
                                                              " values for shape " + to_string(r.shape));
    detail::put_le(out, r.name.size(), 2);
    out += r.name;
    out.push_back(static_cast<char>(r.dtype));
    out.push_back(static_cast<char>(r.shape.size()));
    for (auto e : r.shape) {
      if (e > 0xffffffffULL) throw ContainerError(ContainerError::Kind::invalid, "extent does not fit in u32");
      detail::put_le(out, e, 4);
    }
    if (r.dtype == DType::f64)
      for (double v : r.f64) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    else
      out.append(reinterpret_cast<const char*>(r.u8.data()), r.u8.size());
  }
  const std::string manifest = c.manifest.dump();
  detail::put_le(out, manifest.size(), 4);
  out += manifest;
  return out;
}

inline Container decode_container(std::string_view bytes) {
  detail::Reader in(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "VST1")
    throw ContainerError(ContainerError::Kind::bad_magic, "expected \"VST1\" at offset 0");
  in.take(4, "magic");
  const auto count = in.le(4, "record count");
  Container c;
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    const auto len = in.le(2, "record name length");
    r.name = std::string(in.take(len, "record name"));
    if (!names.insert(r.name).second)
      throw ContainerError(ContainerError::Kind::duplicate_name, "record name '" + r.name + "' appears twice");
    const auto code = in.le(1, "dtype");
    if (code > 1) throw ContainerError(ContainerError::Kind::unknown_dtype, "code " + std::to_string(code) + " in '" + r.name + "'");
    r.dtype = static_cast<DType>(code);
    const auto rank = in.le(1, "rank");
    std::size_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      r.shape.push_back(in.le(4, "extents"));
      n *= r.shape.back();
    }
    const std::size_t width = r.dtype == DType::f64 ? 8 : 1;
    if (n > in.remaining() / width) in.take(n * width, "record data");
    if (r.dtype == DType::f64) {
      r.f64.resize(n);
      for (auto& v : r.f64) v = std::bit_cast<double>(in.le(8, "record data"));
    } else {
      const auto raw = in.take(n, "record data");
      r.u8.assign(raw.begin(), raw.end());
    }
    c.records.push_back(std::move(r));
  }
  const auto mlen = in.le(4, "manifest length");
  const auto text = in.take(mlen, "manifest");
  try {
    c.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerError::Kind::invalid, std::string("manifest is not valid JSON: ") + e.what());
  }
  return c;
}

inline void write_container(const std::string& path, const Container& c) {
  const std::string bytes = encode_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContainerError(ContainerError::Kind::io, "cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ContainerError(ContainerError::Kind::io, "write to '" + path + "' failed");
}

inline Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError(ContainerError::Kind::io, "cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

} // namespace pyrlip::data
