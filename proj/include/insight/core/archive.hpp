#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/tensor.hpp"

// Versioned binary container for named tensors.
//
//   magic      8 bytes, ASCII tag padded with NUL (e.g. "pcp-v1")
//   u32        metadata length, then that many bytes of UTF-8 JSON
//   u32        tensor count
//   per tensor u32 name length, name, u32 rank, u64 dims[rank],
//              f64 values[product(dims)]
//
// All integers and floats are little-endian.

namespace insight {

struct TensorArchive {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor<double>>> tensors;

  const Tensor<double>& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw FormatError("archive has no tensor named '" + name + "'");
  }
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(source_ + ": truncated at byte offset " + std::to_string(bytes_.size()) + " (needed " +
                        std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
    }
  }
  const std::vector<char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

inline void save_archive(const std::string& path, const std::string& magic, const TensorArchive& archive) {
  if (magic.size() > 8) throw ContractError("archive magic longer than 8 bytes");
  detail::ByteWriter w;
  std::string tag = magic;
  tag.resize(8, '\0');
  w.put_raw(tag);
  w.put(static_cast<std::uint32_t>(archive.metadata.size()));
  w.put_raw(archive.metadata);
  w.put(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_raw(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    for (double v : t.data()) w.put_f64(v);
  }
  detail::write_file(path, w.bytes());
}

inline TensorArchive load_archive(const std::string& path, const std::string& magic) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path);
  std::string tag = r.get_raw(8);
  const std::string want = [&] { std::string m = magic; m.resize(8, '\0'); return m; }();
  if (tag != want) {
    throw FormatError(path + ": expected format '" + magic + "', found '" + std::string(tag.c_str()) + "'");
  }
  TensorArchive archive;
  archive.metadata = r.get_raw(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_raw(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    Tensor<double> t(shape);
    for (auto& v : t.data()) v = r.get_f64();
    archive.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after offset " + std::to_string(r.pos()));
  return archive;
}

/// Copies a parameter struct into archive entries under `prefix`.
template <typename Params>
void archive_params(TensorArchive& archive, const std::string& prefix, const Params& p) {
  p.visit([&](const std::string& name, const auto& t) {
    archive.tensors.emplace_back(prefix + name, t.template cast<double>());
  });
}

template <typename Params>
void restore_params(const TensorArchive& archive, const std::string& prefix, Params& p) {
  p.visit([&](const std::string& name, auto& t) {
    using S = typename std::decay_t<decltype(t)>::value_type;
    const auto& src = archive.get(prefix + name);
    require_shape(src.shape(), t.shape(), ("checkpoint tensor " + prefix + name).c_str());
    t = src.template cast<S>();
  });
}

}  // namespace insight
