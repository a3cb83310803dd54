// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "ivtune/error.hpp"

namespace ivtune {

namespace {

constexpr char kMagic[4] = {'I', 'V', 'T', 'N'};

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("container truncated");
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.name.empty()) throw FormatError("container entry names must be non-empty");
    if (!seen.insert(e.name).second) throw FormatError("duplicate container entry '" + e.name + "'");
    if (!e.tensor.defined()) throw FormatError("container entry '" + e.name + "' is undefined");
  }
  std::vector<std::uint8_t> out;
  Writer w(out);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kContainerVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.dtype));
    const auto& shape = e.tensor.shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put<std::uint64_t>(d);
    for (double v : e.tensor.data()) {
      if (e.dtype == DType::f32)
        w.put(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        w.put(std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("bad magic: not an IVTN container");
  const auto version = r.get<std::uint32_t>();
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.str(r.get<std::uint32_t>());
    if (e.name.empty() || !seen.insert(e.name).second)
      throw FormatError("empty or duplicate entry name in container");
    const auto code = r.get<std::uint32_t>();
    if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
    e.dtype = static_cast<DType>(code);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0) throw FormatError("entry '" + e.name + "' has rank 0");
    Shape shape(rank);
    std::size_t numel = 1;
    const std::size_t width = e.dtype == DType::f32 ? 4 : 8;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      if (d == 0) throw FormatError("entry '" + e.name + "' has a zero dimension");
      if (numel > r.remaining() / d) throw FormatError("container truncated");
      numel *= d;
    }
    if (numel > r.remaining() / width) throw FormatError("container truncated");
    std::vector<double> values(numel);
    for (auto& v : values) {
      if (e.dtype == DType::f32)
        v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
      else
        v = std::bit_cast<double>(r.get<std::uint64_t>());
    }
    e.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("trailing bytes after last container entry");
  return out;
}

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const auto bytes = encode_container(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

const NamedTensor& find_entry(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw FormatError("container has no entry '" + name + "'");
}

}  // namespace ivtune
