#pragma once

// Binary checkpoint format.  Layout, all little-endian:
//   magic "PHIN" | version u32 | tensor count u32
//   per tensor: name length u32 | name bytes | rank u32 | dims u64 each | f32 payload
// Trailing bytes after the last tensor are rejected.

#include "phantom/nn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace phantom {

namespace ckpt_detail {

constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

}  // namespace ckpt_detail

template <class S>
void save_checkpoint(const ParamList<S>& tensors, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open for writing: " + path);
  os.write("PHIN", 4);
  ckpt_detail::write_pod<uint32_t>(os, ckpt_detail::kVersion);
  ckpt_detail::write_pod<uint32_t>(os, uint32_t(tensors.size()));
  std::set<std::string> seen;
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second)
      throw FormatError("checkpoint: duplicate tensor name: " + t.name);
    ckpt_detail::write_pod<uint32_t>(os, uint32_t(t.name.size()));
    os.write(t.name.data(), std::streamsize(t.name.size()));
    ckpt_detail::write_pod<uint32_t>(os, uint32_t(t.tensor.shape().size()));
    for (size_t d : t.tensor.shape()) ckpt_detail::write_pod<uint64_t>(os, uint64_t(d));
    for (S v : t.tensor.data()) ckpt_detail::write_pod<float>(os, float(v));
  }
  if (!os) throw FormatError("checkpoint: write failed: " + path);
}

template <class S>
ParamList<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PHIN", 4) != 0)
    throw FormatError("checkpoint: bad magic");
  uint32_t version = ckpt_detail::read_pod<uint32_t>(is);
  if (version != ckpt_detail::kVersion) throw FormatError("checkpoint: unknown format version");
  uint32_t count = ckpt_detail::read_pod<uint32_t>(is);
  ParamList<S> out;
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = ckpt_detail::read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint: truncated name");
    if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate tensor name: " + name);
    uint32_t rank = ckpt_detail::read_pod<uint32_t>(is);
    std::vector<size_t> shape(rank);
    size_t n = 1;
    for (auto& d : shape) {
      d = size_t(ckpt_detail::read_pod<uint64_t>(is));
      n *= d;
    }
    std::vector<S> data(n);
    for (auto& v : data) v = S(ckpt_detail::read_pod<float>(is));
    out.push_back({std::move(name), Tensor<S>(std::move(shape), std::move(data))});
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("checkpoint: trailing bytes after last tensor");
  return out;
}

// Copies checkpointed values into a live parameter list by name.
template <class S>
void restore_params(const ParamList<S>& loaded, ParamList<S>& live) {
  std::unordered_map<std::string, const NamedParam<S>*> by_name;
  for (const auto& t : loaded) by_name[t.name] = &t;
  for (auto& p : live) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor: " + p.name);
    const auto& src = it->second->tensor;
    if (src.shape() != p.tensor.shape())
      throw FormatError("checkpoint: shape mismatch for tensor: " + p.name);
    auto dst = p.tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

}  // namespace phantom
