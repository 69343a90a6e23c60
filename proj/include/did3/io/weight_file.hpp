#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "did3/tensor.hpp"

namespace did3 {

// Binary container for named tensors:
//   magic "DID3" | version u32 | tensor count u64
//   per tensor: name_len u32 | name bytes | rank u32 | extents u64...
//               | values f32 row-major
// All integers and floats little-endian. Values are stored in single
// precision regardless of the in-memory double representation.
inline constexpr char kWeightMagic[4] = {'D', 'I', 'D', '3'};
inline constexpr std::uint32_t kWeightVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  static_assert(sizeof bits == sizeof v);
  __builtin_memcpy(&bits, &v, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::size_t offset() const { return off_; }

  void raw(void* dst, std::size_t n, const char* what) {
    if (off_ + n > bytes_.size())
      throw FormatError("weight file " + path_ + ": truncated reading " +
                        what + " at byte offset " + std::to_string(off_));
    __builtin_memcpy(dst, bytes_.data() + off_, n);
    off_ += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    raw(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64(const char* what) {
    std::uint64_t v = 0;
    unsigned char b[8];
    raw(b, 8, what);
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    __builtin_memcpy(&v, &bits, sizeof v);
    return v;
  }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t off_ = 0;
};

}  // namespace detail

inline void save_weights(const std::string& path, const NamedTensors& tensors) {
  std::string out;
  out.append(kWeightMagic, 4);
  detail::put_u32(out, kWeightVersion);
  detail::put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_u64(out, e);
    for (std::size_t i = 0; i < t.size(); ++i)
      detail::put_f32(out, static_cast<float>(t[i]));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

inline void save_weights(const std::string& path,
                         const std::map<std::string, Tensor>& store) {
  NamedTensors v(store.begin(), store.end());
  save_weights(path, v);
}

inline NamedTensors load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  detail::Reader r(bytes, path);

  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::string(magic, 4) != std::string(kWeightMagic, 4))
    throw FormatError("weight file " + path + ": bad magic at byte offset 0");
  const std::uint32_t version = r.u32("version");
  if (version != kWeightVersion)
    throw FormatError("weight file " + path + ": unsupported version " +
                      std::to_string(version) + " at byte offset 4");
  const std::uint64_t count = r.u64("tensor count");

  NamedTensors out;
  out.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name(name_len, '\0');
    if (name_len) r.raw(name.data(), name_len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8)
      throw FormatError("weight file " + path + ": implausible rank " +
                        std::to_string(rank) + " at byte offset " +
                        std::to_string(r.offset() - 4));
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64("extent"));
      if (shape[d] == 0)
        throw FormatError("weight file " + path + ": zero extent at byte "
                          "offset " + std::to_string(r.offset() - 8));
      numel *= shape[d];
    }
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < numel; ++i)
      t[i] = static_cast<double>(r.f32("tensor values"));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline std::map<std::string, Tensor> load_weights_map(const std::string& path) {
  std::map<std::string, Tensor> m;
  for (auto& [name, t] : load_weights(path)) m.emplace(std::move(name), std::move(t));
  return m;
}

}  // namespace did3
