#pragma once

// Binary network checkpoints.
//
//   offset 0   "NISK" magic
//          4   u32 format version
//          8   u32 n = number of layer_dims entries
//         12   n x u32 layer_dims
//              u32 activation tag, f64 slope
//              all parameters as f64, layer order (W row-major, then b)
//
// Every integer and float is little-endian.

#include "nisk/diffcore.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nisk {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* field) {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw CheckpointError("checkpoint integrity error at offset " + std::to_string(pos_) +
                            ": truncated while reading " + field);
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Mlp& net) {
  std::string out = "NISK";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_dims().size()));
  for (int d : net.layer_dims()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.activation().kind));
  detail::put_le<double>(out, net.activation().slope);
  const Vector p = net.params();
  for (Eigen::Index i = 0; i < p.size(); ++i) detail::put_le<double>(out, p(i));
  return out;
}

inline Mlp decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "NISK") != 0)
    throw CheckpointError("checkpoint integrity error at offset 0: bad magic");
  detail::ByteReader in(bytes);
  in.get<std::uint32_t>("magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t count_at = in.offset();
  const auto count = in.get<std::uint32_t>("layer count");
  if (count < 2 || count > 1024)
    throw CheckpointError("checkpoint integrity error at offset " + std::to_string(count_at) +
                          ": implausible layer count " + std::to_string(count));
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    const auto d = in.get<std::uint32_t>("layer_dims");
    if (d == 0 || d > (1U << 24))
      throw CheckpointError("checkpoint integrity error at offset " + std::to_string(at) +
                            ": invalid layer dim");
    dims.push_back(static_cast<int>(d));
  }
  const std::size_t tag_at = in.offset();
  const auto tag = in.get<std::uint32_t>("activation tag");
  if (tag > 2)
    throw CheckpointError("checkpoint integrity error at offset " + std::to_string(tag_at) +
                          ": unknown activation tag " + std::to_string(tag));
  const double slope = in.get<double>("activation slope");
  Mlp net(dims, Activation{static_cast<Activation::Kind>(tag), slope});
  Vector p(static_cast<Eigen::Index>(net.param_count()));
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = in.get<double>("parameters");
  if (in.remaining() != 0)
    throw CheckpointError("checkpoint integrity error at offset " + std::to_string(in.offset()) +
                          ": trailing bytes");
  net.set_params(p);
  return net;
}

inline void save_checkpoint(const Mlp& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
  const std::string bytes = encode_checkpoint(net);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing checkpoint: " + path);
}

inline Mlp load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace nisk
