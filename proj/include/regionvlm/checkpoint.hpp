#pragma once

// Binary checkpoint container:
//
//   8 bytes   magic "RVLMCKPT"
//   u32 LE    format version
//   u32 LE    header length H
//   H bytes   header, compact JSON (object keys sorted)
//   ...       every tensor listed in header["tensors"], in order, as
//             little-endian IEEE-754 float32, row-major
//   u64 LE    FNV-1a 64 of all preceding bytes
//
// Readers validate the trailer before interpreting anything, so a truncated
// or corrupted file never yields partial state.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "regionvlm/checksum.hpp"
#include "regionvlm/error.hpp"
#include "regionvlm/nn.hpp"

namespace regionvlm {

inline constexpr char kCheckpointMagic[8] = {'R', 'V', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  nn::Mat<float> value;
};

struct CheckpointData {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0, j = sizeof(T) - 1; i < j; ++i, --j) std::swap(b[i], b[j]);
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ChecksumError("checkpoint truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0, j = sizeof(T) - 1; i < j; ++i, --j) std::swap(b[i], b[j]);
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

// `header` must not contain "tensors"; it is generated from the list.
inline std::string serialize_checkpoint(nlohmann::json header, const std::vector<NamedTensor>& tensors) {
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}});
  const std::string head = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  for (const auto& t : tensors)
    for (Eigen::Index i = 0; i < t.value.size(); ++i) detail::put_le<float>(out, t.value.data()[i]);
  detail::put_le<std::uint64_t>(out, fnv1a(out));
  return out;
}

inline CheckpointData deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 16) throw ChecksumError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw ChecksumError("not a checkpoint file (bad magic)");
  std::size_t tail = bytes.size() - 8;
  const auto stored = detail::get_le<std::uint64_t>(bytes, tail);
  if (stored != fnv1a(bytes.data(), bytes.size() - 8)) throw ChecksumError("checkpoint checksum mismatch (corrupt or truncated)");

  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw ChecksumError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + hlen > bytes.size() - 8) throw ChecksumError("checkpoint header truncated");
  CheckpointData data;
  data.header = nlohmann::json::parse(bytes.substr(pos, hlen));
  pos += hlen;
  for (const auto& t : data.header.at("tensors")) {
    const auto rows = t.at("shape")[0].get<Eigen::Index>();
    const auto cols = t.at("shape")[1].get<Eigen::Index>();
    nn::Mat<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = detail::get_le<float>(bytes, pos);
    data.tensors.push_back({t.at("name").get<std::string>(), std::move(m)});
  }
  if (pos != bytes.size() - 8) throw ChecksumError("checkpoint payload length does not match header");
  return data;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace regionvlm
