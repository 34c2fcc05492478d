#pragma once

// Portable binary container shared by checkpoints and task sets:
//
//   "MTTE" | u32 version | u64 manifest length | manifest (UTF-8 JSON)
//   | payload (little-endian f64 values) | u32 CRC-32 of all preceding bytes
//
// All integers are little-endian.

#include <boost/crc.hpp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "metatte/error.hpp"

namespace metatte {

inline constexpr char kContainerMagic[4] = {'M', 'T', 'T', 'E'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  nlohmann::json manifest;
  std::vector<double> payload;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

inline std::uint32_t crc32(const char* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

}  // namespace detail

inline std::string encode_container(const Container& c) {
  const std::string manifest = c.manifest.dump();
  std::string out;
  out.reserve(4 + 4 + 8 + manifest.size() + 8 * c.payload.size() + 4);
  out.append(kContainerMagic, 4);
  detail::put_u32(out, kContainerVersion);
  detail::put_u64(out, manifest.size());
  out += manifest;
  for (double v : c.payload) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    detail::put_u64(out, bits);
  }
  detail::put_u32(out, detail::crc32(out.data(), out.size()));
  return out;
}

inline Container decode_container(const std::string& bytes) {
  constexpr std::size_t kHeader = 4 + 4 + 8;
  if (bytes.size() < kHeader + 4) throw FormatError("container truncated: header incomplete");
  if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0) throw FormatError("bad magic, not an MTTE container");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  }
  const std::uint64_t mlen = detail::get_le(bytes, 8, 8);
  if (mlen > bytes.size() - kHeader - 4) throw FormatError("container truncated: manifest incomplete");
  const std::size_t payload_bytes = bytes.size() - kHeader - mlen - 4;
  if (payload_bytes % 8 != 0) throw FormatError("container truncated: payload not a whole number of f64 values");
  const auto stored = static_cast<std::uint32_t>(detail::get_le(bytes, bytes.size() - 4, 4));
  if (stored != detail::crc32(bytes.data(), bytes.size() - 4)) throw FormatError("checksum mismatch, container is corrupted");

  Container c;
  try {
    c.manifest = nlohmann::json::parse(bytes.begin() + kHeader, bytes.begin() + kHeader + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  c.payload.resize(payload_bytes / 8);
  const std::size_t base = kHeader + mlen;
  for (std::size_t i = 0; i < c.payload.size(); ++i) {
    const std::uint64_t bits = detail::get_le(bytes, base + 8 * i, 8);
    std::memcpy(&c.payload[i], &bits, sizeof bits);
  }
  return c;
}

/// Writes to `path.tmp` and renames, so readers never see a partial file.
inline void write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void save_container(const std::string& path, const Container& c) {
  write_file(path, encode_container(c));
}

inline Container load_container(const std::string& path) { return decode_container(read_file(path)); }

}  // namespace metatte
