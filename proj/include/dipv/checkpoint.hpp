// Parameter checkpoints: a JSON manifest (name, shape, byte offset)
// followed by a flat payload of 64-bit little-endian reals. Round-trips
// are bit-exact.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dipv/nn.hpp"

namespace dipv {

namespace detail {

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void put_doubles_le(std::ostream& out, const std::vector<double>& vals) {
  for (double d : vals) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &d, 8);
    put_u64_le(out, bits);
  }
}

inline void get_doubles_le(std::istream& in, std::vector<double>& vals) {
  for (double& d : vals) {
    const std::uint64_t bits = get_u64_le(in);
    std::memcpy(&d, &bits, 8);
  }
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'D', 'P', 'V', '1'};

inline void save_checkpoint(const std::string& path, const ParameterSet& params) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    manifest.push_back({{"name", e.name},
                        {"shape", {e.value.rows(), e.value.cols()}},
                        {"offset", offset}});
    offset += 8 * e.value.size();
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  detail::put_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries()) detail::put_doubles_le(out, e.value.data());
}

inline ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw InvalidInput("not a parameter checkpoint: " + path);
  const std::uint64_t len = detail::get_u64_le(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const nlohmann::json manifest = nlohmann::json::parse(text);
  const std::uint64_t payload_base = 4 + 8 + len;

  ParameterSet params;
  for (const auto& entry : manifest) {
    const std::string name = entry.at("name").get<std::string>();
    const std::size_t rows = entry.at("shape").at(0).get<std::size_t>();
    const std::size_t cols = entry.at("shape").at(1).get<std::size_t>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    in.seekg(static_cast<std::streamoff>(payload_base + offset));
    Tensor2 t(rows, cols);
    detail::get_doubles_le(in, t.data());
    if (!in) throw InvalidInput("truncated checkpoint payload: " + path);
    params.add(name, std::move(t));
  }
  return params;
}

}  // namespace dipv
