#pragma once

#include "pmp/json_util.hpp"
#include "pmp/nn.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace pmp {

// Binary layout:
//   8 bytes   magic "PMPKCKPT"
//   4 bytes   little-endian uint32 length of the JSON header
//   N bytes   {"tensors":[{"name","shape","offset"}],"meta":{...}}
//   blobs     little-endian float32 tensors; offsets are relative to the first blob byte
inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'M', 'P', 'K', 'C', 'K', 'P', 'T'};

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  for (const auto& [name, t] : params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", blob.size()}});
    for (double v : t.values) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      detail::put_u32_le(blob, bits);
    }
  }
  const std::string header = nlohmann::json{{"tensors", tensors}, {"meta", meta}}.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += blob;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) != 0)
    throw ParseError(source + ": not a checkpoint (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t hlen = detail::get_u32_le(p + 8);
  if (12 + static_cast<std::size_t>(hlen) > bytes.size()) throw ParseError(source + ": truncated header");
  const auto header = json_util::parse_text(bytes.substr(12, hlen), source + " (header)");
  const std::size_t base = 12 + hlen;
  Checkpoint ck;
  ck.meta = header.contains("meta") ? header.at("meta") : nlohmann::json::object();
  const auto& tensors = json_util::field(header, "tensors", source);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto ctx = source + ": tensors[" + std::to_string(i) + "]";
    const auto name = json_util::get<std::string>(tensors[i], "name", ctx);
    const auto shape = json_util::get<std::vector<int>>(tensors[i], "shape", ctx);
    const auto offset = tensors[i].at("offset").get<std::size_t>();
    Tensor t{shape, {}};
    const std::size_t n = t.count();
    if (base + offset + 4 * n > bytes.size()) throw ParseError(ctx + ": blob runs past end of file");
    std::vector<double> values(n);
    for (std::size_t k = 0; k < n; ++k)
      values[k] = std::bit_cast<float>(detail::get_u32_le(p + base + offset + 4 * k));
    ck.params.add(name, shape, std::move(values));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params, const nlohmann::json& meta) {
  json_util::write_file(path, encode_checkpoint(params, meta));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(json_util::read_file(path), path);
}

inline nlohmann::json mlp_config_json(const MLPConfig& c) {
  return {{"in_dim", c.in_dim}, {"out_dim", c.out_dim}, {"hidden", c.hidden},
          {"activation", activation_name(c.activation)}};
}

inline MLPConfig mlp_config_from_json(const nlohmann::json& j, const std::string& ctx) {
  MLPConfig c;
  c.in_dim = json_util::get<int>(j, "in_dim", ctx);
  c.out_dim = json_util::get<int>(j, "out_dim", ctx);
  c.hidden = json_util::get<std::vector<int>>(j, "hidden", ctx);
  c.activation = activation_from_name(json_util::get<std::string>(j, "activation", ctx));
  c.validate();
  return c;
}

// Values rounded through float32, i.e. what a save/load cycle yields.
inline ParamStore round_to_f32(const ParamStore& p) {
  ParamStore out;
  for (const auto& [k, t] : p.tensors()) {
    std::vector<double> v(t.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(t.values[i]);
    out.add(k, t.shape, std::move(v));
  }
  return out;
}

}  // namespace pmp
