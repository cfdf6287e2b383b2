// SPDX-License-Identifier: Apache-2.0
#include "tandkit/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "tandkit/error.hpp"
#include "tandkit/io.hpp"

namespace tand {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'N', 'D', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::uint64_t fnv1a64(std::span<const float> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float f : values) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

std::vector<std::uint8_t> encode_checkpoint(std::span<const Param> params, const nlohmann::json& config) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["config"] = config;
  manifest["params"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const Param& p : params) {
    const auto values = p.tensor.data();
    manifest["params"].push_back({{"name", p.name},
                                  {"shape", p.tensor.shape()},
                                  {"offset", offset},
                                  {"count", values.size()},
                                  {"fnv1a64", hash_hex(fnv1a64(values))}});
    offset += values.size();
  }
  const std::string header = manifest.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset * 4);
  for (const Param& p : params) {
    for (float f : p.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw ParseError("checkpoint truncated before manifest length", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ParseError("bad checkpoint magic", 0);
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw ParseError("checkpoint truncated inside manifest", bytes.size());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what(), 16 + e.byte);
  }
  Checkpoint ckpt;
  ckpt.format_version = manifest.at("format_version").get<int>();
  if (ckpt.format_version != kCheckpointFormatVersion) {
    throw ParseError("unsupported checkpoint format version " + std::to_string(ckpt.format_version), 16);
  }
  ckpt.config = manifest.value("config", nlohmann::json());
  const std::size_t payload = 16 + header_len;
  for (const auto& item : manifest.at("params")) {
    CheckpointEntry e;
    e.name = item.at("name").get<std::string>();
    e.shape = item.at("shape").get<Shape>();
    const auto offset = item.at("offset").get<std::size_t>();
    const auto count = item.at("count").get<std::size_t>();
    if (count != shape_numel(e.shape)) throw ParseError("param '" + e.name + "' count/shape mismatch", 16);
    const std::size_t begin = payload + offset * 4;
    if (begin + count * 4 > bytes.size()) {
      throw ParseError("checkpoint payload truncated in param '" + e.name + "'", bytes.size());
    }
    e.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) e.values[i] = std::bit_cast<float>(get_u32(bytes.data() + begin + 4 * i));
    e.hash = fnv1a64(e.values);
    if (hash_hex(e.hash) != item.value("fnv1a64", hash_hex(e.hash))) {
      throw ParseError("hash mismatch for param '" + e.name + "'", begin);
    }
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Param> params,
                     const nlohmann::json& config) {
  write_file_atomic(path, encode_checkpoint(params, config));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void load_params(const Checkpoint& ckpt, std::span<const Param> params) {
  if (ckpt.entries.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.entries.size()) + " params, model has " +
                      std::to_string(params.size()));
  }
  for (const Param& p : params) {
    const CheckpointEntry* e = ckpt.find(p.name);
    if (!e) throw ConfigError("checkpoint lacks param '" + p.name + "'");
    if (e->shape != p.tensor.shape()) {
      throw ConfigError("param '" + p.name + "' shape " + shape_str(e->shape) + " vs model " +
                        shape_str(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::copy(e->values.begin(), e->values.end(), t.data().begin());
  }
}

}  // namespace tand
