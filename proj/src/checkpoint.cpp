#include "fsdag/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsdag/errors.hpp"

namespace fsdag {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "FSDAG1";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_checkpoint(const ModelParams& params, const ModelConfig& config) {
  json index = json::array();
  std::uint64_t offset = 0;
  const auto named = params.named();
  for (const auto& nt : named) {
    index.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}});
    offset += nt.tensor.size() * 8;
  }
  const json header{{"config", to_json(config)}, {"tensors", index}, {"payload_bytes", offset}};
  const std::string head = header.dump();

  std::string out(kMagic);
  put_u64(out, head.size());
  out += head;
  out.reserve(out.size() + offset);
  for (const auto& nt : named)
    for (double v : nt.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic)
    throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint64_t head_len = get_u64(bytes, kMagic.size());
  const std::size_t head_at = kMagic.size() + 8;
  if (head_len > bytes.size() - head_at) throw CheckpointError("checkpoint truncated inside the header");
  json header;
  try {
    header = json::parse(bytes.substr(head_at, head_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.config = model_config_from_json(header.at("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  ck.params = ModelParams::init(ck.config, 0);
  const auto named = ck.params.named();
  const std::size_t payload_at = head_at + head_len;
  const std::size_t payload_len = bytes.size() - payload_at;
  try {
    const auto& index = header.at("tensors");
    if (index.size() != named.size())
      throw CheckpointError("checkpoint holds " + std::to_string(index.size()) + " tensors, config expects " +
                            std::to_string(named.size()));
    if (header.at("payload_bytes").get<std::uint64_t>() != payload_len)
      throw CheckpointError("checkpoint payload is " + std::to_string(payload_len) + " bytes, header says " +
                            header.at("payload_bytes").dump());
    for (std::size_t k = 0; k < named.size(); ++k) {
      const auto& entry = index[k];
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      Tensor t = named[k].tensor;
      if (name != named[k].name) throw CheckpointError("tensor " + std::to_string(k) + " is \"" + name + "\", expected \"" + named[k].name + "\"");
      if (shape != t.shape())
        throw CheckpointError("tensor \"" + name + "\" has shape " + shape_to_string(shape) + ", config implies " +
                              shape_to_string(t.shape()));
      if (offset > payload_len || t.size() * 8 > payload_len - offset)
        throw CheckpointError("tensor \"" + name + "\" lies outside the payload");
      auto vals = t.mutable_values();
      for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = std::bit_cast<double>(get_u64(bytes, payload_at + offset + 8 * i));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint tensor index: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace fsdag
