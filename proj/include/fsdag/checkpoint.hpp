#pragma once

#include <filesystem>
#include <string>

#include "fsdag/graphnet.hpp"

namespace fsdag {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

// "FSDAG1", u64 little-endian header length, JSON header (config plus a
// tensor index of name, shape and payload offset), then little-endian f64s.
std::string encode_checkpoint(const ModelParams& params, const ModelConfig& config);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fsdag
