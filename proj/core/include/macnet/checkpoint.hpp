#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "macnet/network.hpp"

namespace macnet {

// Checkpoint layout: magic "MACCNN01", little-endian u32 header length, UTF-8
// JSON header (network config, tensor table, optional state object), then the
// tensor payloads as little-endian float64 in header order.

struct CheckpointExtra {
    // extra tensors beyond network parameters, e.g. optimizer buffers
    std::vector<std::pair<std::string, std::vector<double>>> tensors;
    std::string state_json;  // opaque JSON object, "{}" if unused
};

void save_checkpoint(const std::filesystem::path& path, const MacNetwork& net,
                     const CheckpointExtra& extra = {});

struct LoadedCheckpoint {
    MacNetwork net;
    std::map<std::string, std::vector<double>> extra_tensors;
    std::string state_json;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& json_text);

}  // namespace macnet
