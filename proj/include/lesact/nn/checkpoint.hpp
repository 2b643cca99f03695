#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesact/nn/adam.hpp"
#include "lesact/nn/network.hpp"

namespace lesact::nn {

/// Metadata stored in the JSON sidecar (`<checkpoint>.json`).
struct CheckpointInfo {
  NetworkConfig config;
  int epoch = 0;            // completed epochs
  std::string scalar;       // "float32" or "float64"
  nlohmann::json extra;     // free-form (training config, model name, ...)
};

/// Binary parameters (and optionally optimizer moments) plus a JSON sidecar
/// holding the network config. Parameters are written in visit order.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Network<Scalar>& net, int epoch,
                     const AdamState<Scalar>* optimizer = nullptr, const nlohmann::json& extra = nlohmann::json::object());

/// Read only the sidecar.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Rebuild the network from a checkpoint. When `expected` is given and its
/// architecture differs, throws ConfigError listing the differing fields.
template <typename Scalar>
Network<Scalar> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr,
                                AdamState<Scalar>* optimizer = nullptr,
                                const std::optional<NetworkConfig>& expected = std::nullopt);

/// Names of the JSON fields in which two configs differ.
std::vector<std::string> config_differences(const NetworkConfig& a, const NetworkConfig& b);

}  // namespace lesact::nn
