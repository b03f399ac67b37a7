#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace uad {

// Versioned parameter archive: magic, a JSON header describing the model
// kind/config/array layout, then raw little-endian float64 payload. The
// digest of (header-sans-digest + payload) doubles as the checkpoint id.
struct CheckpointPayload {
    std::string kind;       // "resvae" | "ddpm" | "perceptual"
    nlohmann::json config;  // model configuration to validate on load
    std::vector<std::pair<std::string, std::vector<double>>> arrays;
    std::string code_version;
    std::string config_hash;  // run configuration that produced it
};

void write_checkpoint(const CheckpointPayload& p, const std::string& path);
CheckpointPayload read_checkpoint(const std::string& path);

/// Stable content id over kind, config and every array.
std::string checkpoint_digest(const CheckpointPayload& p);

}  // namespace uad
