#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>

#include <json.hpp>

#include "spectralca/classifier.hpp"

namespace spectralca {

inline constexpr const char* kCheckpointFormat = "spectralca-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Manifest (JSON) at `path`, little-endian f32 blob at `path` + ".bin".
/// Entries cover parameters then batch-norm running statistics, in model
/// order. `extra` is stored verbatim under "extra".
void save_checkpoint(Classifier<float>& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
    std::unique_ptr<Classifier<float>> model;
    nlohmann::json extra;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest);

}  // namespace spectralca
