#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tqnet/model.hpp"

// Binary parameter container. The byte layout is described in
// docs/checkpoint_format.md.
namespace tqnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = 0;
  ModelConfig config;
  VariantSpec variant;
  std::size_t parameter_count = 0;
};

// Compact JSON for the architectural fields of a config plus the variant.
std::string model_config_json(const ModelConfig& config, const VariantSpec& variant);
void parse_model_config_json(const std::string& text, ModelConfig& config,
                             VariantSpec& variant);

// Parameters are written as 32-bit floats.
template <typename T>
void save_checkpoint(const TQNet<T>& model, const std::filesystem::path& path);

// Copies stored values into `model`. Throws CheckpointError on a bad magic,
// version, checksum or truncation, and on any parameter whose name or shape
// differs from the model's (the message names the parameter).
template <typename T>
void load_parameters(TQNet<T>& model, const std::filesystem::path& path);

// Rebuilds the model described by the stored config and fills its
// parameters.
template <typename T>
TQNet<T> load_checkpoint(const std::filesystem::path& path);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

}  // namespace tqnet
