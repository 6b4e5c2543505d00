#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tqnet/data.hpp"
#include "tqnet/model.hpp"
#include "tqnet/training.hpp"

namespace tqnet::cli {

// Every run is described by one flat set of keys; see keys() for the
// schema. Resolution order is defaults, then the config file, then
// command-line overrides.
struct RunConfig {
  std::string data;
  std::string dataset;  // defaults to the data file's stem
  std::string out_dir = "runs";
  SplitSpec split;
  ModelConfig model;
  VariantSpec variant;
  TrainPlan plan;
  long long target_channel = -1;  // -1 scores every channel

  nlohmann::ordered_json to_json() const;
  // Hash of every key except out_dir, so that identical runs written to
  // different directories share it.
  std::string hash() const;
  std::string dataset_name() const;
  ExperimentSpec experiment() const;
};

enum class KeyKind { kInt, kReal, kBool, kString };

struct KeyInfo {
  std::string name;
  KeyKind kind;
  std::string help;
};

const std::vector<KeyInfo>& keys();

// Throws ConfigError naming the offending key for unknown keys, type
// mismatches and unparseable override values.
RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const std::map<std::string, std::string>& overrides = {});

// Runs one subcommand. Returns 0 on success, 1 on a runtime failure and 2 on
// a usage or configuration error; failures print a single JSON line to `err`.
int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tqnet::cli
