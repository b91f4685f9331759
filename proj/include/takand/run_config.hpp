#pragma once

// Run configuration for the command-line tool: data paths, output directory
// and the training settings, read from one JSON document.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "takand/training.hpp"

namespace takand {

struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "out";
  std::filesystem::path embeddings;  // stem written by `pretrain`; empty: pretrain in-process
  std::filesystem::path checkpoint;  // empty: <out_dir>/model.ckpt
  std::string split = "test";
  TrainConfig train;

  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? out_dir / "model.ckpt" : checkpoint;
  }
};

// Unknown keys anywhere in the document are an InputError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

}  // namespace takand
