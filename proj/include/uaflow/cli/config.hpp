#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "uaflow/data.hpp"
#include "uaflow/model.hpp"
#include "uaflow/train.hpp"

namespace uaflow::cli {

// Everything a `train` run needs. Model dimensions and class count follow
// from the dataset.
struct RunConfig {
    std::uint64_t seed = 0;
    data::ToyDataset dataset;
    int train_size = 4000;
    model::ModelConfig model;
    train::TrainConfig train;
};

// Parses YAML text. Every problem found is reported in one ConfigError, one
// "origin:line: key: message" entry per line.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);

nlohmann::json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

nlohmann::json dataset_to_json(const data::ToyDataset& dataset);
data::ToyDataset dataset_from_json(const nlohmann::json& j);

// Independent seed streams derived from the run seed.
enum class Stream : std::uint64_t { Data = 1, Model = 2, Train = 3, Reference = 4 };
std::uint64_t stream_seed(std::uint64_t seed, Stream stream);

} // namespace uaflow::cli
