#pragma once

// JSON mapping of configuration structs, shared by the model file, the run
// configuration reader and the phantom spec reader.

#include <nlohmann/json.hpp>

#include "psic/network.hpp"
#include "psic/training.hpp"

namespace psic::detail {

nlohmann::json to_json(const dcnn::NetworkConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
dcnn::NetworkConfig network_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const training::TrainingConfig& c);
training::TrainingConfig training_config_from_json(const nlohmann::json& j);

/// Throws IoError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace psic::detail
