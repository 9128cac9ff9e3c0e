#pragma once

#include <json.hpp>

#include "npgrow/model.hpp"
#include "npgrow/objective.hpp"
#include "npgrow/training.hpp"

namespace npgrow {

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const TrainConfig& c);

// Strict parsers: unknown keys raise std::invalid_argument naming the key.
ModelConfig model_config_from_json(const nlohmann::json& j);
LossConfig loss_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace npgrow
