#pragma once

#include <json.hpp>

#include "seqrec/config.hpp"

namespace seqrec {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& m);

}  // namespace seqrec
