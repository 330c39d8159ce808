#pragma once

#include <map>
#include <string>
#include <vector>

#include "d2a/data.hpp"
#include "d2a/model.hpp"
#include "d2a/optim.hpp"

namespace d2a {

// Plain-text "key = value" configuration, one pair per line, '#' comments.
using KeyValueMap = std::map<std::string, std::string>;

KeyValueMap parse_config_text(const std::string& text);
KeyValueMap parse_config_file(const std::string& path);

ModelConfig model_config_from(const KeyValueMap& kv);
TrainConfig train_config_from(const KeyValueMap& kv);
AugmentConfig augment_config_from(const KeyValueMap& kv);

std::string serialize_model_config(const ModelConfig& c);
std::string serialize_train_config(const TrainConfig& c);
std::string serialize_augment_config(const AugmentConfig& c);

}  // namespace d2a
