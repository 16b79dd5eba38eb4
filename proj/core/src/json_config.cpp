#include "json_config.hpp"

#include <algorithm>
#include <string>

#include "psic/error.hpp"

namespace psic::detail {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw IoError(std::string(where) + " must be a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!known) throw IoError(std::string("unknown key '") + item.key() + "' in " + where);
  }
}

nlohmann::json to_json(const dcnn::NetworkConfig& c) {
  return {{"radius", c.radius},
          {"n_max", c.n_max},
          {"kernel", c.kernel},
          {"wiring", dcnn::to_string(c.wiring)},
          {"fusion_width", c.fusion_width},
          {"merge_width", c.merge_width},
          {"seed", c.seed}};
}

dcnn::NetworkConfig network_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"radius", "n_max", "kernel", "wiring", "fusion_width", "merge_width", "seed"},
                      "network config");
  dcnn::NetworkConfig c;
  try {
    c.radius = j.value("radius", c.radius);
    c.n_max = j.value("n_max", c.n_max);
    c.kernel = j.value("kernel", c.kernel);
    if (j.contains("wiring")) c.wiring = dcnn::layer2_wiring_from_string(j.at("wiring").get<std::string>());
    c.fusion_width = j.value("fusion_width", c.fusion_width);
    c.merge_width = j.value("merge_width", c.merge_width);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const training::TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"keep_prob", c.keep_prob},
          {"split_train", c.split_train},
          {"split_valid", c.split_valid},
          {"split_mode", training::to_string(c.split_mode)},
          {"seed", c.seed},
          {"keep_best", c.keep_best}};
}

training::TrainingConfig training_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"learning_rate", "batch_size", "epochs", "keep_prob", "split_train", "split_valid",
                       "split_mode", "seed", "keep_best"},
                      "training config");
  training::TrainingConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.keep_prob = j.value("keep_prob", c.keep_prob);
    c.split_train = j.value("split_train", c.split_train);
    c.split_valid = j.value("split_valid", c.split_valid);
    if (j.contains("split_mode")) c.split_mode = training::split_mode_from_string(j.at("split_mode").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.keep_best = j.value("keep_best", c.keep_best);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace psic::detail
