#include <json.hpp>

#include "retina/common/error.hpp"
#include "retina/train/trainer.hpp"

namespace retina {
namespace {

using nlohmann::ordered_json;

ordered_json trunk_json(const nn::TrunkConfig& t) {
  return ordered_json{{"in_channels", t.in_channels},       {"input_size", t.input_size},
                      {"stem_channels", t.stem_channels},   {"block1_branch", t.block1_branch},
                      {"block1_out", t.block1_out},         {"down_channels", t.down_channels},
                      {"block2_branch", t.block2_branch},   {"block2_out", t.block2_out},
                      {"attention_channels", t.attention_channels},
                      {"block3_branch", t.block3_branch},   {"block3_out", t.block3_out},
                      {"batch_norm", t.batch_norm}};
}

// Reads `key` into `field` when present and removes it, so leftovers are unknown keys.
template <typename T>
void take(ordered_json& obj, const char* key, T& field) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    field = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
  obj.erase(it);
}

void reject_leftovers(const ordered_json& obj, const std::string& where) {
  if (!obj.empty()) throw ConfigError("unknown config key '" + where + obj.begin().key() + "'");
}

ordered_json take_object(ordered_json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return ordered_json::object();
  if (!it->is_object()) throw ConfigError(std::string("config key '") + key + "' must be an object");
  ordered_json out = *it;
  obj.erase(it);
  return out;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["finetune_epochs"] = c.finetune_epochs;
  j["batch_size"] = c.batch_size;
  j["loss"] = {{"smoothing_epsilon", c.loss.smoothing_epsilon}, {"golden_weight", c.loss.golden_weight},
               {"tfl_weight", c.loss.tfl_weight},             {"reconstruction_weight", c.loss.reconstruction_weight},
               {"kl_weight", c.loss.kl_weight}};
  j["adam"] = {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}};
  j["nesterov"] = {{"lr", c.nesterov.lr}, {"momentum", c.nesterov.momentum}, {"power", c.nesterov.power}};
  j["max_grad_norm"] = c.max_grad_norm;
  j["dropout"] = c.dropout;
  j["latent_dim"] = c.latent_dim;
  j["ensemble_size"] = c.ensemble_size;
  j["transfer"] = c.transfer;
  j["trunk"] = trunk_json(c.trunk);
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: top level must be an object");
  TrainConfig c;
  take(j, "seed", c.seed);
  take(j, "pretrain_epochs", c.pretrain_epochs);
  take(j, "finetune_epochs", c.finetune_epochs);
  take(j, "batch_size", c.batch_size);
  take(j, "max_grad_norm", c.max_grad_norm);
  take(j, "dropout", c.dropout);
  take(j, "latent_dim", c.latent_dim);
  take(j, "ensemble_size", c.ensemble_size);
  take(j, "transfer", c.transfer);

  ordered_json loss = take_object(j, "loss");
  take(loss, "smoothing_epsilon", c.loss.smoothing_epsilon);
  take(loss, "golden_weight", c.loss.golden_weight);
  take(loss, "tfl_weight", c.loss.tfl_weight);
  take(loss, "reconstruction_weight", c.loss.reconstruction_weight);
  take(loss, "kl_weight", c.loss.kl_weight);
  reject_leftovers(loss, "loss.");

  ordered_json adam = take_object(j, "adam");
  take(adam, "lr", c.adam.lr);
  take(adam, "beta1", c.adam.beta1);
  take(adam, "beta2", c.adam.beta2);
  take(adam, "epsilon", c.adam.epsilon);
  reject_leftovers(adam, "adam.");

  ordered_json nesterov = take_object(j, "nesterov");
  take(nesterov, "lr", c.nesterov.lr);
  take(nesterov, "momentum", c.nesterov.momentum);
  take(nesterov, "power", c.nesterov.power);
  reject_leftovers(nesterov, "nesterov.");

  ordered_json trunk = take_object(j, "trunk");
  take(trunk, "in_channels", c.trunk.in_channels);
  take(trunk, "input_size", c.trunk.input_size);
  take(trunk, "stem_channels", c.trunk.stem_channels);
  take(trunk, "block1_branch", c.trunk.block1_branch);
  take(trunk, "block1_out", c.trunk.block1_out);
  take(trunk, "down_channels", c.trunk.down_channels);
  take(trunk, "block2_branch", c.trunk.block2_branch);
  take(trunk, "block2_out", c.trunk.block2_out);
  take(trunk, "attention_channels", c.trunk.attention_channels);
  take(trunk, "block3_branch", c.trunk.block3_branch);
  take(trunk, "block3_out", c.trunk.block3_out);
  take(trunk, "batch_norm", c.trunk.batch_norm);
  reject_leftovers(trunk, "trunk.");

  reject_leftovers(j, "");
  c.validate();
  return c;
}

}  // namespace retina
