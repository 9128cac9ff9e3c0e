#include "npgrow/config_json.hpp"

#include <set>
#include <stdexcept>

namespace npgrow {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("unknown config key '" + it.key() + "' in " + where);
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"input_size", c.input_size},
              {"image_channels", c.image_channels},
              {"num_classes", c.num_classes},
              {"latent_dim", c.latent_dim},
              {"attention_heads", c.attention_heads},
              {"attention_key_dim", c.attention_key_dim},
              {"spatiotemporal_scales", c.spatiotemporal_scales},
              {"temporal_scales", c.temporal_scales},
              {"encoder_channel_widths", c.encoder_channel_widths},
              {"sigma_floor", c.sigma_floor},
              {"use_attention_skips", c.use_attention_skips},
              {"width_scale", c.width_scale},
              {"allow_large_spatiotemporal", c.allow_large_spatiotemporal}};
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j,
             {"input_size", "image_channels", "num_classes", "latent_dim", "attention_heads",
              "attention_key_dim", "spatiotemporal_scales", "temporal_scales",
              "encoder_channel_widths", "sigma_floor", "use_attention_skips", "width_scale",
              "allow_large_spatiotemporal"},
             "model config");
  ModelConfig c;
  maybe(j, "input_size", c.input_size);
  maybe(j, "image_channels", c.image_channels);
  maybe(j, "num_classes", c.num_classes);
  maybe(j, "latent_dim", c.latent_dim);
  maybe(j, "attention_heads", c.attention_heads);
  maybe(j, "attention_key_dim", c.attention_key_dim);
  maybe(j, "spatiotemporal_scales", c.spatiotemporal_scales);
  maybe(j, "temporal_scales", c.temporal_scales);
  maybe(j, "encoder_channel_widths", c.encoder_channel_widths);
  maybe(j, "sigma_floor", c.sigma_floor);
  maybe(j, "use_attention_skips", c.use_attention_skips);
  maybe(j, "width_scale", c.width_scale);
  maybe(j, "allow_large_spatiotemporal", c.allow_large_spatiotemporal);
  return c;
}

json to_json(const LossConfig& c) {
  json j{{"beta", c.beta}, {"dice_smooth", c.dice_smooth}};
  if (c.class_weights) j["class_weights"] = *c.class_weights;
  return j;
}

LossConfig loss_config_from_json(const json& j) {
  check_keys(j, {"beta", "dice_smooth", "class_weights"}, "loss config");
  LossConfig c;
  maybe(j, "beta", c.beta);
  maybe(j, "dice_smooth", c.dice_smooth);
  if (j.contains("class_weights"))
    c.class_weights = j.at("class_weights").get<std::vector<double>>();
  return c;
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"desk_scale", c.desk_scale},
              {"draws_per_epoch", c.draws_per_epoch},
              {"augment", c.augment},
              {"augment_noise", c.augment_noise},
              {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"epochs", "learning_rate", "batch_size", "adam_beta1", "adam_beta2", "adam_eps",
              "seed", "desk_scale", "draws_per_epoch", "augment", "augment_noise",
              "checkpoint_every"},
             "train config");
  TrainConfig c;
  maybe(j, "epochs", c.epochs);
  maybe(j, "learning_rate", c.learning_rate);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "adam_beta1", c.adam_beta1);
  maybe(j, "adam_beta2", c.adam_beta2);
  maybe(j, "adam_eps", c.adam_eps);
  maybe(j, "seed", c.seed);
  maybe(j, "desk_scale", c.desk_scale);
  maybe(j, "draws_per_epoch", c.draws_per_epoch);
  maybe(j, "augment", c.augment);
  maybe(j, "augment_noise", c.augment_noise);
  maybe(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

}  // namespace npgrow
