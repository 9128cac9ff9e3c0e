#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "npgrow/model.hpp"
#include "npgrow/objective.hpp"
#include "npgrow/training.hpp"

namespace npgrow {

// Full training state; round-trips bit-exactly through save/load.
struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  LossConfig loss_config;
  int completed_epochs = 0;
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
  ParamStore params;
  AdamState adam;
  bool has_adam = false;
};

Checkpoint make_checkpoint(const GrowthModel& model, const TrainConfig& tc,
                           const LossConfig& lc, const AdamState& adam, int completed_epochs,
                           const std::array<uint64_t, 4>& rng_state);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Builds a model from the checkpoint's own config.
GrowthModel restore_model(const Checkpoint& ckpt);
// Loads parameters into an existing model; throws if the checkpoint was
// written for a different ModelConfig.
void load_parameters(GrowthModel& model, const Checkpoint& ckpt);

}  // namespace npgrow
