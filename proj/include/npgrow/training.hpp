#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "npgrow/model.hpp"
#include "npgrow/objective.hpp"
#include "npgrow/synthetic.hpp"

namespace npgrow {

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-4;
  int batch_size = 128;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  bool desk_scale = false;
  // How many context/target draws each trajectory contributes per epoch.
  int draws_per_epoch = 1;
  bool augment = true;
  double augment_noise = 0.05;
  int checkpoint_every = 0;  // epochs between periodic checkpoints, 0 = final only

  void validate() const;
};

// Shrinks the run to something a laptop finishes in minutes while keeping
// every structural ratio of the full configuration.
void apply_desk_preset(ModelConfig& mc, TrainConfig& tc);

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t t = 0;

  bool empty() const { return m.empty(); }
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown mean;
};

struct TrainHooks {
  std::function<void(int epoch, const LossBreakdown&)> on_epoch;
  // Called on periodic checkpoints (per TrainConfig::checkpoint_every).
  std::function<void(int epoch)> on_checkpoint;
};

class Trainer {
 public:
  Trainer(GrowthModel& model, TrainConfig tc, LossConfig lc);

  // Resume support: continue from a completed epoch with optimizer state.
  void restore(int completed_epochs, AdamState adam);

  std::vector<EpochLog> run(const std::vector<Trajectory>& train_set,
                            const TrainHooks& hooks = {});

  const AdamState& adam() const { return adam_; }
  int completed_epochs() const { return completed_epochs_; }
  int64_t global_step() const { return adam_.t; }

 private:
  LossBreakdown run_batch(const std::vector<Trajectory>& train_set,
                          const std::vector<int>& item_subjects, int epoch, int batch_index);
  void adam_step(const std::vector<Tensor>& grads);

  GrowthModel& model_;
  TrainConfig tc_;
  LossConfig lc_;
  AdamState adam_;
  int completed_epochs_ = 0;
};

}  // namespace npgrow
