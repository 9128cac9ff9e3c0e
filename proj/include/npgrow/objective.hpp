#pragma once

#include <optional>
#include <vector>

#include "npgrow/autodiff.hpp"
#include "npgrow/model.hpp"
#include "npgrow/types.hpp"

namespace npgrow {

struct LossConfig {
  double beta = 1e-4;
  double dice_smooth = 1e-5;
  std::optional<std::vector<double>> class_weights;

  void validate() const;
};

struct LossBreakdown {
  double cross_entropy = 0.0;
  double dice = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// ---- Graph-building losses ----
Var cross_entropy_loss(Tape& tape, Var logits, const SegGrid& labels,
                       const LossConfig& config);
Var soft_dice_loss(Tape& tape, Var logits, const SegGrid& labels, const LossConfig& config);
// Diagonal-Gaussian KL(q || p), summed over dimensions.
Var gaussian_kl(Tape& tape, Var mu_q, Var sigma_q, Var mu_p, Var sigma_p);

// ---- Plain-value versions for evaluation ----
double cross_entropy_loss(const Tensor& logits, const SegGrid& labels, const LossConfig& config);
double soft_dice_loss(const Tensor& logits, const SegGrid& labels, const LossConfig& config);
double gaussian_kl(const GaussianLatent& q, const GaussianLatent& p);

struct ObjectiveGraph {
  Var total = nullptr;
  Var cross_entropy = nullptr;
  Var dice = nullptr;
  Var kl = nullptr;

  LossBreakdown breakdown(double beta) const;
};

// Eq.-style variational objective: reconstruction of every target-set point
// from a single posterior sample plus beta-weighted KL(posterior || prior).
// eps is the fixed reparameterization noise (latent-sized standard normals).
ObjectiveGraph training_objective(Tape& tape, const GrowthModel& model,
                                  const ContextTargetBatch& batch, const LossConfig& config,
                                  const Tensor& eps, bool with_grad = true);

// Same objective with the reconstruction restricted to the batch's target
// points only (the evaluation-time test loss).
ObjectiveGraph target_only_objective(Tape& tape, const GrowthModel& model,
                                     const ContextTargetBatch& batch, const LossConfig& config,
                                     const Tensor& eps);

}  // namespace npgrow
