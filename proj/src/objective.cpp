#include "npgrow/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace npgrow {

void LossConfig::validate() const {
  if (beta < 0.0) throw std::invalid_argument("LossConfig: beta must be >= 0");
  if (!(dice_smooth > 0.0)) throw std::invalid_argument("LossConfig: dice_smooth must be positive");
}

Var cross_entropy_loss(Tape& tape, Var logits, const SegGrid& labels, const LossConfig& config) {
  Tensor lab({labels.h, labels.w});
  for (size_t i = 0; i < labels.v.size(); ++i) lab[static_cast<int64_t>(i)] = labels.v[i];
  const std::vector<double>* cw =
      config.class_weights.has_value() ? &config.class_weights.value() : nullptr;
  return softmax_cross_entropy(tape, logits, lab, cw);
}

Var soft_dice_loss(Tape& tape, Var logits, const SegGrid& labels, const LossConfig& config) {
  const int c = logits->val.dim(0);
  const int h = logits->val.dim(1), w = logits->val.dim(2);
  if (labels.h != h || labels.w != w)
    throw std::invalid_argument("soft_dice_loss: label grid mismatch");
  Var probs = softmax_channels(tape, logits);

  // Mean of per-class soft Dice over the foreground classes.
  Var acc = nullptr;
  for (int k = 1; k < c; ++k) {
    Tensor onehot({h, w});
    double ysum = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        if (labels.at(i, j) == k) {
          onehot.at(i, j) = 1.0;
          ysum += 1.0;
        }
    Var pk = slice_channel(tape, probs, k);
    Var inter = sum_all(tape, mul(tape, pk, tape.constant(onehot)));
    Var psum = sum_all(tape, pk);
    Var numer = add_scalar(tape, scale(tape, inter, 2.0), config.dice_smooth);
    Var denom = add_scalar(tape, psum, ysum + config.dice_smooth);
    Var dice_k = div_ew(tape, numer, denom);
    acc = acc ? add(tape, acc, dice_k) : dice_k;
  }
  Var mean_dice = scale(tape, acc, 1.0 / static_cast<double>(c - 1));
  return add_scalar(tape, neg(tape, mean_dice), 1.0);
}

Var gaussian_kl(Tape& tape, Var mu_q, Var sigma_q, Var mu_p, Var sigma_p) {
  // sum over i of log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
  Var log_ratio = sub(tape, log_ew(tape, sigma_p), log_ew(tape, sigma_q));
  Var diff = sub(tape, mu_q, mu_p);
  Var numer = add(tape, square(tape, sigma_q), square(tape, diff));
  Var denom = scale(tape, square(tape, sigma_p), 2.0);
  Var frac = div_ew(tape, numer, denom);
  Var per_dim = add_scalar(tape, add(tape, log_ratio, frac), -0.5);
  return sum_all(tape, per_dim);
}

double cross_entropy_loss(const Tensor& logits, const SegGrid& labels, const LossConfig& config) {
  Tape tape;
  return cross_entropy_loss(tape, tape.constant(logits), labels, config)->val[0];
}

double soft_dice_loss(const Tensor& logits, const SegGrid& labels, const LossConfig& config) {
  Tape tape;
  return soft_dice_loss(tape, tape.constant(logits), labels, config)->val[0];
}

double gaussian_kl(const GaussianLatent& q, const GaussianLatent& p) {
  if (!q.mu.same_shape(p.mu)) throw std::invalid_argument("gaussian_kl: dimension mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < q.mu.size(); ++i) {
    const double sq = q.sigma[i], sp = p.sigma[i];
    const double d = q.mu[i] - p.mu[i];
    acc += std::log(sp / sq) + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
  }
  return acc;
}

LossBreakdown ObjectiveGraph::breakdown(double beta) const {
  LossBreakdown b;
  b.cross_entropy = cross_entropy->val[0];
  b.dice = dice->val[0];
  b.kl = kl->val[0];
  b.total = b.cross_entropy + b.dice + beta * b.kl;
  return b;
}

namespace {

ObjectiveGraph build_objective(Tape& tape, const GrowthModel& model,
                               const ContextTargetBatch& batch,
                               const std::vector<TimedObservation>& recon_points,
                               const LossConfig& config, const Tensor& eps, bool with_grad) {
  config.validate();
  if (batch.context.empty() || batch.target.empty())
    throw std::invalid_argument("objective: context and target must be non-empty");
  if (eps.size() != model.config().latent())
    throw std::invalid_argument("objective: eps must match the latent dimension");

  std::vector<GrowthModel::EncodedObservation> ctx_reprs;
  for (const auto& obs : batch.context)
    ctx_reprs.push_back(model.encode_observation(tape, obs, with_grad));
  std::vector<GrowthModel::EncodedObservation> all_reprs = ctx_reprs;
  for (const auto& obs : batch.target)
    all_reprs.push_back(model.encode_observation(tape, obs, with_grad));

  auto [mu_prior, sigma_prior] = GrowthModel::aggregate_global(tape, ctx_reprs);
  auto [mu_post, sigma_post] = GrowthModel::aggregate_global(tape, all_reprs);

  // Reparameterized posterior sample, shared across every decoded point.
  Var z = add(tape, mu_post, mul(tape, sigma_post, tape.constant(eps)));

  GrowthModel::AttnBank bank;
  const bool skips = model.config().use_attention_skips;
  if (skips) bank = model.build_attn_bank(tape, ctx_reprs);

  Var ce = nullptr, dice = nullptr;
  for (const auto& point : recon_points) {
    Var logits = model.decode(tape, z, point.time, skips ? &bank : nullptr);
    Var ce_p = cross_entropy_loss(tape, logits, point.segmentation, config);
    Var dice_p = soft_dice_loss(tape, logits, point.segmentation, config);
    ce = ce ? add(tape, ce, ce_p) : ce_p;
    dice = dice ? add(tape, dice, dice_p) : dice_p;
  }
  const double inv_n = 1.0 / static_cast<double>(recon_points.size());
  ObjectiveGraph g;
  g.cross_entropy = scale(tape, ce, inv_n);
  g.dice = scale(tape, dice, inv_n);
  g.kl = gaussian_kl(tape, mu_post, sigma_post, mu_prior, sigma_prior);
  g.total = add(tape, add(tape, g.cross_entropy, g.dice), scale(tape, g.kl, config.beta));
  return g;
}

}  // namespace

ObjectiveGraph training_objective(Tape& tape, const GrowthModel& model,
                                  const ContextTargetBatch& batch, const LossConfig& config,
                                  const Tensor& eps, bool with_grad) {
  return build_objective(tape, model, batch, batch.effective_targets(), config, eps, with_grad);
}

ObjectiveGraph target_only_objective(Tape& tape, const GrowthModel& model,
                                     const ContextTargetBatch& batch, const LossConfig& config,
                                     const Tensor& eps) {
  return build_objective(tape, model, batch, batch.target, config, eps, false);
}

}  // namespace npgrow
