#include "npgrow/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace npgrow {

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0 || draws_per_epoch <= 0)
    throw std::invalid_argument("TrainConfig: epochs, batch_size and draws_per_epoch must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: Adam betas must be in (0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps must be positive");
  if (augment_noise < 0.0) throw std::invalid_argument("TrainConfig: augment_noise must be >= 0");
}

void apply_desk_preset(ModelConfig& mc, TrainConfig& tc) {
  mc.width_scale = 0.5;
  tc.desk_scale = true;
  tc.epochs = std::min(tc.epochs, 40);
  tc.batch_size = 16;
  tc.learning_rate = 3e-4;
  tc.draws_per_epoch = 2;
}

Trainer::Trainer(GrowthModel& model, TrainConfig tc, LossConfig lc)
    : model_(model), tc_(std::move(tc)), lc_(std::move(lc)) {
  tc_.validate();
  lc_.validate();
  adam_.m.reserve(model_.params().size());
  adam_.v.reserve(model_.params().size());
  for (const auto& e : model_.params().entries) {
    adam_.m.push_back(Tensor::zeros(e.value.shape()));
    adam_.v.push_back(Tensor::zeros(e.value.shape()));
  }
}

void Trainer::restore(int completed_epochs, AdamState adam) {
  if (adam.m.size() != model_.params().size())
    throw std::invalid_argument("Trainer::restore: optimizer state does not match the model");
  completed_epochs_ = completed_epochs;
  adam_ = std::move(adam);
}

void Trainer::adam_step(const std::vector<Tensor>& grads) {
  adam_.t += 1;
  const double b1 = tc_.adam_beta1, b2 = tc_.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(adam_.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(adam_.t));
  ParamStore& ps = model_.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    Tensor& p = ps.entries[i].value;
    Tensor& m = adam_.m[i];
    Tensor& v = adam_.v[i];
    const Tensor& g = grads[i];
    for (int64_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / bias1;
      const double vhat = v[k] / bias2;
      p[k] -= tc_.learning_rate * mhat / (std::sqrt(vhat) + tc_.adam_eps);
    }
  }
}

LossBreakdown Trainer::run_batch(const std::vector<Trajectory>& train_set,
                                 const std::vector<int>& item_subjects, int epoch,
                                 int batch_index) {
  const int n_items = static_cast<int>(item_subjects.size());

  // Single context size per batch, capped by the shortest trajectory in it.
  int cap = 5;
  for (int s : item_subjects)
    cap = std::min(cap, static_cast<int>(train_set[static_cast<size_t>(s)].length()) - 1);
  Rng batch_rng(mix_seed(tc_.seed, 0xba7c4, static_cast<uint64_t>(epoch),
                         static_cast<uint64_t>(batch_index)));
  const int num_context = static_cast<int>(batch_rng.range(2, std::max(2, cap)));

  std::vector<std::vector<Tensor>> item_grads(static_cast<size_t>(n_items));
  std::vector<LossBreakdown> item_losses(static_cast<size_t>(n_items));
  const size_t n_params = model_.params().size();

#ifdef _OPENMP
  const int waves = std::max(1, omp_get_max_threads());
#else
  const int waves = 1;
#endif

  std::vector<Tensor> grads(n_params);
  for (size_t i = 0; i < n_params; ++i)
    grads[i] = Tensor::zeros(model_.params().entries[i].value.shape());

  for (int wave_start = 0; wave_start < n_items; wave_start += waves) {
    const int wave_end = std::min(n_items, wave_start + waves);
#pragma omp parallel for schedule(dynamic)
    for (int it = wave_start; it < wave_end; ++it) {
      const int subject = item_subjects[static_cast<size_t>(it)];
      Rng item_rng(mix_seed(tc_.seed, 0x17e21, static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(batch_index) << 20 | static_cast<uint64_t>(it)));
      ContextTargetBatch batch = sample_context_target(
          train_set[static_cast<size_t>(subject)], num_context, SplitMode::Train, item_rng);
      if (tc_.augment) batch = augment_batch(batch, item_rng, tc_.augment_noise);
      const Tensor eps = item_rng.normal_tensor({model_.config().latent()});

      Tape tape;
      ObjectiveGraph g = training_objective(tape, model_, batch, lc_, eps, true);
      item_losses[static_cast<size_t>(it)] = g.breakdown(lc_.beta);
      tape.backward(g.total);

      std::vector<Tensor>& sink = item_grads[static_cast<size_t>(it)];
      sink.resize(n_params);
      tape.collect_param_grads([&](int pidx, const Tensor& grad) {
        Tensor& slot = sink[static_cast<size_t>(pidx)];
        if (!slot.defined())
          slot = grad.clone();
        else
          slot.add_(grad);
      });
    }
    // Deterministic reduction in item order.
    for (int it = wave_start; it < wave_end; ++it) {
      std::vector<Tensor>& sink = item_grads[static_cast<size_t>(it)];
      for (size_t p = 0; p < n_params; ++p)
        if (sink[p].defined()) grads[p].add_(sink[p]);
      sink.clear();
      sink.shrink_to_fit();
    }
  }

  LossBreakdown mean;
  for (int it = 0; it < n_items; ++it) {
    mean.cross_entropy += item_losses[static_cast<size_t>(it)].cross_entropy;
    mean.dice += item_losses[static_cast<size_t>(it)].dice;
    mean.kl += item_losses[static_cast<size_t>(it)].kl;
    mean.total += item_losses[static_cast<size_t>(it)].total;
  }
  const double inv = 1.0 / n_items;
  mean.cross_entropy *= inv;
  mean.dice *= inv;
  mean.kl *= inv;
  mean.total *= inv;

  if (!std::isfinite(mean.total)) {
    std::ostringstream os;
    os << "training diverged: non-finite loss at epoch " << epoch << " batch " << batch_index
       << " (ce=" << mean.cross_entropy << " dice=" << mean.dice << " kl=" << mean.kl << ")";
    throw std::runtime_error(os.str());
  }

  for (auto& g : grads) g.scale_(inv);
  adam_step(grads);
  return mean;
}

std::vector<EpochLog> Trainer::run(const std::vector<Trajectory>& train_set,
                                   const TrainHooks& hooks) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& traj : train_set)
    if (traj.length() < 3)
      throw std::invalid_argument("train: trajectory '" + traj.subject_id +
                                  "' has fewer than 3 observations");

  std::vector<EpochLog> log;
  for (int epoch = completed_epochs_; epoch < tc_.epochs; ++epoch) {
    std::vector<int> order;
    order.reserve(train_set.size() * static_cast<size_t>(tc_.draws_per_epoch));
    for (int d = 0; d < tc_.draws_per_epoch; ++d)
      for (int i = 0; i < static_cast<int>(train_set.size()); ++i) order.push_back(i);
    Rng epoch_rng(mix_seed(tc_.seed, 0xe90c4, static_cast<uint64_t>(epoch)));
    epoch_rng.shuffle(order);

    LossBreakdown epoch_mean;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tc_.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(tc_.batch_size));
      std::vector<int> items(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
      const LossBreakdown b = run_batch(train_set, items, epoch, n_batches);
      epoch_mean.cross_entropy += b.cross_entropy;
      epoch_mean.dice += b.dice;
      epoch_mean.kl += b.kl;
      epoch_mean.total += b.total;
      ++n_batches;
    }
    const double inv = 1.0 / std::max(1, n_batches);
    epoch_mean.cross_entropy *= inv;
    epoch_mean.dice *= inv;
    epoch_mean.kl *= inv;
    epoch_mean.total *= inv;

    completed_epochs_ = epoch + 1;
    log.push_back({epoch, epoch_mean});
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_mean);
    if (tc_.checkpoint_every > 0 && (epoch + 1) % tc_.checkpoint_every == 0 &&
        hooks.on_checkpoint)
      hooks.on_checkpoint(epoch);
  }
  return log;
}

}  // namespace npgrow
