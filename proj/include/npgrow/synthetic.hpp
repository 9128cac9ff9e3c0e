#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "npgrow/rng.hpp"
#include "npgrow/types.hpp"

namespace npgrow {

// Stochastic lesion-growth generator. Lesions are three nested classes of an
// anisotropic ellipse whose semi-axes grow linearly in time around a
// drifting center, so whole-lesion area is analytically known.
struct GrowthParams {
  uint64_t seed = 0;
  int num_timesteps = 5;                       // in [3, 13]
  double growth_rate = 14.0;                   // semi-axis pixels per unit time
  std::array<double, 2> anisotropy = {1.0, 1.0};
  double core_onset = 0.4;                     // in [0, 1]
  double noise_sigma = 0.05;
  std::array<double, 2> drift = {0.0, 0.0};    // center pixels per unit time

  void validate() const;
};

constexpr int kImageSize = 64;
constexpr int kImageChannels = 4;
constexpr int kNumClasses = 4;  // background + three lesion classes

// Radius fractions of the nested class boundaries (outer boundary is 1).
constexpr double kMiddleFraction = 0.68;
constexpr double kCoreFraction = 0.40;

// Semi-axes of the analytic outer ellipse at time t.
std::array<double, 2> lesion_semi_axes(const GrowthParams& params, double t);

Trajectory simulate_trajectory(const GrowthParams& params);
Trajectory simulate_trajectory(const GrowthParams& params, const std::string& subject_id);
// Same generator with caller-chosen observation times.
Trajectory simulate_trajectory_with_times(const GrowthParams& params,
                                          const std::string& subject_id,
                                          const std::vector<double>& times);

// Hard labels of the nested-ellipse lesion at one instant.
SegGrid rasterize_lesion_at(const GrowthParams& params, double t, double cx, double cy);

// Per-channel z-scoring over all of a trajectory's images jointly.
// Throws std::invalid_argument on a zero-variance channel.
Trajectory normalize_trajectory(const Trajectory& traj);

enum class SplitMode { Train, Eval };

// Train mode: num_context random context points plus one extra point, all
// distinct, sorted by time, extra point last. Eval mode: the earliest
// num_context observations plus one strictly later target.
ContextTargetBatch sample_context_target(const Trajectory& traj, int num_context,
                                         SplitMode mode, Rng& rng);

// One sampled spatial/noise transform, applied identically to every timestep.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot_quarters = 0;   // multiples of 90 degrees
  double noise_scale = 0.0;

  bool is_identity() const {
    return !hflip && !vflip && rot_quarters == 0 && noise_scale == 0.0;
  }
};

AugmentDraw draw_augment(Rng& rng, double max_noise = 0.05);
ContextTargetBatch augment_batch(const ContextTargetBatch& batch, const AugmentDraw& draw,
                                 Rng& rng);
ContextTargetBatch augment_batch(const ContextTargetBatch& batch, Rng& rng,
                                 double max_noise = 0.05);

struct Corpus {
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  std::vector<GrowthParams> train_params;
  std::vector<GrowthParams> test_params;
};

// Seeded subject-level split; trajectories come out normalized.
Corpus build_corpus(int n_subjects, uint64_t seed, double split_fraction);

// Subject parameter draws used by build_corpus, exposed for tooling.
GrowthParams draw_subject_params(uint64_t corpus_seed, int subject_index);

// ---- Persistence ----
// One binary array file plus a JSON manifest per subject; round-trips
// bit-exactly. The directory carries a split manifest naming train/test ids.
void save_subject(const std::string& dir, const Trajectory& traj, const GrowthParams& params);
Trajectory load_subject(const std::string& dir, const std::string& subject_id);
void save_corpus(const std::string& dir, const Corpus& corpus);

struct CorpusOnDisk {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

CorpusOnDisk read_split_manifest(const std::string& dir);
std::vector<Trajectory> load_split(const std::string& dir, const std::string& which);

}  // namespace npgrow
