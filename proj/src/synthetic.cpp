#include "npgrow/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace npgrow {

namespace fs = std::filesystem;
using nlohmann::json;

void GrowthParams::validate() const {
  if (num_timesteps < 3 || num_timesteps > 13)
    throw std::invalid_argument("GrowthParams: num_timesteps must be in [3, 13], got " +
                                std::to_string(num_timesteps));
  if (!(growth_rate > 0.0)) throw std::invalid_argument("GrowthParams: growth_rate must be positive");
  if (!(anisotropy[0] > 0.0 && anisotropy[1] > 0.0))
    throw std::invalid_argument("GrowthParams: anisotropy must be positive");
  if (core_onset < 0.0 || core_onset > 1.0)
    throw std::invalid_argument("GrowthParams: core_onset must be in [0, 1]");
  if (noise_sigma < 0.0) throw std::invalid_argument("GrowthParams: noise_sigma must be >= 0");
}

std::array<double, 2> lesion_semi_axes(const GrowthParams& params, double t) {
  return {params.growth_rate * params.anisotropy[0] * t,
          params.growth_rate * params.anisotropy[1] * t};
}

namespace {

// Class intensity templates per channel: in-brain background, outer, middle,
// core. Channels mimic the T1 / T1c / T2 / FLAIR contrast ordering.
constexpr double kClassIntensity[kImageChannels][kNumClasses] = {
    {0.55, 0.42, 0.50, 0.30},
    {0.55, 0.50, 0.95, 0.25},
    {0.45, 0.85, 0.65, 0.75},
    {0.50, 0.90, 0.70, 0.40},
};

constexpr double kBrainRadius = 28.0;

Tensor render_image(const SegGrid& seg, double noise_sigma, Rng& rng) {
  Tensor img({kImageChannels, kImageSize, kImageSize});
  const double bc = kImageSize / 2.0;
  for (int c = 0; c < kImageChannels; ++c) {
    for (int i = 0; i < kImageSize; ++i) {
      for (int j = 0; j < kImageSize; ++j) {
        const double y = i + 0.5, x = j + 0.5;
        const double r2 = (x - bc) * (x - bc) + (y - bc) * (y - bc);
        double v = 0.0;
        if (r2 <= kBrainRadius * kBrainRadius) {
          v = kClassIntensity[c][seg.at(i, j)];
          v += 0.06 * (x / kImageSize - 0.5) + 0.04 * (y / kImageSize - 0.5);
        }
        if (noise_sigma > 0.0) v += noise_sigma * rng.normal();
        img.at(c, i, j) = v;
      }
    }
  }
  return img;
}

}  // namespace

SegGrid rasterize_lesion_at(const GrowthParams& params, double t, double cx, double cy) {
  SegGrid seg(kImageSize, kImageSize);
  const auto axes = lesion_semi_axes(params, t);
  const double a = axes[0], b = axes[1];
  if (a <= 0.0 || b <= 0.0) return seg;
  const bool has_core = t > params.core_onset;
  for (int i = 0; i < kImageSize; ++i) {
    const double y = i + 0.5;
    for (int j = 0; j < kImageSize; ++j) {
      const double x = j + 0.5;
      const double dx = (x - cx) / a, dy = (y - cy) / b;
      const double rho2 = dx * dx + dy * dy;
      if (rho2 > 1.0) continue;
      uint8_t label = 1;
      if (rho2 <= kMiddleFraction * kMiddleFraction) label = 2;
      if (has_core && rho2 <= kCoreFraction * kCoreFraction) label = 3;
      seg.at(i, j) = label;
    }
  }
  return seg;
}

Trajectory simulate_trajectory(const GrowthParams& params) {
  return simulate_trajectory(params, "s" + std::to_string(params.seed));
}

Trajectory simulate_trajectory(const GrowthParams& params, const std::string& subject_id) {
  params.validate();
  Rng probe(params.seed);
  std::vector<double> times(static_cast<size_t>(params.num_timesteps));
  for (double& t : times) t = probe.uniform();
  std::sort(times.begin(), times.end());
  for (size_t i = 1; i < times.size(); ++i)
    if (times[i] <= times[i - 1]) times[i] = times[i - 1] + 1e-6;
  return simulate_trajectory_with_times(params, subject_id, times);
}

Trajectory simulate_trajectory_with_times(const GrowthParams& params,
                                          const std::string& subject_id,
                                          const std::vector<double>& times) {
  params.validate();
  for (size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0)
      throw std::invalid_argument("simulate_trajectory: times must be >= 0");
    if (i > 0 && times[i] <= times[i - 1])
      throw std::invalid_argument("simulate_trajectory: times must be strictly increasing");
  }
  Rng rng(params.seed);
  // Keep the draw sequence of simulate_trajectory so both entry points agree.
  for (size_t i = 0; i < static_cast<size_t>(params.num_timesteps); ++i) rng.uniform();
  const double cx0 = kImageSize / 2.0 + rng.uniform(-6.0, 6.0);
  const double cy0 = kImageSize / 2.0 + rng.uniform(-6.0, 6.0);

  Trajectory traj;
  traj.subject_id = subject_id;
  traj.observations.reserve(times.size());
  for (double t : times) {
    const double cx = cx0 + params.drift[0] * t;
    const double cy = cy0 + params.drift[1] * t;
    TimedObservation obs;
    obs.time = t;
    obs.segmentation = rasterize_lesion_at(params, t, cx, cy);
    obs.image = render_image(obs.segmentation, params.noise_sigma, rng);
    traj.observations.push_back(std::move(obs));
  }
  return traj;
}

Trajectory normalize_trajectory(const Trajectory& traj) {
  if (traj.observations.empty())
    throw std::invalid_argument("normalize_trajectory: empty trajectory");
  const int channels = traj.observations.front().image.dim(0);
  const int64_t per_channel = traj.observations.front().image.size() / channels;
  const int64_t n = static_cast<int64_t>(traj.observations.size()) * per_channel;

  Trajectory out = traj;
  // Fresh buffers so the input stays untouched.
  for (size_t k = 0; k < out.observations.size(); ++k)
    out.observations[k].image = traj.observations[k].image.clone();

  for (int c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (const auto& obs : traj.observations) {
      const double* p = obs.image.data() + c * per_channel;
      for (int64_t i = 0; i < per_channel; ++i) mean += p[i];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& obs : traj.observations) {
      const double* p = obs.image.data() + c * per_channel;
      for (int64_t i = 0; i < per_channel; ++i) {
        const double d = p[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(n);
    if (var <= 0.0)
      throw std::invalid_argument("normalize_trajectory: channel " + std::to_string(c) +
                                  " has zero variance (degenerate input)");
    const double inv_std = 1.0 / std::sqrt(var);
    for (auto& obs : out.observations) {
      double* p = obs.image.data() + c * per_channel;
      for (int64_t i = 0; i < per_channel; ++i) p[i] = (p[i] - mean) * inv_std;
    }
  }
  return out;
}

ContextTargetBatch sample_context_target(const Trajectory& traj, int num_context,
                                         SplitMode mode, Rng& rng) {
  if (num_context < 2 || num_context > 5)
    throw std::invalid_argument("sample_context_target: num_context must be in [2, 5], got " +
                                std::to_string(num_context));
  const int len = static_cast<int>(traj.length());
  if (len < num_context + 1)
    throw std::invalid_argument("sample_context_target: trajectory '" + traj.subject_id +
                                "' has " + std::to_string(len) +
                                " observations, needs at least " +
                                std::to_string(num_context + 1));

  ContextTargetBatch batch;
  if (mode == SplitMode::Train) {
    std::vector<int> idx(static_cast<size_t>(len));
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: first num_context+1 entries are a uniform subset.
    for (int i = 0; i <= num_context; ++i) {
      const int j = i + static_cast<int>(rng.below(len - i));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(num_context) + 1);
    std::sort(idx.begin(), idx.end());
    for (int i = 0; i < num_context; ++i)
      batch.context.push_back(traj.observations[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    batch.target.push_back(traj.observations[static_cast<size_t>(idx.back())]);
  } else {
    for (int i = 0; i < num_context; ++i)
      batch.context.push_back(traj.observations[static_cast<size_t>(i)]);
    const int j = num_context + static_cast<int>(rng.below(len - num_context));
    batch.target.push_back(traj.observations[static_cast<size_t>(j)]);
  }
  return batch;
}

AugmentDraw draw_augment(Rng& rng, double max_noise) {
  AugmentDraw d;
  d.hflip = rng.uniform() < 0.5;
  d.vflip = rng.uniform() < 0.5;
  d.rot_quarters = static_cast<int>(rng.below(4));
  d.noise_scale = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, max_noise);
  return d;
}

namespace {

template <typename T, typename Get, typename Set>
void spatial_transform(int h, int w, const AugmentDraw& d, Get get, Set set) {
  // Destination -> source index mapping: inverse of rot then flips.
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      int si = i, sj = j;
      if (d.vflip) si = h - 1 - si;
      if (d.hflip) sj = w - 1 - sj;
      for (int r = 0; r < (d.rot_quarters % 4 + 4) % 4; ++r) {
        // Undo one clockwise quarter turn.
        const int ti = si, tj = sj;
        si = tj;
        sj = h - 1 - ti;
      }
      set(i, j, get(si, sj));
    }
}

TimedObservation augment_observation(const TimedObservation& obs, const AugmentDraw& d,
                                     Rng& rng) {
  TimedObservation out;
  out.time = obs.time;
  const int c = obs.image.dim(0), h = obs.image.dim(1), w = obs.image.dim(2);
  out.image = Tensor({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    spatial_transform<double>(
        h, w, d, [&](int i, int j) { return obs.image.at(ci, i, j); },
        [&](int i, int j, double v) { out.image.at(ci, i, j) = v; });
  if (d.noise_scale > 0.0)
    for (int64_t i = 0; i < out.image.size(); ++i)
      out.image[i] += d.noise_scale * rng.normal();
  out.segmentation = SegGrid(h, w);
  spatial_transform<uint8_t>(
      h, w, d, [&](int i, int j) { return obs.segmentation.at(i, j); },
      [&](int i, int j, uint8_t v) { out.segmentation.at(i, j) = v; });
  return out;
}

}  // namespace

ContextTargetBatch augment_batch(const ContextTargetBatch& batch, const AugmentDraw& draw,
                                 Rng& rng) {
  ContextTargetBatch out;
  for (const auto& obs : batch.context) out.context.push_back(augment_observation(obs, draw, rng));
  for (const auto& obs : batch.target) out.target.push_back(augment_observation(obs, draw, rng));
  return out;
}

ContextTargetBatch augment_batch(const ContextTargetBatch& batch, Rng& rng, double max_noise) {
  const AugmentDraw d = draw_augment(rng, max_noise);
  return augment_batch(batch, d, rng);
}

GrowthParams draw_subject_params(uint64_t corpus_seed, int subject_index) {
  Rng rng(mix_seed(corpus_seed, 1000 + static_cast<uint64_t>(subject_index)));
  GrowthParams p;
  // Timestep count skews small, mean about 4.85 to match the corpus convention.
  p.num_timesteps = 3 + std::min<int>(10, static_cast<int>(std::floor(
                            -2.314 * std::log(1.0 - rng.uniform()))));
  p.growth_rate = rng.uniform(10.0, 22.0);
  p.anisotropy = {rng.uniform(0.75, 1.35), rng.uniform(0.75, 1.35)};
  p.core_onset = rng.uniform(0.15, 0.70);
  p.noise_sigma = rng.uniform(0.02, 0.10);
  p.drift = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
  p.seed = rng.next_u64();
  return p;
}

Corpus build_corpus(int n_subjects, uint64_t seed, double split_fraction) {
  if (n_subjects < 2) throw std::invalid_argument("build_corpus: need at least 2 subjects");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw std::invalid_argument("build_corpus: split_fraction must be in (0, 1)");

  std::vector<Trajectory> all(static_cast<size_t>(n_subjects));
  std::vector<GrowthParams> all_params(static_cast<size_t>(n_subjects));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_subjects; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%04d", i);
    GrowthParams p = draw_subject_params(seed, i);
    all_params[static_cast<size_t>(i)] = p;
    all[static_cast<size_t>(i)] = normalize_trajectory(simulate_trajectory(p, id));
  }

  std::vector<int> order(static_cast<size_t>(n_subjects));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(seed, 0x5011f7));
  split_rng.shuffle(order);
  int n_train = static_cast<int>(std::llround(split_fraction * n_subjects));
  n_train = std::clamp(n_train, 1, n_subjects - 1);

  // Keep each side sorted by subject id so downstream iteration is stable.
  std::sort(order.begin(), order.begin() + n_train);
  std::sort(order.begin() + n_train, order.end());

  Corpus corpus;
  for (int k = 0; k < n_subjects; ++k) {
    const size_t i = static_cast<size_t>(order[static_cast<size_t>(k)]);
    if (k < n_train) {
      corpus.train.push_back(std::move(all[i]));
      corpus.train_params.push_back(all_params[i]);
    } else {
      corpus.test.push_back(std::move(all[i]));
      corpus.test_params.push_back(all_params[i]);
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr char kArrayMagic[9] = "NPGSUBJ1";

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("corpus file truncated");
  return v;
}

json params_to_json(const GrowthParams& p) {
  return json{{"seed", p.seed},
              {"num_timesteps", p.num_timesteps},
              {"growth_rate", p.growth_rate},
              {"anisotropy", {p.anisotropy[0], p.anisotropy[1]}},
              {"core_onset", p.core_onset},
              {"noise_sigma", p.noise_sigma},
              {"drift", {p.drift[0], p.drift[1]}}};
}

GrowthParams params_from_json(const json& j) {
  GrowthParams p;
  p.seed = j.at("seed").get<uint64_t>();
  p.num_timesteps = j.at("num_timesteps").get<int>();
  p.growth_rate = j.at("growth_rate").get<double>();
  p.anisotropy = {j.at("anisotropy")[0].get<double>(), j.at("anisotropy")[1].get<double>()};
  p.core_onset = j.at("core_onset").get<double>();
  p.noise_sigma = j.at("noise_sigma").get<double>();
  p.drift = {j.at("drift")[0].get<double>(), j.at("drift")[1].get<double>()};
  return p;
}

}  // namespace

void save_subject(const std::string& dir, const Trajectory& traj, const GrowthParams& params) {
  fs::create_directories(dir);
  const std::string base = dir + "/" + traj.subject_id;

  std::ofstream os(base + ".arrays", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + base + ".arrays");
  os.write(kArrayMagic, 8);
  const auto& first = traj.observations.front();
  write_pod<uint32_t>(os, static_cast<uint32_t>(traj.observations.size()));
  write_pod<uint32_t>(os, static_cast<uint32_t>(first.image.dim(0)));
  write_pod<uint32_t>(os, static_cast<uint32_t>(first.image.dim(1)));
  write_pod<uint32_t>(os, static_cast<uint32_t>(first.image.dim(2)));
  for (const auto& obs : traj.observations) {
    write_pod<double>(os, obs.time);
    os.write(reinterpret_cast<const char*>(obs.image.data()),
             static_cast<std::streamsize>(sizeof(double) * obs.image.size()));
    os.write(reinterpret_cast<const char*>(obs.segmentation.v.data()),
             static_cast<std::streamsize>(obs.segmentation.v.size()));
  }
  os.close();

  json manifest;
  manifest["subject_id"] = traj.subject_id;
  manifest["format"] = "npgrow-subject-v1";
  manifest["num_timesteps"] = traj.observations.size();
  json times = json::array();
  for (const auto& obs : traj.observations) times.push_back(obs.time);
  manifest["times"] = times;
  manifest["image_shape"] = {first.image.dim(0), first.image.dim(1), first.image.dim(2)};
  manifest["normalized"] = true;
  manifest["generator"] = params_to_json(params);
  std::ofstream ms(base + ".json");
  ms << manifest.dump(2) << "\n";
}

Trajectory load_subject(const std::string& dir, const std::string& subject_id) {
  const std::string base = dir + "/" + subject_id;
  std::ifstream is(base + ".arrays", std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + base + ".arrays");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kArrayMagic, 8))
    throw std::runtime_error(base + ".arrays: not an npgrow subject file");
  const auto t = read_pod<uint32_t>(is);
  const auto c = read_pod<uint32_t>(is);
  const auto h = read_pod<uint32_t>(is);
  const auto w = read_pod<uint32_t>(is);

  Trajectory traj;
  traj.subject_id = subject_id;
  for (uint32_t k = 0; k < t; ++k) {
    TimedObservation obs;
    obs.time = read_pod<double>(is);
    obs.image = Tensor({static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
    is.read(reinterpret_cast<char*>(obs.image.data()),
            static_cast<std::streamsize>(sizeof(double) * obs.image.size()));
    obs.segmentation = SegGrid(static_cast<int>(h), static_cast<int>(w));
    is.read(reinterpret_cast<char*>(obs.segmentation.v.data()),
            static_cast<std::streamsize>(obs.segmentation.v.size()));
    if (!is) throw std::runtime_error(base + ".arrays: truncated");
    traj.observations.push_back(std::move(obs));
  }
  return traj;
}

void save_corpus(const std::string& dir, const Corpus& corpus) {
  fs::create_directories(dir);
  json split;
  split["format"] = "npgrow-corpus-v1";
  json train_ids = json::array(), test_ids = json::array();
  for (size_t i = 0; i < corpus.train.size(); ++i) {
    save_subject(dir, corpus.train[i],
                 i < corpus.train_params.size() ? corpus.train_params[i] : GrowthParams{});
    train_ids.push_back(corpus.train[i].subject_id);
  }
  for (size_t i = 0; i < corpus.test.size(); ++i) {
    save_subject(dir, corpus.test[i],
                 i < corpus.test_params.size() ? corpus.test_params[i] : GrowthParams{});
    test_ids.push_back(corpus.test[i].subject_id);
  }
  split["train"] = train_ids;
  split["test"] = test_ids;
  std::ofstream os(dir + "/split.json");
  os << split.dump(2) << "\n";
}

CorpusOnDisk read_split_manifest(const std::string& dir) {
  std::ifstream is(dir + "/split.json");
  if (!is) throw std::runtime_error("missing split manifest: " + dir + "/split.json");
  json j;
  is >> j;
  CorpusOnDisk d;
  for (const auto& id : j.at("train")) d.train_ids.push_back(id.get<std::string>());
  for (const auto& id : j.at("test")) d.test_ids.push_back(id.get<std::string>());
  return d;
}

std::vector<Trajectory> load_split(const std::string& dir, const std::string& which) {
  const CorpusOnDisk d = read_split_manifest(dir);
  const std::vector<std::string>* ids = nullptr;
  if (which == "train")
    ids = &d.train_ids;
  else if (which == "test")
    ids = &d.test_ids;
  else
    throw std::invalid_argument("load_split: which must be 'train' or 'test'");
  std::vector<Trajectory> out;
  out.reserve(ids->size());
  for (const auto& id : *ids) out.push_back(load_subject(dir, id));
  return out;
}

}  // namespace npgrow
