#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "npgrow/autodiff.hpp"
#include "npgrow/rng.hpp"
#include "npgrow/types.hpp"

namespace npgrow {

enum class AttentionMode { Spatiotemporal, Temporal };

// Architecture of the continuous-time growth model. Scales are the spatial
// resolutions of the encoder ladder, input_size/2 down to 4; every ladder
// scale must appear in exactly one of the two attention scale sets.
struct ModelConfig {
  int input_size = 64;
  int image_channels = 4;
  int num_classes = 4;
  int latent_dim = 128;
  int attention_heads = 8;
  int attention_key_dim = 16;
  std::vector<int> spatiotemporal_scales = {4, 8};
  std::vector<int> temporal_scales = {16, 32};
  std::vector<int> encoder_channel_widths = {32, 64, 128, 256};
  double sigma_floor = 1e-3;
  bool use_attention_skips = true;
  // Uniformly shrinks channel widths and the latent for desk-scale runs.
  double width_scale = 1.0;
  // Spatio-temporal attention scores take Theta(n * s^4) memory, so scales
  // above 8 are rejected unless explicitly allowed.
  bool allow_large_spatiotemporal = false;

  void validate() const;
  int num_levels() const;
  std::vector<int> scales() const;
  int scale_at_level(int level) const { return input_size >> (level + 1); }
  int level_of_scale(int scale) const;
  int width_at_level(int level) const;
  int width_at_scale(int scale) const { return width_at_level(level_of_scale(scale)); }
  int latent() const;
  int encoder_input_channels() const { return image_channels + num_classes + 3; }
  AttentionMode mode_for_scale(int scale) const;
  // Value dimension per attention head at a scale.
  int value_dim_at_scale(int scale) const;

  bool operator==(const ModelConfig& o) const;
  bool operator!=(const ModelConfig& o) const { return !(*this == o); }
};

struct ParamStore {
  struct Entry {
    std::string name;
    Tensor value;
  };
  std::vector<Entry> entries;

  int add(const std::string& name, Tensor value);
  int index_of(const std::string& name) const;
  Tensor& value(int index) { return entries[static_cast<size_t>(index)].value; }
  const Tensor& value(int index) const { return entries[static_cast<size_t>(index)].value; }
  Tensor& value(const std::string& name);
  size_t size() const { return entries.size(); }
  int64_t num_scalars() const;
};

// Hierarchical multi-scale Neural Process: shared per-observation encoder,
// summed global Gaussian, attention-aggregated skip grids, and a
// (z, t)-conditioned decoder.
class GrowthModel {
 public:
  explicit GrowthModel(ModelConfig config, uint64_t init_seed = 0x1234);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int64_t num_parameters() const { return params_.num_scalars(); }

  struct EncodedObservation {
    std::vector<Var> grids;  // aligned with config().scales()
    Var mu = nullptr;
    Var sigma = nullptr;
    double time = 0.0;
  };

  EncodedObservation encode_observation(Tape& tape, const TimedObservation& obs,
                                        bool with_grad) const;

  // Sums per-observation (mu, sigma) into the global Gaussian.
  static std::pair<Var, Var> aggregate_global(Tape& tape,
                                              const std::vector<EncodedObservation>& reprs);

  // Per-scale attention keys/values, shared across query times.
  struct AttnBank {
    struct PerScale {
      int scale = 0;
      AttentionMode mode = AttentionMode::Temporal;
      std::vector<double> times;
      std::vector<Var> k_heads;                  // spatio-temporal: (n*s*s, d)
      std::vector<Var> v_heads;                  // spatio-temporal: (n*s*s, dv)
      std::vector<std::vector<Var>> k_heads_ctx; // temporal: [head][ctx] (s*s, d)
      std::vector<std::vector<Var>> v_heads_ctx;
    };
    std::vector<PerScale> scales;
    const PerScale& at_scale(int scale) const;
  };

  struct AttnBankValues {
    struct PerScale {
      int scale = 0;
      AttentionMode mode = AttentionMode::Temporal;
      std::vector<double> times;
      std::vector<Tensor> k_heads, v_heads;
      std::vector<std::vector<Tensor>> k_heads_ctx, v_heads_ctx;
    };
    std::vector<PerScale> scales;
  };

  AttnBank build_attn_bank(Tape& tape, const std::vector<EncodedObservation>& reprs) const;
  static AttnBankValues snapshot_bank(const AttnBank& bank);
  AttnBank load_bank(Tape& tape, const AttnBankValues& values) const;

  // Attention-aggregated skip grid at one scale for one query time.
  // out_head_weights, when given, receives each head's softmax matrix.
  Var attention_skip(Tape& tape, const AttnBank& bank, int scale, double t_target,
                     std::vector<Tensor>* out_head_weights = nullptr) const;

  // Spec-level aggregation op on explicitly provided context grids.
  Var attention_aggregate(Tape& tape, int scale, AttentionMode mode,
                          const std::vector<Tensor>& context_grids,
                          const std::vector<double>& context_times, double t_target,
                          std::vector<Tensor>* out_head_weights = nullptr) const;

  // Decodes logits (num_classes, S, S) from the latent and a query time.
  // bank may be null only when attention skips are disabled.
  Var decode(Tape& tape, Var z, double t_target, const AttnBank* bank) const;

  // ---- Value-level convenience API (fresh internal tapes, no gradients) ----
  GaussianLatent predict_prior(const std::vector<TimedObservation>& context) const;
  GaussianLatent predict_posterior(const std::vector<TimedObservation>& all_points) const;
  Tensor sample_latent(const GaussianLatent& g, Rng& rng) const;
  std::vector<Tensor> sample_trajectory(const std::vector<TimedObservation>& context,
                                        const std::vector<double>& query_times,
                                        const Tensor* z, Rng& rng) const;

 private:
  void build_parameters(uint64_t init_seed);
  Var param_leaf(Tape& tape, int index, bool with_grad) const;
  Var encoder_input(Tape& tape, const TimedObservation& obs) const;
  AttnBank::PerScale build_scale_bank(Tape& tape, int scale_px, const std::vector<Var>& grids,
                                      const std::vector<double>& times, bool with_grad) const;

  ModelConfig cfg_;
  ParamStore params_;

  struct ConvRef {
    int w = -1, b = -1;
  };
  std::vector<ConvRef> enc_convs_;
  int enc_norm_gamma_ = -1, enc_norm_beta_ = -1;
  int head_mu_w_ = -1, head_mu_b_ = -1, head_sigma_w_ = -1, head_sigma_b_ = -1;
  int seed_w_ = -1, seed_b_ = -1;
  std::vector<ConvRef> dec_convs_;
  ConvRef dec_final_a_, dec_final_b_;

  struct HeadRef {
    int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1;
  };
  struct AttnRef {
    std::vector<HeadRef> heads;
    int wo = -1, bo = -1;
  };
  std::map<int, AttnRef> attn_;  // keyed by scale
};

// Caches context encodings so many (z, t) decodes stay cheap; used by
// evaluation and the sampling CLI.
class DecodeSession {
 public:
  DecodeSession(const GrowthModel& model, const std::vector<TimedObservation>& context);

  const GaussianLatent& prior() const { return prior_; }
  Tensor decode(const Tensor& z, double t_target) const;
  SegGrid decode_labels(const Tensor& z, double t_target) const;

 private:
  const GrowthModel& model_;
  GaussianLatent prior_;
  GrowthModel::AttnBankValues bank_;
  bool has_bank_ = false;
};

SegGrid argmax_labels(const Tensor& logits);

}  // namespace npgrow
