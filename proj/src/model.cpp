#include "npgrow/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace npgrow {

namespace {

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

int scaled_width(int base, double factor) {
  return std::max(4, static_cast<int>(std::lround(base * factor)));
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

int ModelConfig::num_levels() const {
  int levels = 0;
  for (int s = input_size / 2; s >= 4; s /= 2) ++levels;
  return levels;
}

std::vector<int> ModelConfig::scales() const {
  std::vector<int> out;
  for (int s = input_size / 2; s >= 4; s /= 2) out.push_back(s);
  return out;
}

int ModelConfig::level_of_scale(int scale) const {
  const auto ss = scales();
  for (size_t i = 0; i < ss.size(); ++i)
    if (ss[i] == scale) return static_cast<int>(i);
  throw std::invalid_argument("scale " + std::to_string(scale) + " is not on the ladder of input_size " +
                              std::to_string(input_size));
}

int ModelConfig::width_at_level(int level) const {
  return scaled_width(encoder_channel_widths.at(static_cast<size_t>(level)), width_scale);
}

int ModelConfig::latent() const { return std::max(8, static_cast<int>(std::lround(latent_dim * width_scale))); }

AttentionMode ModelConfig::mode_for_scale(int scale) const {
  const bool st = contains(spatiotemporal_scales, scale);
  const bool tp = contains(temporal_scales, scale);
  if (st == tp)
    throw std::invalid_argument("scale " + std::to_string(scale) +
                                " must belong to exactly one attention scale set");
  return st ? AttentionMode::Spatiotemporal : AttentionMode::Temporal;
}

int ModelConfig::value_dim_at_scale(int scale) const {
  return std::max(1, width_at_scale(scale) / attention_heads);
}

void ModelConfig::validate() const {
  if (input_size < 8 || (input_size & (input_size - 1)) != 0)
    throw std::invalid_argument("ModelConfig: input_size must be a power of two >= 8");
  if (latent_dim <= 0 || attention_heads <= 0 || attention_key_dim <= 0)
    throw std::invalid_argument("ModelConfig: dimensions must be positive");
  if (num_classes < 2 || image_channels < 1)
    throw std::invalid_argument("ModelConfig: bad channel counts");
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("ModelConfig: sigma_floor must be positive");
  if (!(width_scale > 0.0)) throw std::invalid_argument("ModelConfig: width_scale must be positive");
  for (int s : spatiotemporal_scales)
    if (contains(temporal_scales, s))
      throw std::invalid_argument("ModelConfig: scale " + std::to_string(s) +
                                  " is in both attention scale sets");
  for (int s : spatiotemporal_scales)
    if (s > 8 && !allow_large_spatiotemporal)
      throw std::invalid_argument(
          "ModelConfig: spatio-temporal attention above scale 8 needs "
          "allow_large_spatiotemporal (score memory grows as n*s^4)");
  const auto ss = scales();
  for (int s : ss) {
    if (s > 32)
      throw std::invalid_argument("ModelConfig: skip scale " + std::to_string(s) + " exceeds 32");
    mode_for_scale(s);  // throws when unassigned or doubly assigned
  }
  if (encoder_channel_widths.size() != static_cast<size_t>(num_levels()))
    throw std::invalid_argument("ModelConfig: encoder_channel_widths needs " +
                                std::to_string(num_levels()) + " entries for input_size " +
                                std::to_string(input_size));
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  return input_size == o.input_size && image_channels == o.image_channels &&
         num_classes == o.num_classes && latent_dim == o.latent_dim &&
         attention_heads == o.attention_heads && attention_key_dim == o.attention_key_dim &&
         spatiotemporal_scales == o.spatiotemporal_scales &&
         temporal_scales == o.temporal_scales &&
         encoder_channel_widths == o.encoder_channel_widths && sigma_floor == o.sigma_floor &&
         use_attention_skips == o.use_attention_skips && width_scale == o.width_scale &&
         allow_large_spatiotemporal == o.allow_large_spatiotemporal;
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::add(const std::string& name, Tensor value) {
  if (index_of(name) >= 0) throw std::invalid_argument("duplicate parameter: " + name);
  entries.push_back({name, std::move(value)});
  return static_cast<int>(entries.size()) - 1;
}

int ParamStore::index_of(const std::string& name) const {
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return static_cast<int>(i);
  return -1;
}

Tensor& ParamStore::value(const std::string& name) {
  const int i = index_of(name);
  if (i < 0) throw std::invalid_argument("unknown parameter: " + name);
  return entries[static_cast<size_t>(i)].value;
}

int64_t ParamStore::num_scalars() const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// GrowthModel construction
// ---------------------------------------------------------------------------

GrowthModel::GrowthModel(ModelConfig config, uint64_t init_seed) : cfg_(std::move(config)) {
  cfg_.validate();
  build_parameters(init_seed);
}

namespace {

Tensor init_normal(Rng& rng, Shape shape, double std) {
  Tensor t(std::move(shape));
  rng.fill_normal(t, 0.0, std);
  return t;
}

Tensor conv_init(Rng& rng, int cout, int cin, int k) {
  const double std = std::sqrt(2.0 / (cin * k * k));
  return init_normal(rng, {cout, cin, k, k}, std);
}

Tensor linear_init(Rng& rng, int out, int in) {
  const double std = std::sqrt(1.0 / in);
  return init_normal(rng, {out, in}, std);
}

}  // namespace

void GrowthModel::build_parameters(uint64_t init_seed) {
  Rng rng(mix_seed(init_seed, 0xa11c));
  const auto scales = cfg_.scales();
  const int levels = cfg_.num_levels();
  const int latent = cfg_.latent();

  int cin = cfg_.encoder_input_channels();
  for (int l = 0; l < levels; ++l) {
    const int cout = cfg_.width_at_level(l);
    ConvRef ref;
    ref.w = params_.add("enc.l" + std::to_string(l) + ".w", conv_init(rng, cout, cin, 3));
    ref.b = params_.add("enc.l" + std::to_string(l) + ".b", Tensor({cout}));
    enc_convs_.push_back(ref);
    cin = cout;
  }
  enc_norm_gamma_ = params_.add("enc.norm.gamma", Tensor::full({cfg_.width_at_level(0)}, 1.0));
  enc_norm_beta_ = params_.add("enc.norm.beta", Tensor({cfg_.width_at_level(0)}));

  const int flat = cfg_.width_at_level(levels - 1) * 4 * 4;
  head_mu_w_ = params_.add("enc.head.mu.w", linear_init(rng, latent, flat));
  head_mu_b_ = params_.add("enc.head.mu.b", Tensor({latent}));
  head_sigma_w_ = params_.add("enc.head.sigma.w", linear_init(rng, latent, flat));
  head_sigma_b_ = params_.add("enc.head.sigma.b", Tensor({latent}));

  if (cfg_.use_attention_skips) {
    for (int s : scales) {
      const AttentionMode mode = cfg_.mode_for_scale(s);
      const int c = cfg_.width_at_scale(s);
      const int d = cfg_.attention_key_dim;
      const int dv = cfg_.value_dim_at_scale(s);
      const int qin = mode == AttentionMode::Spatiotemporal ? 3 : 1;
      const int kin = qin + c;
      AttnRef ref;
      for (int h = 0; h < cfg_.attention_heads; ++h) {
        const std::string base = "attn.s" + std::to_string(s) + ".h" + std::to_string(h);
        HeadRef hr;
        hr.wq = params_.add(base + ".wq", linear_init(rng, d, qin));
        hr.bq = params_.add(base + ".bq", Tensor({d}));
        hr.wk = params_.add(base + ".wk", linear_init(rng, d, kin));
        hr.bk = params_.add(base + ".bk", Tensor({d}));
        hr.wv = params_.add(base + ".wv", linear_init(rng, dv, c));
        hr.bv = params_.add(base + ".bv", Tensor({dv}));
        ref.heads.push_back(hr);
      }
      ref.wo = params_.add("attn.s" + std::to_string(s) + ".wo",
                           linear_init(rng, c, cfg_.attention_heads * dv));
      ref.bo = params_.add("attn.s" + std::to_string(s) + ".bo", Tensor({c}));
      attn_[s] = ref;
    }
  }

  const int seed_ch = cfg_.width_at_level(levels - 1);
  seed_w_ = params_.add("dec.seed.w", linear_init(rng, seed_ch * 16, latent + 1));
  seed_b_ = params_.add("dec.seed.b", Tensor({seed_ch * 16}));

  int prev = seed_ch;
  for (int l = levels - 1; l >= 0; --l) {
    const int c = cfg_.width_at_level(l);
    const int in_ch = prev + (cfg_.use_attention_skips ? c : 0);
    ConvRef ref;
    ref.w = params_.add("dec.l" + std::to_string(l) + ".w", conv_init(rng, c, in_ch, 3));
    ref.b = params_.add("dec.l" + std::to_string(l) + ".b", Tensor({c}));
    dec_convs_.push_back(ref);
    prev = c;
  }
  const int c0 = cfg_.width_at_level(0);
  dec_final_a_.w = params_.add("dec.final.a.w", conv_init(rng, c0, prev, 3));
  dec_final_a_.b = params_.add("dec.final.a.b", Tensor({c0}));
  dec_final_b_.w = params_.add("dec.final.b.w", conv_init(rng, cfg_.num_classes, c0, 3));
  dec_final_b_.b = params_.add("dec.final.b.b", Tensor({cfg_.num_classes}));
}

Var GrowthModel::param_leaf(Tape& tape, int index, bool with_grad) const {
  return tape.leaf(params_.value(index), with_grad, with_grad ? index : -1);
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Var GrowthModel::encoder_input(Tape& tape, const TimedObservation& obs) const {
  const int s = cfg_.input_size;
  if (obs.image.ndim() != 3 || obs.image.dim(0) != cfg_.image_channels ||
      obs.image.dim(1) != s || obs.image.dim(2) != s)
    throw std::invalid_argument("encode_observation: image must be (" +
                                std::to_string(cfg_.image_channels) + ", " + std::to_string(s) +
                                ", " + std::to_string(s) + "), got " + shape_str(obs.image.shape()));
  if (obs.segmentation.h != s || obs.segmentation.w != s)
    throw std::invalid_argument("encode_observation: segmentation grid mismatch");
  if (!obs.image.all_finite() || !std::isfinite(obs.time))
    throw std::invalid_argument("encode_observation: non-finite input");

  Tensor in({cfg_.encoder_input_channels(), s, s});
  const int64_t plane = static_cast<int64_t>(s) * s;
  std::copy(obs.image.data(), obs.image.data() + obs.image.size(), in.data());
  double* seg_planes = in.data() + cfg_.image_channels * plane;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const uint8_t label = obs.segmentation.at(i, j);
      if (label >= cfg_.num_classes)
        throw std::invalid_argument("encode_observation: label " + std::to_string(label) +
                                    " out of range");
      seg_planes[label * plane + i * s + j] = 1.0;
    }
  double* time_plane = seg_planes + cfg_.num_classes * plane;
  std::fill(time_plane, time_plane + plane, obs.time);
  double* xc = time_plane + plane;
  double* yc = xc + plane;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      xc[i * s + j] = (j + 0.5) / s - 0.5;
      yc[i * s + j] = (i + 0.5) / s - 0.5;
    }
  return tape.constant(std::move(in));
}

GrowthModel::EncodedObservation GrowthModel::encode_observation(Tape& tape,
                                                                const TimedObservation& obs,
                                                                bool with_grad) const {
  EncodedObservation out;
  out.time = obs.time;
  Var x = encoder_input(tape, obs);
  for (size_t l = 0; l < enc_convs_.size(); ++l) {
    x = conv2d(tape, x, param_leaf(tape, enc_convs_[l].w, with_grad),
               param_leaf(tape, enc_convs_[l].b, with_grad), /*stride=*/2, /*pad=*/1);
    if (l == 0)
      x = instance_norm(tape, x, param_leaf(tape, enc_norm_gamma_, with_grad),
                        param_leaf(tape, enc_norm_beta_, with_grad));
    x = silu(tape, x);
    out.grids.push_back(x);
  }
  Var flat = reshape(tape, x, {1, static_cast<int>(x->val.size())});
  Var mu = linear(tape, flat, param_leaf(tape, head_mu_w_, with_grad),
                  param_leaf(tape, head_mu_b_, with_grad));
  Var raw = linear(tape, flat, param_leaf(tape, head_sigma_w_, with_grad),
                   param_leaf(tape, head_sigma_b_, with_grad));
  const int latent = cfg_.latent();
  out.mu = reshape(tape, mu, {latent});
  out.sigma = add_scalar(tape, softplus(tape, reshape(tape, raw, {latent})), cfg_.sigma_floor);
  return out;
}

std::pair<Var, Var> GrowthModel::aggregate_global(Tape& tape,
                                                  const std::vector<EncodedObservation>& reprs) {
  if (reprs.empty()) throw std::invalid_argument("aggregate_global: empty context");
  Var mu = reprs[0].mu;
  Var sigma = reprs[0].sigma;
  for (size_t i = 1; i < reprs.size(); ++i) {
    mu = add(tape, mu, reprs[i].mu);
    sigma = add(tape, sigma, reprs[i].sigma);
  }
  return {mu, sigma};
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

namespace {

// Column of pixel coordinates in [-0.5, 0.5] at the given scale; axis 0 is x.
Tensor coord_column(int scale, int axis) {
  Tensor t({scale * scale, 1});
  for (int i = 0; i < scale; ++i)
    for (int j = 0; j < scale; ++j)
      t[i * scale + j] = ((axis == 0 ? j : i) + 0.5) / scale - 0.5;
  return t;
}

}  // namespace

const GrowthModel::AttnBank::PerScale& GrowthModel::AttnBank::at_scale(int scale) const {
  for (const auto& ps : scales)
    if (ps.scale == scale) return ps;
  throw std::invalid_argument("attention bank has no scale " + std::to_string(scale));
}

GrowthModel::AttnBank::PerScale GrowthModel::build_scale_bank(
    Tape& tape, int scale_px, const std::vector<Var>& grids, const std::vector<double>& times,
    bool with_grad) const {
  const AttnRef& ref = attn_.at(scale_px);
  const int s = scale_px;
  AttnBank::PerScale ps;
  ps.scale = s;
  ps.mode = cfg_.mode_for_scale(s);
  ps.times = times;

  std::vector<Var> rows_per_ctx;
  for (Var g : grids) rows_per_ctx.push_back(grid_to_rows(tape, g));

  if (ps.mode == AttentionMode::Spatiotemporal) {
    // Key inputs: (t_c, x, y, features) stacked over every context pixel.
    std::vector<Var> kin_parts, val_parts;
    const Tensor xcol = coord_column(s, 0), ycol = coord_column(s, 1);
    for (size_t c = 0; c < grids.size(); ++c) {
      Var tcol = tape.constant(Tensor::full({s * s, 1}, times[c]));
      kin_parts.push_back(
          concat_cols(tape, {tcol, tape.constant(xcol), tape.constant(ycol), rows_per_ctx[c]}));
      val_parts.push_back(rows_per_ctx[c]);
    }
    Var kin = concat_rows(tape, kin_parts);
    Var vin = concat_rows(tape, val_parts);
    for (const HeadRef& h : ref.heads) {
      ps.k_heads.push_back(
          linear(tape, kin, param_leaf(tape, h.wk, with_grad), param_leaf(tape, h.bk, with_grad)));
      ps.v_heads.push_back(
          linear(tape, vin, param_leaf(tape, h.wv, with_grad), param_leaf(tape, h.bv, with_grad)));
    }
  } else {
    // Keys per context timestep: (t_c, features at this pixel).
    ps.k_heads_ctx.resize(static_cast<size_t>(cfg_.attention_heads));
    ps.v_heads_ctx.resize(static_cast<size_t>(cfg_.attention_heads));
    for (size_t c = 0; c < grids.size(); ++c) {
      Var tcol = tape.constant(Tensor::full({s * s, 1}, times[c]));
      Var kin = concat_cols(tape, {tcol, rows_per_ctx[c]});
      for (int h = 0; h < cfg_.attention_heads; ++h) {
        const HeadRef& hr = ref.heads[static_cast<size_t>(h)];
        ps.k_heads_ctx[static_cast<size_t>(h)].push_back(linear(
            tape, kin, param_leaf(tape, hr.wk, with_grad), param_leaf(tape, hr.bk, with_grad)));
        ps.v_heads_ctx[static_cast<size_t>(h)].push_back(
            linear(tape, rows_per_ctx[c], param_leaf(tape, hr.wv, with_grad),
                   param_leaf(tape, hr.bv, with_grad)));
      }
    }
  }
  return ps;
}

GrowthModel::AttnBank GrowthModel::build_attn_bank(
    Tape& tape, const std::vector<EncodedObservation>& reprs) const {
  if (!cfg_.use_attention_skips)
    throw std::invalid_argument("build_attn_bank: attention skips are disabled");
  if (reprs.empty()) throw std::invalid_argument("build_attn_bank: empty context");
  const bool with_grad = reprs[0].mu->need_grad || reprs[0].grids[0]->need_grad;

  AttnBank bank;
  const auto scales = cfg_.scales();
  for (size_t level = 0; level < scales.size(); ++level) {
    std::vector<Var> grids;
    std::vector<double> times;
    for (const auto& r : reprs) {
      grids.push_back(r.grids[level]);
      times.push_back(r.time);
    }
    bank.scales.push_back(build_scale_bank(tape, scales[level], grids, times, with_grad));
  }
  return bank;
}

GrowthModel::AttnBankValues GrowthModel::snapshot_bank(const AttnBank& bank) {
  AttnBankValues out;
  for (const auto& ps : bank.scales) {
    AttnBankValues::PerScale vs;
    vs.scale = ps.scale;
    vs.mode = ps.mode;
    vs.times = ps.times;
    for (Var k : ps.k_heads) vs.k_heads.push_back(k->val.clone());
    for (Var v : ps.v_heads) vs.v_heads.push_back(v->val.clone());
    vs.k_heads_ctx.resize(ps.k_heads_ctx.size());
    vs.v_heads_ctx.resize(ps.v_heads_ctx.size());
    for (size_t h = 0; h < ps.k_heads_ctx.size(); ++h) {
      for (Var k : ps.k_heads_ctx[h]) vs.k_heads_ctx[h].push_back(k->val.clone());
      for (Var v : ps.v_heads_ctx[h]) vs.v_heads_ctx[h].push_back(v->val.clone());
    }
    out.scales.push_back(std::move(vs));
  }
  return out;
}

GrowthModel::AttnBank GrowthModel::load_bank(Tape& tape, const AttnBankValues& values) const {
  AttnBank bank;
  for (const auto& vs : values.scales) {
    AttnBank::PerScale ps;
    ps.scale = vs.scale;
    ps.mode = vs.mode;
    ps.times = vs.times;
    for (const Tensor& k : vs.k_heads) ps.k_heads.push_back(tape.constant(k));
    for (const Tensor& v : vs.v_heads) ps.v_heads.push_back(tape.constant(v));
    ps.k_heads_ctx.resize(vs.k_heads_ctx.size());
    ps.v_heads_ctx.resize(vs.v_heads_ctx.size());
    for (size_t h = 0; h < vs.k_heads_ctx.size(); ++h) {
      for (const Tensor& k : vs.k_heads_ctx[h]) ps.k_heads_ctx[h].push_back(tape.constant(k));
      for (const Tensor& v : vs.v_heads_ctx[h]) ps.v_heads_ctx[h].push_back(tape.constant(v));
    }
    bank.scales.push_back(std::move(ps));
  }
  return bank;
}

Var GrowthModel::attention_skip(Tape& tape, const AttnBank& bank, int scale, double t_target,
                                std::vector<Tensor>* out_head_weights) const {
  const auto& ps = bank.at_scale(scale);
  const AttnRef& ref = attn_.at(scale);
  const int s = scale;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.attention_key_dim));
  const bool with_grad =
      (!ps.k_heads.empty() && ps.k_heads[0]->need_grad) ||
      (!ps.k_heads_ctx.empty() && !ps.k_heads_ctx[0].empty() && ps.k_heads_ctx[0][0]->need_grad);

  std::vector<Var> head_outs;
  if (ps.mode == AttentionMode::Spatiotemporal) {
    // Queries: (t_target, x, y) at every pixel of the scale grid.
    Tensor qin({s * s, 3});
    const Tensor xcol = coord_column(s, 0), ycol = coord_column(s, 1);
    for (int p = 0; p < s * s; ++p) {
      qin.at(p, 0) = t_target;
      qin.at(p, 1) = xcol[p];
      qin.at(p, 2) = ycol[p];
    }
    Var q_in = tape.constant(std::move(qin));
    for (int h = 0; h < cfg_.attention_heads; ++h) {
      const HeadRef& hr = ref.heads[static_cast<size_t>(h)];
      Var q = linear(tape, q_in, param_leaf(tape, hr.wq, with_grad),
                     param_leaf(tape, hr.bq, with_grad));
      Var scores = scale(tape, matmul_nt(tape, q, ps.k_heads[static_cast<size_t>(h)]), inv_sqrt_d);
      Var attn = softmax_rows(tape, scores);
      if (out_head_weights) out_head_weights->push_back(attn->val.clone());
      head_outs.push_back(matmul(tape, attn, ps.v_heads[static_cast<size_t>(h)]));
    }
  } else {
    Var q_in = tape.constant(Tensor::full({1, 1}, t_target));
    for (int h = 0; h < cfg_.attention_heads; ++h) {
      const HeadRef& hr = ref.heads[static_cast<size_t>(h)];
      Var q = linear(tape, q_in, param_leaf(tape, hr.wq, with_grad),
                     param_leaf(tape, hr.bq, with_grad));  // (1, d)
      std::vector<Var> score_cols;
      for (Var k_ctx : ps.k_heads_ctx[static_cast<size_t>(h)])
        score_cols.push_back(matmul_nt(tape, k_ctx, q));  // (s*s, 1)
      Var scores = scale(tape, concat_cols(tape, score_cols), inv_sqrt_d);
      Var attn = softmax_rows(tape, scores);  // (s*s, n)
      if (out_head_weights) out_head_weights->push_back(attn->val.clone());
      head_outs.push_back(weighted_sum_rows(tape, attn, ps.v_heads_ctx[static_cast<size_t>(h)]));
    }
  }
  Var mixed = linear(tape, concat_cols(tape, head_outs), param_leaf(tape, ref.wo, with_grad),
                     param_leaf(tape, ref.bo, with_grad));
  return rows_to_grid(tape, mixed, s, s);
}

Var GrowthModel::attention_aggregate(Tape& tape, int scale, AttentionMode mode,
                                     const std::vector<Tensor>& context_grids,
                                     const std::vector<double>& context_times, double t_target,
                                     std::vector<Tensor>* out_head_weights) const {
  if (!cfg_.use_attention_skips)
    throw std::invalid_argument("attention_aggregate: attention skips are disabled");
  if (cfg_.mode_for_scale(scale) != mode)
    throw std::invalid_argument("attention_aggregate: scale " + std::to_string(scale) +
                                " is not configured for the requested mode");
  if (context_grids.empty() || context_grids.size() != context_times.size())
    throw std::invalid_argument("attention_aggregate: need matching non-empty grids/times");

  const int c = cfg_.width_at_scale(scale);
  std::vector<Var> grids;
  for (size_t i = 0; i < context_grids.size(); ++i) {
    const Tensor& g = context_grids[i];
    if (g.ndim() != 3 || g.dim(0) != c || g.dim(1) != scale || g.dim(2) != scale)
      throw std::invalid_argument("attention_aggregate: grid " + std::to_string(i) +
                                  " must be (" + std::to_string(c) + ", " + std::to_string(scale) +
                                  ", " + std::to_string(scale) + ")");
    grids.push_back(tape.constant(g));
  }

  AttnBank bank;
  bank.scales.push_back(build_scale_bank(tape, scale, grids, context_times, false));
  return attention_skip(tape, bank, scale, t_target, out_head_weights);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Var GrowthModel::decode(Tape& tape, Var z, double t_target, const AttnBank* bank) const {
  if (!z->val.all_finite()) throw std::invalid_argument("decode: non-finite latent");
  if (cfg_.use_attention_skips && bank == nullptr)
    throw std::invalid_argument("decode: attention skips enabled but no bank given");
  const bool with_grad = z->need_grad;
  const int latent = cfg_.latent();
  if (z->val.size() != latent)
    throw std::invalid_argument("decode: latent size mismatch");

  Var zrow = reshape(tape, z, {1, latent});
  Var trow = tape.constant(Tensor::full({1, 1}, t_target));
  Var seed_in = concat_cols(tape, {zrow, trow});
  Var seed = linear(tape, seed_in, param_leaf(tape, seed_w_, with_grad),
                    param_leaf(tape, seed_b_, with_grad));
  const int levels = cfg_.num_levels();
  const int seed_ch = cfg_.width_at_level(levels - 1);
  Var x = reshape(tape, seed, {seed_ch, 4, 4});

  const auto scales = cfg_.scales();
  for (int l = levels - 1; l >= 0; --l) {
    const int s = scales[static_cast<size_t>(l)];
    if (cfg_.use_attention_skips) {
      Var skip = attention_skip(tape, *bank, s, t_target);
      x = concat_channels(tape, {x, skip});
    }
    const ConvRef& ref = dec_convs_[static_cast<size_t>(levels - 1 - l)];
    x = silu(tape, conv2d(tape, x, param_leaf(tape, ref.w, with_grad),
                          param_leaf(tape, ref.b, with_grad), 1, 1));
    x = upsample2x(tape, x);
  }
  x = silu(tape, conv2d(tape, x, param_leaf(tape, dec_final_a_.w, with_grad),
                        param_leaf(tape, dec_final_a_.b, with_grad), 1, 1));
  x = conv2d(tape, x, param_leaf(tape, dec_final_b_.w, with_grad),
             param_leaf(tape, dec_final_b_.b, with_grad), 1, 1);
  return x;
}

// ---------------------------------------------------------------------------
// Value-level API
// ---------------------------------------------------------------------------

GaussianLatent GrowthModel::predict_prior(const std::vector<TimedObservation>& context) const {
  if (context.empty()) throw std::invalid_argument("predict_prior: empty context");
  Tape tape;
  std::vector<EncodedObservation> reprs;
  for (const auto& obs : context) reprs.push_back(encode_observation(tape, obs, false));
  auto [mu, sigma] = aggregate_global(tape, reprs);
  return {mu->val.clone(), sigma->val.clone()};
}

GaussianLatent GrowthModel::predict_posterior(
    const std::vector<TimedObservation>& all_points) const {
  if (all_points.empty()) throw std::invalid_argument("predict_posterior: empty point set");
  return predict_prior(all_points);
}

Tensor GrowthModel::sample_latent(const GaussianLatent& g, Rng& rng) const {
  Tensor z = g.mu.clone();
  for (int64_t i = 0; i < z.size(); ++i) z[i] += g.sigma[i] * rng.normal();
  return z;
}

std::vector<Tensor> GrowthModel::sample_trajectory(const std::vector<TimedObservation>& context,
                                                   const std::vector<double>& query_times,
                                                   const Tensor* z, Rng& rng) const {
  for (double t : query_times)
    if (!std::isfinite(t)) throw std::invalid_argument("sample_trajectory: non-finite query time");
  DecodeSession session(*this, context);
  Tensor latent = z ? z->clone() : sample_latent(session.prior(), rng);
  std::vector<Tensor> out;
  out.reserve(query_times.size());
  for (double t : query_times) out.push_back(session.decode(latent, t));
  return out;
}

SegGrid argmax_labels(const Tensor& logits) {
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  SegGrid seg(h, w);
  for (int64_t p = 0; p < hw; ++p) {
    int best = 0;
    double bestv = logits[p];
    for (int ci = 1; ci < c; ++ci)
      if (logits[ci * hw + p] > bestv) {
        bestv = logits[ci * hw + p];
        best = ci;
      }
    seg.v[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
  }
  return seg;
}

DecodeSession::DecodeSession(const GrowthModel& model,
                             const std::vector<TimedObservation>& context)
    : model_(model) {
  if (context.empty()) throw std::invalid_argument("DecodeSession: empty context");
  Tape tape;
  std::vector<GrowthModel::EncodedObservation> reprs;
  for (const auto& obs : context) reprs.push_back(model_.encode_observation(tape, obs, false));
  auto [mu, sigma] = GrowthModel::aggregate_global(tape, reprs);
  prior_ = {mu->val.clone(), sigma->val.clone()};
  if (model_.config().use_attention_skips) {
    bank_ = GrowthModel::snapshot_bank(model_.build_attn_bank(tape, reprs));
    has_bank_ = true;
  }
}

Tensor DecodeSession::decode(const Tensor& z, double t_target) const {
  Tape tape;
  Var zv = tape.constant(z);
  if (has_bank_) {
    GrowthModel::AttnBank bank = model_.load_bank(tape, bank_);
    return model_.decode(tape, zv, t_target, &bank)->val.clone();
  }
  return model_.decode(tape, zv, t_target, nullptr)->val.clone();
}

SegGrid DecodeSession::decode_labels(const Tensor& z, double t_target) const {
  return argmax_labels(decode(z, t_target));
}

}  // namespace npgrow
