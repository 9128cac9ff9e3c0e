#include "npgrow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace npgrow {

namespace fs = std::filesystem;
using nlohmann::json;

double dice_coefficient(const SegGrid& a, const SegGrid& b, DiceMode mode) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument("dice_coefficient: shape mismatch");
  if (mode == DiceMode::Whole) {
    size_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
      const bool fa = a.v[i] > 0, fb = b.v[i] > 0;
      na += fa;
      nb += fb;
      inter += (fa && fb);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
  }
  // Per-class mean over foreground classes present in either grid.
  uint8_t max_label = 0;
  for (uint8_t x : a.v) max_label = std::max(max_label, x);
  for (uint8_t x : b.v) max_label = std::max(max_label, x);
  double acc = 0.0;
  int present = 0;
  for (uint8_t k = 1; k <= max_label; ++k) {
    size_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
      const bool fa = a.v[i] == k, fb = b.v[i] == k;
      na += fa;
      nb += fb;
      inter += (fa && fb);
    }
    if (na + nb == 0) continue;
    acc += 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
    ++present;
  }
  return present == 0 ? 1.0 : acc / present;
}

std::vector<double> EvalConfig::threshold_grid() const {
  if (!thresholds.empty()) return thresholds;
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);
  grid.push_back(1.01);  // includes every case
  return grid;
}

std::vector<TestCase> build_test_cases(const std::vector<Trajectory>& test_set, int min_context,
                                       int max_context) {
  std::vector<TestCase> cases;
  size_t zero_overlap_dropped = 0;
  for (const auto& traj : test_set) {
    const int len = static_cast<int>(traj.length());
    for (int k = min_context; k <= std::min(max_context, len - 1); ++k) {
      for (int j = k; j < len; ++j) {
        TestCase c;
        c.subject_id = traj.subject_id;
        c.num_context = k;
        c.context.assign(traj.observations.begin(), traj.observations.begin() + k);
        c.target = traj.observations[static_cast<size_t>(j)];
        c.true_overlap = dice_coefficient(c.target.segmentation,
                                          c.context.back().segmentation, DiceMode::Whole);
        if (c.true_overlap == 0.0) {
          ++zero_overlap_dropped;
          continue;
        }
        cases.push_back(std::move(c));
      }
    }
  }
  if (cases.empty())
    throw std::runtime_error(
        "build_test_cases: no usable test cases (" + std::to_string(test_set.size()) +
        " trajectories, " + std::to_string(zero_overlap_dropped) +
        " zero-overlap cases dropped); need trajectories with >= " +
        std::to_string(min_context + 1) + " observations and overlapping lesions");
  return cases;
}

double evaluate_surprise(const GrowthModel& model, const TestCase& test_case) {
  std::vector<TimedObservation> all = test_case.context;
  all.push_back(test_case.target);
  const GaussianLatent posterior = model.predict_posterior(all);
  const GaussianLatent prior = model.predict_prior(test_case.context);
  return gaussian_kl(posterior, prior);
}

double evaluate_test_loss(const GrowthModel& model, const TestCase& test_case,
                          const LossConfig& loss_config, uint64_t seed) {
  Rng rng(mix_seed(seed, 0x7e57));
  const Tensor eps = rng.normal_tensor({model.config().latent()});
  ContextTargetBatch batch;
  batch.context = test_case.context;
  batch.target = {test_case.target};
  Tape tape;
  ObjectiveGraph g = target_only_objective(tape, model, batch, loss_config, eps);
  return g.breakdown(loss_config.beta).total;
}

double query_volume_dice(const GrowthModel& model, const TestCase& test_case, int n_samples,
                         Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("query_volume_dice: n_samples must be >= 1");
  DecodeSession session(model, test_case.context);
  const size_t target_volume = test_case.target.segmentation.foreground_count();

  SegGrid best;
  size_t best_diff = std::numeric_limits<size_t>::max();
  for (int i = 0; i < n_samples; ++i) {
    const Tensor z = model.sample_latent(session.prior(), rng);
    SegGrid seg = session.decode_labels(z, test_case.target.time);
    const size_t volume = seg.foreground_count();
    const size_t diff = volume > target_volume ? volume - target_volume : target_volume - volume;
    if (diff < best_diff) {  // ties keep the first sample
      best_diff = diff;
      best = std::move(seg);
    }
  }
  return dice_coefficient(best, test_case.target.segmentation, DiceMode::Whole);
}

CaseResult evaluate_case(const GrowthModel& model, const TestCase& test_case,
                         const LossConfig& loss_config, const EvalConfig& eval_config,
                         uint64_t case_seed) {
  CaseResult r;
  r.subject_id = test_case.subject_id;
  r.num_context = test_case.num_context;
  r.target_time = test_case.target.time;
  r.true_overlap = test_case.true_overlap;
  r.surprise = evaluate_surprise(model, test_case);
  r.test_loss = evaluate_test_loss(model, test_case, loss_config, case_seed);

  Rng qvd_rng(mix_seed(case_seed, 0x47d));
  r.query_volume_dice =
      query_volume_dice(model, test_case, eval_config.n_prior_samples, qvd_rng);

  // Mean prediction: decode at the prior mean.
  DecodeSession session(model, test_case.context);
  const SegGrid mean_pred = session.decode_labels(session.prior().mu, test_case.target.time);
  r.predictive_dice = dice_coefficient(mean_pred, test_case.target.segmentation, DiceMode::Whole);
  return r;
}

std::vector<ThresholdPoint> threshold_curve(const std::vector<CaseResult>& cases,
                                            const std::vector<double>& thresholds) {
  std::vector<ThresholdPoint> curve;
  for (double tau : thresholds) {
    ThresholdPoint pt;
    pt.threshold = tau;
    double sum_pd = 0.0, sum_qvd = 0.0, sum_overlap = 0.0;
    for (const auto& c : cases) {
      if (c.true_overlap < tau) {
        ++pt.n_cases;
        sum_pd += c.predictive_dice;
        sum_qvd += c.query_volume_dice;
        sum_overlap += c.true_overlap;
      }
    }
    if (pt.n_cases > 0) {
      pt.mean_predictive_dice = sum_pd / pt.n_cases;
      pt.mean_query_volume_dice = sum_qvd / pt.n_cases;
      pt.predictive_threshold = sum_overlap / pt.n_cases;
    } else {
      pt.mean_predictive_dice = std::numeric_limits<double>::quiet_NaN();
      pt.mean_query_volume_dice = std::numeric_limits<double>::quiet_NaN();
      pt.predictive_threshold = std::numeric_limits<double>::quiet_NaN();
    }
    curve.push_back(pt);
  }
  return curve;
}

Aggregate aggregate_mean_sem(const std::vector<double>& values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (a.n == 0) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.n;
  if (a.n == 1) return a;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  const double sd = std::sqrt(ss / (a.n - 1));
  a.sem = sd / std::sqrt(static_cast<double>(a.n));
  return a;
}

MetricsReport evaluate_all(const GrowthModel& model, const std::vector<Trajectory>& test_set,
                           const LossConfig& loss_config, const EvalConfig& eval_config) {
  const std::vector<TestCase> cases = build_test_cases(test_set);
  MetricsReport report;
  report.cases.resize(cases.size());

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(cases.size()); ++i) {
    const uint64_t case_seed = mix_seed(eval_config.seed, 0xca5e, static_cast<uint64_t>(i));
    report.cases[static_cast<size_t>(i)] =
        evaluate_case(model, cases[static_cast<size_t>(i)], loss_config, eval_config, case_seed);
  }

  std::vector<double> tl, sp, qvd, pd, ov;
  for (const auto& c : report.cases) {
    tl.push_back(c.test_loss);
    sp.push_back(c.surprise);
    qvd.push_back(c.query_volume_dice);
    pd.push_back(c.predictive_dice);
    ov.push_back(c.true_overlap);
  }
  report.test_loss = aggregate_mean_sem(tl);
  report.surprise = aggregate_mean_sem(sp);
  report.query_volume_dice = aggregate_mean_sem(qvd);
  report.predictive_dice = aggregate_mean_sem(pd);
  report.true_overlap = aggregate_mean_sem(ov);
  report.curve = threshold_curve(report.cases, eval_config.threshold_grid());
  return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string cases_to_csv(const std::vector<CaseResult>& cases) {
  std::ostringstream os;
  os << "subject_id,num_context,target_time,test_loss,surprise,query_volume_dice,"
        "predictive_dice,true_overlap\n";
  for (const auto& c : cases)
    os << c.subject_id << ',' << c.num_context << ',' << fmt_double(c.target_time) << ','
       << fmt_double(c.test_loss) << ',' << fmt_double(c.surprise) << ','
       << fmt_double(c.query_volume_dice) << ',' << fmt_double(c.predictive_dice) << ','
       << fmt_double(c.true_overlap) << '\n';
  return os.str();
}

std::string curve_to_csv(const std::vector<ThresholdPoint>& curve) {
  std::ostringstream os;
  os << "threshold,n_cases,mean_predictive_dice,mean_query_volume_dice,predictive_threshold\n";
  for (const auto& p : curve)
    os << fmt_double(p.threshold) << ',' << p.n_cases << ',' << fmt_double(p.mean_predictive_dice)
       << ',' << fmt_double(p.mean_query_volume_dice) << ',' << fmt_double(p.predictive_threshold)
       << '\n';
  return os.str();
}

std::string report_to_json(const MetricsReport& report) {
  auto agg = [](const Aggregate& a) {
    return json{{"mean", a.mean}, {"sem", a.sem}, {"n", a.n}};
  };
  json j;
  j["n_cases"] = report.cases.size();
  j["test_loss"] = agg(report.test_loss);
  j["surprise"] = agg(report.surprise);
  j["query_volume_dice"] = agg(report.query_volume_dice);
  j["predictive_dice"] = agg(report.predictive_dice);
  j["true_overlap"] = agg(report.true_overlap);
  return j.dump(2);
}

void write_report(const MetricsReport& report, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream(dir + "/cases.csv") << cases_to_csv(report.cases);
  std::ofstream(dir + "/curve.csv") << curve_to_csv(report.curve);
  std::ofstream(dir + "/report.json") << report_to_json(report) << "\n";
}

}  // namespace npgrow
