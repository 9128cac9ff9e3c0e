#pragma once

#include <string>
#include <vector>

#include "npgrow/model.hpp"
#include "npgrow/objective.hpp"
#include "npgrow/synthetic.hpp"
#include "npgrow/types.hpp"

namespace npgrow {

enum class DiceMode { Whole, PerClass };

// Whole mode: binary Dice of the foreground unions. PerClass: mean over
// foreground classes present in either grid. Both-empty pairs score 1.
double dice_coefficient(const SegGrid& a, const SegGrid& b, DiceMode mode = DiceMode::Whole);

struct TestCase {
  std::string subject_id;
  std::vector<TimedObservation> context;
  TimedObservation target;
  int num_context = 0;
  double true_overlap = 0.0;  // whole-lesion Dice vs the last context point
};

struct CaseResult {
  std::string subject_id;
  int num_context = 0;
  double target_time = 0.0;
  double test_loss = 0.0;
  double surprise = 0.0;
  double query_volume_dice = 0.0;
  double predictive_dice = 0.0;
  double true_overlap = 0.0;
};

struct ThresholdPoint {
  double threshold = 0.0;
  int n_cases = 0;  // 0 marks an empty subset; means are NaN then
  double mean_predictive_dice = 0.0;
  double mean_query_volume_dice = 0.0;
  double predictive_threshold = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double sem = 0.0;
  int n = 0;
};

struct MetricsReport {
  std::vector<CaseResult> cases;
  Aggregate test_loss, surprise, query_volume_dice, predictive_dice, true_overlap;
  std::vector<ThresholdPoint> curve;
};

struct EvalConfig {
  int n_prior_samples = 100;
  uint64_t seed = 0;
  std::vector<double> thresholds;  // empty = default grid

  std::vector<double> threshold_grid() const;
};

// Enumerates (context prefix of size 2..5, strictly later target) pairs and
// drops cases whose target no longer overlaps the last context lesion.
// Throws when no test trajectory yields a single case.
std::vector<TestCase> build_test_cases(const std::vector<Trajectory>& test_set,
                                       int min_context = 2, int max_context = 5);

double evaluate_surprise(const GrowthModel& model, const TestCase& test_case);

// Target-only objective value of one case, z drawn from the posterior.
double evaluate_test_loss(const GrowthModel& model, const TestCase& test_case,
                          const LossConfig& loss_config, uint64_t seed);

// Best-volume-match sample Dice out of n prior draws.
double query_volume_dice(const GrowthModel& model, const TestCase& test_case, int n_samples,
                         Rng& rng);

CaseResult evaluate_case(const GrowthModel& model, const TestCase& test_case,
                         const LossConfig& loss_config, const EvalConfig& eval_config,
                         uint64_t case_seed);

std::vector<ThresholdPoint> threshold_curve(const std::vector<CaseResult>& cases,
                                            const std::vector<double>& thresholds);

Aggregate aggregate_mean_sem(const std::vector<double>& values);

MetricsReport evaluate_all(const GrowthModel& model, const std::vector<Trajectory>& test_set,
                           const LossConfig& loss_config, const EvalConfig& eval_config);

// ---- Report emission ----
std::string cases_to_csv(const std::vector<CaseResult>& cases);
std::string curve_to_csv(const std::vector<ThresholdPoint>& curve);
std::string report_to_json(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::string& dir);

}  // namespace npgrow
