// npgrow command-line harness: data generation, training, evaluation,
// sampling and plotting for the continuous-time lesion growth model.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "npgrow/checkpoint.hpp"
#include "npgrow/config_json.hpp"
#include "npgrow/evaluation.hpp"
#include "npgrow/model.hpp"
#include "npgrow/plot.hpp"
#include "npgrow/synthetic.hpp"
#include "npgrow/training.hpp"
#include "npgrow/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace npgrow;

namespace {

struct RunConfig {
  int subjects = 24;
  uint64_t data_seed = 7;
  double split_fraction = 0.8;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
};

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::set<std::string> known = {"data", "model", "loss", "train", "eval"};
    if (!known.count(it.key()))
      throw std::invalid_argument("unknown config key '" + it.key() + "' in " + path);
  }
  RunConfig rc;
  if (j.contains("data")) {
    const json& d = j.at("data");
    for (auto it = d.begin(); it != d.end(); ++it) {
      static const std::set<std::string> known = {"subjects", "seed", "split_fraction"};
      if (!known.count(it.key()))
        throw std::invalid_argument("unknown config key 'data." + it.key() + "' in " + path);
    }
    if (d.contains("subjects")) rc.subjects = d.at("subjects").get<int>();
    if (d.contains("seed")) rc.data_seed = d.at("seed").get<uint64_t>();
    if (d.contains("split_fraction")) rc.split_fraction = d.at("split_fraction").get<double>();
  }
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("loss")) rc.loss = loss_config_from_json(j.at("loss"));
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    for (auto it = e.begin(); it != e.end(); ++it) {
      static const std::set<std::string> known = {"n_prior_samples", "seed", "thresholds"};
      if (!known.count(it.key()))
        throw std::invalid_argument("unknown config key 'eval." + it.key() + "' in " + path);
    }
    if (e.contains("n_prior_samples")) rc.eval.n_prior_samples = e.at("n_prior_samples").get<int>();
    if (e.contains("seed")) rc.eval.seed = e.at("seed").get<uint64_t>();
    if (e.contains("thresholds")) rc.eval.thresholds = e.at("thresholds").get<std::vector<double>>();
  }
  return rc;
}

json run_config_to_json(const RunConfig& rc) {
  json j;
  j["data"] = {{"subjects", rc.subjects}, {"seed", rc.data_seed},
               {"split_fraction", rc.split_fraction}};
  j["model"] = to_json(rc.model);
  j["loss"] = to_json(rc.loss);
  j["train"] = to_json(rc.train);
  j["eval"] = {{"n_prior_samples", rc.eval.n_prior_samples}, {"seed", rc.eval.seed}};
  if (!rc.eval.thresholds.empty()) j["eval"]["thresholds"] = rc.eval.thresholds;
  return j;
}

void write_run_manifest(const std::string& dir, const RunConfig& rc) {
  fs::create_directories(dir);
  json j = run_config_to_json(rc);
  j["version"] = kVersion;
  std::ofstream(dir + "/config.json") << j.dump(2) << "\n";
}

std::vector<double> parse_times(const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  if (out.empty()) throw std::invalid_argument("no query times given");
  return out;
}

int cmd_generate_data(const RunConfig& rc, const std::string& out_dir) {
  const Corpus corpus = build_corpus(rc.subjects, rc.data_seed, rc.split_fraction);
  save_corpus(out_dir, corpus);
  write_run_manifest(out_dir, rc);
  std::cout << "wrote " << corpus.train.size() << " train / " << corpus.test.size()
            << " test subjects to " << out_dir << "\n";
  return 0;
}

int cmd_train(RunConfig rc, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_path) {
  // Leakage check: train command touches only the train side of the split.
  const CorpusOnDisk split = read_split_manifest(data_dir);
  for (const auto& id : split.train_ids)
    if (std::find(split.test_ids.begin(), split.test_ids.end(), id) != split.test_ids.end())
      throw std::runtime_error("split manifest lists '" + id + "' in both train and test");
  const std::vector<Trajectory> train_set = load_split(data_dir, "train");

  GrowthModel model(rc.model, mix_seed(rc.train.seed, 0x1417));
  Trainer trainer(model, rc.train, rc.loss);
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    if (ckpt.model_config != rc.model)
      throw std::runtime_error("resume checkpoint model config does not match the run config");
    load_parameters(model, ckpt);
    trainer.restore(ckpt.completed_epochs, std::move(ckpt.adam));
    std::cout << "resumed from " << resume_path << " at epoch " << ckpt.completed_epochs << "\n";
  }

  fs::create_directories(out_dir);
  write_run_manifest(out_dir, rc);
  std::ofstream loss_csv(out_dir + "/loss.csv",
                         resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (resume_path.empty()) loss_csv << "epoch,ce,dice,kl,total\n";

  TrainHooks hooks;
  hooks.on_epoch = [&](int epoch, const LossBreakdown& b) {
    loss_csv << epoch << ',' << b.cross_entropy << ',' << b.dice << ',' << b.kl << ',' << b.total
             << "\n";
    loss_csv.flush();
    std::cout << "epoch " << epoch << " total " << b.total << " (ce " << b.cross_entropy
              << ", dice " << b.dice << ", kl " << b.kl << ")\n";
  };
  hooks.on_checkpoint = [&](int epoch) {
    char name[64];
    std::snprintf(name, sizeof(name), "/checkpoint_epoch%04d.npgck", epoch + 1);
    save_checkpoint(make_checkpoint(model, rc.train, rc.loss, trainer.adam(),
                                    trainer.completed_epochs(), Rng(rc.train.seed).state()),
                    out_dir + name);
  };
  trainer.run(train_set, hooks);

  save_checkpoint(make_checkpoint(model, rc.train, rc.loss, trainer.adam(),
                                  trainer.completed_epochs(), Rng(rc.train.seed).state()),
                  out_dir + "/checkpoint_final.npgck");
  std::cout << "saved " << out_dir << "/checkpoint_final.npgck\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_dir,
                 const std::string& out_dir, EvalConfig eval_config) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const GrowthModel model = restore_model(ckpt);
  const std::vector<Trajectory> test_set = load_split(data_dir, "test");
  const MetricsReport report = evaluate_all(model, test_set, ckpt.loss_config, eval_config);
  write_report(report, out_dir);
  std::cout << "evaluated " << report.cases.size() << " cases\n"
            << "  test loss         " << report.test_loss.mean << " +/- " << report.test_loss.sem
            << "\n  surprise (nats)   " << report.surprise.mean << " +/- " << report.surprise.sem
            << "\n  query volume dice " << report.query_volume_dice.mean << " +/- "
            << report.query_volume_dice.sem << "\n  predictive dice   "
            << report.predictive_dice.mean << " +/- " << report.predictive_dice.sem << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& data_dir,
               const std::string& subject, const std::string& times_spec, int n_samples,
               int num_context, uint64_t seed, const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const GrowthModel model = restore_model(ckpt);
  const Trajectory traj = load_subject(data_dir, subject);
  const std::vector<double> times = parse_times(times_spec);
  if (static_cast<int>(traj.length()) < num_context)
    throw std::runtime_error("subject has fewer observations than requested context size");
  std::vector<TimedObservation> context(traj.observations.begin(),
                                        traj.observations.begin() + num_context);

  fs::create_directories(out_dir);
  DecodeSession session(model, context);
  for (int i = 0; i < num_context; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "/context_%d_seg.ppm", i);
    write_segmentation_ppm(out_dir + name, context[static_cast<size_t>(i)].segmentation);
    std::snprintf(name, sizeof(name), "/context_%d_img.ppm", i);
    write_channel_ppm(out_dir + name, context[static_cast<size_t>(i)].image, 1);
  }

  Rng rng(mix_seed(seed, 0x5a3d1e));
  json index;
  index["subject"] = subject;
  index["context_times"] = json::array();
  for (const auto& obs : context) index["context_times"].push_back(obs.time);
  index["query_times"] = times;
  index["n_samples"] = n_samples;
  index["version"] = kVersion;
  index["seed"] = seed;

  for (size_t ti = 0; ti < times.size(); ++ti) {
    char name[64];
    const SegGrid mean_pred = session.decode_labels(session.prior().mu, times[ti]);
    std::snprintf(name, sizeof(name), "/mean_t%zu.ppm", ti);
    write_segmentation_ppm(out_dir + name, mean_pred);
  }
  for (int s = 0; s < n_samples; ++s) {
    const Tensor z = model.sample_latent(session.prior(), rng);
    for (size_t ti = 0; ti < times.size(); ++ti) {
      char name[64];
      std::snprintf(name, sizeof(name), "/sample%03d_t%zu.ppm", s, ti);
      write_segmentation_ppm(out_dir + name, session.decode_labels(z, times[ti]));
    }
  }
  std::ofstream(out_dir + "/index.json") << index.dump(2) << "\n";
  std::cout << "wrote " << n_samples << " samples x " << times.size() << " times to " << out_dir
            << "\n";
  return 0;
}

int cmd_plot(const std::string& report_dir, const std::string& out_dir) {
  fs::create_directories(out_dir);
  bool wrote_any = false;

  const std::string loss_path = report_dir + "/loss.csv";
  if (fs::exists(loss_path)) {
    std::ifstream is(loss_path);
    std::string line;
    std::getline(is, line);  // header
    PlotSeries ce{"cross entropy", "#1f77b4", false, {}};
    PlotSeries dice{"dice", "#2ca02c", false, {}};
    PlotSeries kl{"beta * kl", "#9467bd", false, {}};
    PlotSeries total{"total", "#d62728", false, {}};
    double beta = 1e-4;
    while (std::getline(is, line)) {
      std::stringstream ss(line);
      std::string tok;
      std::vector<double> row;
      while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
      if (row.size() != 5) continue;
      ce.points.emplace_back(row[0], row[1]);
      dice.points.emplace_back(row[0], row[2]);
      kl.points.emplace_back(row[0], beta * row[3]);
      total.points.emplace_back(row[0], row[4]);
    }
    write_svg_lineplot(out_dir + "/loss.svg", "Training loss", "epoch", "loss",
                       {total, ce, dice, kl});
    wrote_any = true;
  }

  const std::string curve_path = report_dir + "/curve.csv";
  if (fs::exists(curve_path)) {
    std::ifstream is(curve_path);
    std::string line;
    std::getline(is, line);
    PlotSeries qvd{"query volume dice", "#d62728", false, {}};
    PlotSeries pd{"predictive dice", "#1f77b4", false, {}};
    PlotSeries thr{"predictive threshold", "#444444", true, {}};
    auto parse = [](const std::string& tok) {
      return tok == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(tok);
    };
    while (std::getline(is, line)) {
      std::stringstream ss(line);
      std::string tok;
      std::vector<std::string> row;
      while (std::getline(ss, tok, ',')) row.push_back(tok);
      if (row.size() != 5) continue;
      const double tau = std::stod(row[0]);
      pd.points.emplace_back(tau, parse(row[2]));
      qvd.points.emplace_back(tau, parse(row[3]));
      thr.points.emplace_back(tau, parse(row[4]));
    }
    write_svg_lineplot(out_dir + "/threshold_curve.svg", "Dice vs true-overlap threshold",
                       "true overlap threshold", "dice", {qvd, pd, thr});
    wrote_any = true;
  }

  if (!wrote_any)
    throw std::runtime_error("nothing to plot: no loss.csv or curve.csv under " + report_dir);
  std::cout << "plots written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-time stochastic lesion growth modeling harness"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, ckpt_path, resume_path, subject, times_spec,
      report_dir;
  int subjects = 24, n_samples = 8, num_context = 2, eval_samples = 100;
  uint64_t seed_flag = 0;
  bool desk_scale = false, no_skips = false;

  auto* gen = app.add_subcommand("generate-data", "build and persist a synthetic corpus");
  gen->add_option("--out", out_dir, "output corpus directory")->required();
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--subjects", subjects, "number of subjects");
  auto* gen_seed = gen->add_option("--seed", seed_flag, "corpus seed");
  double split_fraction = 0.8;
  gen->add_option("--split", split_fraction, "train fraction of the subject split");

  auto* train = app.add_subcommand("train", "train a model on a corpus directory");
  train->add_option("--data", data_dir, "corpus directory")->required();
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  auto* t_seed = train->add_option("--seed", seed_flag, "training seed");
  int epochs = -1, batch_size = -1;
  double lr = -1.0, width_scale = -1.0;
  train->add_option("--epochs", epochs, "override epochs");
  train->add_option("--batch-size", batch_size, "override batch size");
  train->add_option("--lr", lr, "override learning rate");
  train->add_option("--width-scale", width_scale, "override model width scale");
  train->add_flag("--desk-scale", desk_scale, "apply the desk-scale preset");
  train->add_flag("--no-attention-skips", no_skips, "vanilla Neural Process ablation");
  int checkpoint_every = -1;
  train->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint interval");

  auto* eval = app.add_subcommand("evaluate", "run the metric suite on the test split");
  eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  eval->add_option("--data", data_dir, "corpus directory")->required();
  eval->add_option("--out", out_dir, "report output directory")->required();
  eval->add_option("--samples", eval_samples, "prior samples per case");
  auto* e_seed = eval->add_option("--seed", seed_flag, "evaluation seed");

  auto* sample = app.add_subcommand("sample", "decode sampled growth trajectories");
  sample->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  sample->add_option("--data", data_dir, "corpus directory")->required();
  sample->add_option("--subject", subject, "subject id")->required();
  sample->add_option("--times", times_spec, "comma-separated query times")->required();
  sample->add_option("--n-samples", n_samples, "number of prior samples");
  sample->add_option("--context", num_context, "context size (earliest observations)");
  sample->add_option("--out", out_dir, "output directory")->required();
  auto* s_seed = sample->add_option("--seed", seed_flag, "sampling seed");

  auto* plot = app.add_subcommand("plot", "render loss and threshold-curve figures");
  plot->add_option("--report", report_dir, "run or report directory")->required();
  plot->add_option("--out", out_dir, "output directory for images");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (gen->parsed()) {
      if (gen->count("--subjects")) rc.subjects = subjects;
      if (gen_seed->count()) rc.data_seed = seed_flag;
      if (gen->count("--split")) rc.split_fraction = split_fraction;
      return cmd_generate_data(rc, out_dir);
    }
    if (train->parsed()) {
      if (desk_scale) apply_desk_preset(rc.model, rc.train);
      if (t_seed->count()) rc.train.seed = seed_flag;
      if (epochs > 0) rc.train.epochs = epochs;
      if (batch_size > 0) rc.train.batch_size = batch_size;
      if (lr > 0) rc.train.learning_rate = lr;
      if (width_scale > 0) rc.model.width_scale = width_scale;
      if (checkpoint_every >= 0) rc.train.checkpoint_every = checkpoint_every;
      if (no_skips) rc.model.use_attention_skips = false;
      return cmd_train(rc, data_dir, out_dir, resume_path);
    }
    if (eval->parsed()) {
      rc.eval.n_prior_samples = eval_samples;
      if (e_seed->count()) rc.eval.seed = seed_flag;
      return cmd_evaluate(ckpt_path, data_dir, out_dir, rc.eval);
    }
    if (sample->parsed()) {
      return cmd_sample(ckpt_path, data_dir, subject, times_spec, n_samples, num_context,
                        s_seed->count() ? seed_flag : 0, out_dir);
    }
    if (plot->parsed()) {
      if (out_dir.empty()) out_dir = report_dir;
      return cmd_plot(report_dir, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
