#include "sleepnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "sleepnet/error.hpp"
#include "sleepnet/evaluate.hpp"
#include "sleepnet/hpo.hpp"
#include "sleepnet/nn/checkpoint.hpp"
#include "sleepnet/pipeline.hpp"
#include "sleepnet/training.hpp"

namespace fs = std::filesystem;

namespace sleepnet {

namespace {

void log(const std::string& msg) { std::cerr << "sleepnet: " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

struct StringOptions {
  std::string train, val, test, checkpoints, predict, filters;
  std::string config_file;
};

void add_options(CLI::App& cmd, PipelineConfig& c, StringOptions& s) {
  cmd.add_option("--config", s.config_file, "Experiment file ([section] key = value); flags override it");
  cmd.add_option("--output.dir", c.output_dir, "Directory every output is written to")->capture_default_str();

  cmd.add_option("--data.raw", c.raw_dir, "Raw record store (preprocess input)")->capture_default_str();
  cmd.add_option("--data.store", c.store_dir, "Preprocessed store (default <output.dir>/store)");
  cmd.add_option("--data.stats", c.stats_path, "Normalization stats file (default <output.dir>/stats.txt)");
  cmd.add_option("--data.train", s.train, "Comma-separated training record ids (default: all not in val/test)");
  cmd.add_option("--data.val", s.val, "Comma-separated validation record ids");
  cmd.add_option("--data.test", s.test, "Comma-separated test record ids");

  auto& p = c.preprocess;
  cmd.add_option("--preprocess.notch_hz", p.notch_hz, "Notch center frequency (Hz)")->capture_default_str();
  cmd.add_option("--preprocess.notch_q", p.notch_q, "Notch quality factor")->capture_default_str();
  cmd.add_option("--preprocess.highpass_hz", p.highpass_hz, "EMG high-pass cutoff (Hz)")->capture_default_str();
  cmd.add_option("--preprocess.highpass_order", p.highpass_order, "EMG high-pass order (even)")
      ->capture_default_str();

  auto& m = c.model;
  cmd.add_option("--model.n_blocks", m.n_blocks, "Convolutional blocks")->capture_default_str();
  cmd.add_option("--model.kernel_size", m.kernel_size, "Convolution kernel length")->capture_default_str();
  cmd.add_option("--model.initial_filters", m.initial_filters, "Filters in the first block")->capture_default_str();
  cmd.add_option("--model.learning_rate", m.learning_rate, "Adam learning rate")->capture_default_str();
  cmd.add_option("--model.dropout", m.dropout_rate, "Dropout rate before the dense layer")->capture_default_str();
  cmd.add_option("--model.batch_size", m.batch_size, "Mini-batch size")->capture_default_str();

  cmd.add_option("--run.seed", c.seed, "Seed for initialization and shuffling")->capture_default_str();
  cmd.add_option("--run.max_epochs", c.max_epochs, "Training epoch limit")->capture_default_str();
  cmd.add_option("--run.patience", c.patience, "Early-stopping patience")->capture_default_str();
  cmd.add_option("--run.timing", c.timing, "Record wall time in the history file")->capture_default_str();
  cmd.add_option("--run.max_hours", c.max_hours, "Per-record cap on training data in hours (0 = off)")
      ->capture_default_str();

  cmd.add_option("--hpo.n_trials", c.hpo_trials, "Total trials")->capture_default_str();
  cmd.add_option("--hpo.gamma", c.hpo_gamma, "Fraction of trials treated as good")->capture_default_str();
  cmd.add_option("--hpo.n_candidates", c.hpo_candidates, "Candidates scored per suggestion")->capture_default_str();
  cmd.add_option("--hpo.n_startup", c.hpo_startup, "Random trials before the density model")->capture_default_str();
  cmd.add_option("--hpo.best_k", c.hpo_best_k, "Configurations kept in best_configs.txt")->capture_default_str();
  cmd.add_option("--hpo.seed", c.hpo_seed, "Search seed")->capture_default_str();
  cmd.add_option("--hpo.resume", c.hpo_resume, "Continue from an existing trial log")->capture_default_str();
  cmd.add_option("--hpo.max_blocks", c.hpo_max_blocks, "Largest n_blocks searched (from 1)")->capture_default_str();
  cmd.add_option("--hpo.max_kernel", c.hpo_max_kernel, "Largest kernel searched (from 3)")->capture_default_str();
  cmd.add_option("--hpo.filters", s.filters, "Comma-separated initial_filters choices")->default_str("8,16,32,64");

  cmd.add_option("--predict.checkpoints", s.checkpoints,
                 "Comma-separated ensemble checkpoints (default: best_configs.txt, else model.ckpt)");
  cmd.add_option("--predict.records", s.predict, "Comma-separated record ids (default: test split, else all)");

  cmd.add_option("--report.scatter", c.scatter, "Write scatter.csv from the trial log")->capture_default_str();
}

// --- commands ---------------------------------------------------------------

int cmd_preprocess(const PipelineConfig& c) {
  const auto ids = list_records(c.raw_dir);
  if (ids.empty()) throw data_error("no records under " + c.raw_dir.string());
  const auto splits = resolve_splits(c, ids);
  const std::set<std::string> train_ids(splits.train.begin(), splits.train.end());
  fs::create_directories(c.store());

  std::vector<PsgRecord> train_records;
  int failed = 0;
  for (const auto& id : ids) {
    try {
      auto rec = preprocess_record(load_record(c.raw_dir / id), c.preprocess);
      save_record(rec, c.store() / id);
      log("preprocessed " + id + " (" + std::to_string(rec.epoch_count()) + " epochs)");
      if (train_ids.count(id)) train_records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      log("record " + id + " failed: " + e.what());
      ++failed;
    }
  }
  if (train_records.empty()) throw data_error("no training record was preprocessed");
  if (c.stats().has_parent_path()) fs::create_directories(c.stats().parent_path());
  save_stats(compute_norm_stats(train_records), c.stats());
  log("wrote " + c.stats().string());
  if (failed > 0) {
    log(std::to_string(failed) + " record(s) failed");
    return 2;
  }
  return 0;
}

struct TrainingData {
  NormalizationStats stats;
  Splits splits;
  Dataset train;
  Dataset val;
  ClassWeights weights{};
};

TrainingData load_training_data(const PipelineConfig& c) {
  TrainingData d;
  d.stats = load_stats(c.stats());
  d.splits = resolve_splits(c, list_records(c.store()));
  if (d.splits.val.empty()) throw config_error("validation split is empty; set --data.val");
  if (d.splits.train.empty()) throw config_error("training split is empty");
  d.train = load_epochs(c.store(), d.splits.train, d.stats, c.max_hours, c.seed);
  d.val = load_epochs(c.store(), d.splits.val, d.stats);
  d.weights = compute_class_weights(labels_of(d.train));
  return d;
}

TrainRunConfig run_config(const PipelineConfig& c, std::uint64_t seed, const fs::path& checkpoint) {
  TrainRunConfig run;
  run.max_epochs = c.max_epochs;
  run.patience = c.patience;
  run.batch_size = c.model.batch_size;
  run.shuffle_seed = seed;
  run.checkpoint_path = checkpoint;
  run.record_timing = c.timing;
  return run;
}

double accuracy(std::span<const Stage> truth, std::span<const Stage> predicted) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size());
}

int cmd_train(const PipelineConfig& c) {
  nn::validate(c.model);
  auto data = load_training_data(c);
  fs::create_directories(c.output_dir);
  log("training on " + std::to_string(data.train.size()) + " epochs, validating on " +
      std::to_string(data.val.size()));
  auto result = train(nn::ConvNet<float>(c.model, c.seed), data.train, data.val,
                      run_config(c, c.seed, c.output_dir / "model.ckpt"), data.weights,
                      [](const EpochRecord& e) {
                        log("epoch " + std::to_string(e.epoch) + " train_loss " + fmt("%.4f", e.train_loss) +
                            " val_loss " + fmt("%.4f", e.val_loss) + " val_kappa " + fmt("%.4f", e.val_kappa));
                      });
  write_text(c.output_dir / "history.csv", result.history.to_csv());

  const auto train_truth = labels_of(data.train);
  const auto train_pred = predict(result.net, data.train).labels;
  const auto val_pred = predict(result.net, data.val).labels;
  std::ostringstream summary;
  summary << "best_epoch " << result.history.best_epoch << '\n'
          << "stop_epoch " << result.history.stop_epoch << '\n'
          << "train_accuracy " << fmt("%.6f", accuracy(train_truth, train_pred)) << '\n'
          << "val_kappa " << fmt("%.6f", cohen_kappa(confusion(labels_of(data.val), val_pred))) << '\n';
  write_text(c.output_dir / "train_summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

int cmd_hpo(const PipelineConfig& c) {
  auto data = load_training_data(c);
  const auto trial_dir = c.output_dir / "trials";
  const auto log_path = c.output_dir / "trials.csv";
  fs::create_directories(trial_dir);

  hpo::TrialHistory history;
  if (c.hpo_resume) {
    history = hpo::read_trial_log(log_path, c.model);
    log("resuming after " + std::to_string(history.trials.size()) + " trial(s)");
  } else {
    fs::remove(log_path);
  }

  hpo::SearchSpace space;
  space.base = c.model;
  space.max_blocks = c.hpo_max_blocks;
  space.max_kernel = c.hpo_max_kernel;
  space.filters = c.hpo_filters;
  if (space.max_blocks < space.min_blocks || space.max_kernel < space.min_kernel || space.filters.empty() ||
      std::any_of(space.filters.begin(), space.filters.end(), [](int f) { return f < 1; })) {
    throw config_error("empty or invalid search space");
  }
  hpo::TpeOptions options{c.hpo_gamma, c.hpo_candidates, c.hpo_startup};
  const auto val_truth = labels_of(data.val);
  int next_index = static_cast<int>(history.trials.size());

  auto objective = [&](const nn::ModelConfig& config, std::uint64_t seed) {
    const auto ckpt = trial_dir / ("trial_" + std::to_string(next_index++) + ".ckpt");
    auto result = train(nn::ConvNet<float>(config, seed), data.train, data.val, run_config(c, seed, ckpt),
                        data.weights);
    return cohen_kappa(confusion(val_truth, predict(result.net, data.val).labels));
  };
  auto on_trial = [&](const hpo::Trial& t) {
    hpo::append_trial_log(t, log_path);
    log("trial " + std::to_string(t.index) + " " +
        (t.status == hpo::TrialStatus::Completed ? "kappa " + fmt("%.4f", t.objective)
                                                   : "failed" + (t.error.empty() ? std::string() : ": " + t.error)));
  };
  history = hpo::run_search(objective, space, c.hpo_trials, options, c.hpo_seed, std::move(history), on_trial);

  const auto completed = history.completed().size();
  if (completed == 0) throw data_error("every trial failed");
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, c.hpo_best_k)), completed);
  if (k < static_cast<std::size_t>(c.hpo_best_k)) log("only " + std::to_string(k) + " completed trial(s) available");
  std::ostringstream best;
  best << "trial n_blocks kernel filters lr kappa checkpoint\n";
  for (const auto& t : hpo::best_k(history, k)) {
    char line[256];
    std::snprintf(line, sizeof line, "%d %d %d %d %.17g %.17g ", t.index, t.config.n_blocks, t.config.kernel_size,
                  t.config.initial_filters, t.config.learning_rate, t.objective);
    best << line << (trial_dir / ("trial_" + std::to_string(t.index) + ".ckpt")).string() << '\n';
  }
  write_text(c.output_dir / "best_configs.txt", best.str());
  std::cout << best.str();
  return 0;
}

std::vector<fs::path> resolve_checkpoints(const PipelineConfig& c) {
  if (!c.checkpoints.empty()) return c.checkpoints;
  const auto best = c.output_dir / "best_configs.txt";
  if (fs::exists(best)) {
    std::vector<fs::path> out;
    std::istringstream in(read_text(best));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto pos = line.rfind(' ');
      if (pos != std::string::npos) out.emplace_back(line.substr(pos + 1));
    }
    if (!out.empty()) return out;
  }
  return {c.output_dir / "model.ckpt"};
}

std::vector<std::string> target_records(const PipelineConfig& c, const std::vector<std::string>& available) {
  if (!c.predict_ids.empty()) return c.predict_ids;
  if (!c.test_ids.empty()) return c.test_ids;
  return available;
}

int cmd_predict(const PipelineConfig& c) {
  const auto paths = resolve_checkpoints(c);
  std::vector<nn::ConvNet<float>> models;
  for (const auto& p : paths) {
    auto ck = nn::load_checkpoint(p);
    const auto& mc = ck.net.config();
    if (mc.input_length != kEpochSamples || mc.input_channels != kNumInputChannels) {
      throw config_error("checkpoint " + p.string() + " expects input " + std::to_string(mc.input_length) + "x" +
                         std::to_string(mc.input_channels) + ", records provide " + std::to_string(kEpochSamples) +
                         "x" + std::to_string(kNumInputChannels));
    }
    models.push_back(std::move(ck.net));
  }
  const auto stats = load_stats(c.stats());
  const auto ids = target_records(c, list_records(c.store()));
  fs::create_directories(c.output_dir / "hypnograms");
  fs::create_directories(c.output_dir / "predictions");

  for (const auto& id : ids) {
    const auto epochs = cut_epochs(load_record(c.store() / id), stats);
    std::vector<Eigen::MatrixXd> probs;
    for (auto& net : models) probs.push_back(predict(net, epochs).probabilities);
    const auto ensemble = combine_models(id, probs);
    write_hypnogram(ensemble.labels(), c.output_dir / "hypnograms" / (id + ".txt"));

    std::ostringstream detail;
    detail << "epoch";
    for (std::size_t m = 0; m < models.size(); ++m) detail << ",model_" << m + 1;
    detail << ",final\n";
    for (std::size_t e = 0; e < ensemble.epochs.size(); ++e) {
      detail << e;
      for (Stage s : ensemble.epochs[e].model_labels) detail << ',' << stage_name(s);
      detail << ',' << stage_name(ensemble.epochs[e].final_label) << '\n';
    }
    write_text(c.output_dir / "predictions" / (id + ".csv"), detail.str());
    log("predicted " + id + " (" + std::to_string(epochs.size()) + " epochs, " + std::to_string(models.size()) +
        " model(s))");
  }
  return 0;
}

int cmd_evaluate(const PipelineConfig& c) {
  const auto dir = c.output_dir / "hypnograms";
  std::vector<std::string> ids;
  if (!c.predict_ids.empty()) {
    ids = c.predict_ids;
  } else if (fs::exists(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".txt") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
  }
  if (ids.empty()) throw data_error("no hypnograms under " + dir.string());

  std::vector<LabeledRecord> truth;
  std::vector<EnsemblePrediction> predictions;
  std::vector<std::string> problems;
  for (const auto& id : ids) {
    try {
      LabeledRecord t{id, load_record(c.store() / id).stages};
      EnsemblePrediction p;
      p.record_id = id;
      for (Stage s : read_hypnogram(dir / (id + ".txt"))) {
        EnsembleEpoch e;
        e.final_label = s;
        p.epochs.push_back(e);
      }
      if (p.epochs.size() != t.truth.size()) {
        throw data_error("label length mismatch: " + std::to_string(t.truth.size()) + " annotated vs " +
                         std::to_string(p.epochs.size()) + " predicted");
      }
      truth.push_back(std::move(t));
      predictions.push_back(std::move(p));
    } catch (const std::exception& e) {
      problems.push_back(id + ": " + e.what());
    }
  }
  for (const auto& msg : problems) log("record " + msg);
  if (!problems.empty()) throw data_error(std::to_string(problems.size()) + " record(s) could not be aligned");

  const auto report = evaluate_run(truth, predictions);
  fs::create_directories(c.output_dir);
  write_text(c.output_dir / "report.json", report_to_json(report));
  write_text(c.output_dir / "confusion.csv", confusion_csv(report.confusion));
  write_text(c.output_dir / "table.txt", report_table(report));
  std::cout << report_table(report);
  return 0;
}

int cmd_report(const PipelineConfig& c) {
  if (c.scatter) {
    const auto log_path = c.output_dir / "trials.csv";
    if (!fs::exists(log_path)) throw data_error("no trial log at " + log_path.string());
    const auto history = hpo::read_trial_log(log_path, c.model);
    std::ostringstream out;
    out << "trial,n_blocks,kernel,filters,log_lr,lr,kappa\n";
    for (const auto* t : history.completed()) {
      char line[256];
      std::snprintf(line, sizeof line, "%d,%d,%d,%d,%.9g,%.9g,%.9g\n", t->index, t->config.n_blocks,
                    t->config.kernel_size, t->config.initial_filters, std::log(t->config.learning_rate),
                    t->config.learning_rate, t->objective);
      out << line;
    }
    write_text(c.output_dir / "scatter.csv", out.str());
    log("wrote " + (c.output_dir / "scatter.csv").string());
    return 0;
  }
  const auto path = c.output_dir / "report.json";
  if (!fs::exists(path)) throw data_error("no report at " + path.string() + "; run evaluate first");
  std::cout << report_table(report_from_json(read_text(path)));
  return 0;
}

// Expands `--config FILE` into `--section.key=value` arguments placed right
// after the command name, so explicit flags that follow take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const std::set<std::string>& commands) {
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty()) return args;
  std::ifstream in(file);
  if (!in) throw config_error("cannot read config file " + file);
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    std::string key;
    for (const auto& p : item.parents) key += p + ".";
    key += item.name;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    injected.push_back("--" + key + "=" + value);
  }
  std::vector<std::string> out;
  bool placed = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    out.push_back(args[i]);
    if (!placed && i > 0 && commands.count(args[i])) {
      out.insert(out.end(), injected.begin(), injected.end());
      placed = true;
    }
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args) {
  PipelineConfig config;
  StringOptions strings;
  CLI::App app{"Sleep-stage classification pipeline: preprocess, train, hpo, predict, evaluate, report"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  using Command = int (*)(const PipelineConfig&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"preprocess", "Filter and resample raw records; compute normalization stats from the training split",
       cmd_preprocess},
      {"train", "Train one model; writes model.ckpt, history.csv and train_summary.txt", cmd_train},
      {"hpo", "Hyperparameter search; writes trials.csv, best_configs.txt and trial checkpoints", cmd_hpo},
      {"predict", "Ensemble prediction; writes hypnograms/<id>.txt and predictions/<id>.csv", cmd_predict},
      {"evaluate", "Score hypnograms; writes report.json, confusion.csv and table.txt", cmd_evaluate},
      {"report", "Print the metrics table, or with --report.scatter write scatter.csv", cmd_report},
  };
  std::set<std::string> names;
  for (const auto& [name, help, fn] : commands) {
    add_options(*app.add_subcommand(name, help), config, strings);
    names.insert(name);
  }

  try {
    auto args = expand_config(raw_args, names);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 1;
    }
    config.train_ids = split_list(strings.train);
    config.val_ids = split_list(strings.val);
    config.test_ids = split_list(strings.test);
    config.predict_ids = split_list(strings.predict);
    for (const auto& p : split_list(strings.checkpoints)) config.checkpoints.emplace_back(p);
    if (!strings.filters.empty()) {
      config.hpo_filters.clear();
      for (const auto& f : split_list(strings.filters)) {
        try {
          config.hpo_filters.push_back(std::stoi(f));
        } catch (const std::exception&) {
          throw config_error("--hpo.filters: not an integer: " + f);
        }
      }
    }

    for (const auto& [name, help, fn] : commands) {
      if (app.got_subcommand(name)) return fn(config);
    }
    return 1;
  } catch (const Error& e) {
    log(std::string("error: ") + e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    log(std::string("error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 2;
  }
}

int run_cli(int argc, const char* const* argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc));
}

}  // namespace sleepnet
