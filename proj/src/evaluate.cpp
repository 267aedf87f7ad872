#include "sleepnet/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sleepnet/error.hpp"

namespace sleepnet {

ConfusionMatrix confusion(std::span<const Stage> truth, std::span<const Stage> predicted) {
  if (truth.size() != predicted.size()) {
    throw data_error("label length mismatch: " + std::to_string(truth.size()) + " vs " +
                     std::to_string(predicted.size()));
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    cm.counts(stage_index(truth[i]), stage_index(predicted[i])) += 1;
  }
  return cm;
}

double f1_score(double precision, double sensitivity) {
  const double denom = precision + sensitivity;
  return denom > 0.0 ? 2.0 * precision * sensitivity / denom : 0.0;
}

MetricsReport per_class_metrics(const ConfusionMatrix& cm) {
  MetricsReport report;
  report.confusion = cm;
  for (int c = 0; c < kNumStages; ++c) {
    auto& m = report.classes[static_cast<std::size_t>(c)];
    const auto tp = static_cast<double>(cm.counts(c, c));
    const auto predicted = cm.counts.col(c).sum();
    const auto actual = cm.counts.row(c).sum();
    m.support = actual;
    m.precision_undefined = predicted == 0;
    m.sensitivity_undefined = actual == 0;
    m.precision = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
    m.sensitivity = actual > 0 ? tp / static_cast<double>(actual) : 0.0;
    m.f1 = f1_score(m.precision, m.sensitivity);
    report.macro_precision += m.precision / kNumStages;
    report.macro_sensitivity += m.sensitivity / kNumStages;
    report.macro_f1 += m.f1 / kNumStages;
  }
  const auto k = cohen_kappa_detail(cm);
  report.kappa = k.kappa;
  report.kappa_degenerate = k.degenerate;
  return report;
}

KappaResult cohen_kappa_detail(const ConfusionMatrix& cm) {
  const auto n = static_cast<double>(cm.total());
  if (n <= 0.0) throw data_error("kappa of an empty confusion matrix");
  const auto counts = cm.counts.cast<double>();
  const double observed = counts.trace() / n;
  const double chance = (counts.rowwise().sum().array() * counts.colwise().sum().transpose().array()).sum() / (n * n);
  if (chance >= 1.0) return {observed >= 1.0 ? 1.0 : 0.0, true};
  return {(observed - chance) / (1.0 - chance), false};
}

Stage argmax_stage(const Probabilities& p) {
  int best = 0;
  for (int c = 1; c < kNumStages; ++c) {
    if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
  }
  return static_cast<Stage>(best);
}

Stage majority_vote(std::span<const Stage> model_labels, std::span<const Probabilities> model_probs) {
  if (model_labels.empty()) throw config_error("majority vote needs at least one model");
  std::array<int, kNumStages> votes{};
  std::array<double, kNumStages> mass{};
  for (Stage s : model_labels) votes[static_cast<std::size_t>(stage_index(s))] += 1;
  for (const auto& p : model_probs) {
    for (int c = 0; c < kNumStages; ++c) mass[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)];
  }
  int best = 0;
  for (int c = 1; c < kNumStages; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const auto b = static_cast<std::size_t>(best);
    if (votes[i] > votes[b] || (votes[i] == votes[b] && mass[i] > mass[b])) best = c;
  }
  return static_cast<Stage>(best);
}

std::vector<Stage> EnsemblePrediction::labels() const {
  std::vector<Stage> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.final_label);
  return out;
}

EnsemblePrediction combine_models(const std::string& record_id, std::span<const Eigen::MatrixXd> model_probs) {
  if (model_probs.empty()) throw config_error("ensemble needs at least one model");
  const auto n = model_probs[0].rows();
  for (const auto& p : model_probs) {
    if (p.rows() != n || p.cols() != kNumStages) throw data_error("ensemble members disagree on epoch count");
  }
  EnsemblePrediction out;
  out.record_id = record_id;
  out.epochs.resize(static_cast<std::size_t>(n));
  for (Eigen::Index e = 0; e < n; ++e) {
    auto& ep = out.epochs[static_cast<std::size_t>(e)];
    for (const auto& p : model_probs) {
      Probabilities row;
      for (int c = 0; c < kNumStages; ++c) row[static_cast<std::size_t>(c)] = p(e, c);
      ep.model_probs.push_back(row);
      ep.model_labels.push_back(argmax_stage(row));
      ep.votes[static_cast<std::size_t>(stage_index(ep.model_labels.back()))] += 1;
    }
    ep.final_label = majority_vote(ep.model_labels, ep.model_probs);
  }
  return out;
}

MetricsReport evaluate_run(std::span<const LabeledRecord> truth, std::span<const EnsemblePrediction> predictions) {
  std::map<std::string, const EnsemblePrediction*> by_id;
  for (const auto& p : predictions) by_id[p.record_id] = &p;

  std::vector<Stage> all_truth, all_pred;
  std::map<std::string, double> per_record;
  for (const auto& rec : truth) {
    auto it = by_id.find(rec.record_id);
    if (it == by_id.end()) throw data_error("no prediction for record " + rec.record_id);
    const auto pred = it->second->labels();
    if (pred.size() != rec.truth.size()) {
      throw data_error("label length mismatch in record " + rec.record_id + ": " +
                       std::to_string(rec.truth.size()) + " true vs " + std::to_string(pred.size()) +
                       " predicted");
    }
    if (!pred.empty()) per_record[rec.record_id] = cohen_kappa(confusion(rec.truth, pred));
    all_truth.insert(all_truth.end(), rec.truth.begin(), rec.truth.end());
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
  }
  auto report = per_class_metrics(confusion(all_truth, all_pred));
  report.record_kappa = std::move(per_record);
  return report;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (int c = 0; c < kNumStages; ++c) {
    const auto& m = r.classes[static_cast<std::size_t>(c)];
    classes.push_back({{"stage", stage_name(static_cast<Stage>(c))},
                       {"precision", m.precision},
                       {"sensitivity", m.sensitivity},
                       {"f1", m.f1},
                       {"support", m.support},
                       {"precision_undefined", m.precision_undefined},
                       {"sensitivity_undefined", m.sensitivity_undefined}});
  }
  nlohmann::ordered_json cm = nlohmann::ordered_json::array();
  for (int i = 0; i < kNumStages; ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int k = 0; k < kNumStages; ++k) row.push_back(r.confusion.counts(i, k));
    cm.push_back(row);
  }
  j["classes"] = classes;
  j["macro"] = {{"precision", r.macro_precision}, {"sensitivity", r.macro_sensitivity}, {"f1", r.macro_f1}};
  j["kappa"] = r.kappa;
  j["kappa_degenerate"] = r.kappa_degenerate;
  j["confusion"] = cm;
  j["record_kappa"] = r.record_kappa;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& classes = j.at("classes");
    if (classes.size() != kNumStages) throw data_error("report must list five classes");
    for (std::size_t c = 0; c < kNumStages; ++c) {
      auto& m = r.classes[c];
      const auto& jc = classes.at(c);
      m.precision = jc.at("precision").get<double>();
      m.sensitivity = jc.at("sensitivity").get<double>();
      m.f1 = jc.at("f1").get<double>();
      m.support = jc.at("support").get<std::int64_t>();
      m.precision_undefined = jc.at("precision_undefined").get<bool>();
      m.sensitivity_undefined = jc.at("sensitivity_undefined").get<bool>();
    }
    r.macro_precision = j.at("macro").at("precision").get<double>();
    r.macro_sensitivity = j.at("macro").at("sensitivity").get<double>();
    r.macro_f1 = j.at("macro").at("f1").get<double>();
    r.kappa = j.at("kappa").get<double>();
    r.kappa_degenerate = j.at("kappa_degenerate").get<bool>();
    for (int i = 0; i < kNumStages; ++i) {
      for (int k = 0; k < kNumStages; ++k) {
        r.confusion.counts(i, k) = j.at("confusion").at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<std::int64_t>();
      }
    }
    r.record_kappa = j.at("record_kappa").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string report_table(const MetricsReport& r) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %9s %11s %8s %8s\n", "Stage", "Precision", "Sensitivity", "F1", "Support");
  out << line;
  for (int c = 0; c < kNumStages; ++c) {
    const auto& m = r.classes[static_cast<std::size_t>(c)];
    std::snprintf(line, sizeof line, "%-8s %9.2f %11.2f %8.2f %8lld\n",
                  std::string(stage_name(static_cast<Stage>(c))).c_str(), m.precision, m.sensitivity, m.f1,
                  static_cast<long long>(m.support));
    out << line;
  }
  std::snprintf(line, sizeof line, "%-8s %9.2f %11.2f %8.2f %8lld\n", "Average", r.macro_precision,
                r.macro_sensitivity, r.macro_f1, static_cast<long long>(r.confusion.total()));
  out << line;
  std::snprintf(line, sizeof line, "kappa %.4f\n", r.kappa);
  out << line;
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\predicted";
  for (Stage s : kAllStages) out << ',' << stage_name(s);
  out << '\n';
  for (Stage t : kAllStages) {
    out << stage_name(t);
    for (Stage p : kAllStages) out << ',' << cm(t, p);
    out << '\n';
  }
  return out.str();
}

void write_hypnogram(std::span<const Stage> labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ' ' << stage_name(labels[i]) << '\n';
}

std::vector<Stage> read_hypnogram(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open hypnogram " + path.string());
  std::vector<Stage> labels;
  std::size_t index = 0;
  std::string label;
  while (in >> index >> label) {
    if (index != labels.size()) throw data_error("hypnogram " + path.string() + " is out of order");
    labels.push_back(parse_stage(label));
  }
  return labels;
}

}  // namespace sleepnet
