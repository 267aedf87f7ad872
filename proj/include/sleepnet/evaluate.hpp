#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sleepnet/records.hpp"

namespace sleepnet {

using Probabilities = std::array<double, kNumStages>;

/// Rows are the true stage, columns the predicted stage, both in W..REM order.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, kNumStages, kNumStages> counts =
      Eigen::Matrix<std::int64_t, kNumStages, kNumStages>::Zero();

  std::int64_t total() const { return counts.sum(); }
  std::int64_t operator()(Stage truth, Stage predicted) const {
    return counts(stage_index(truth), stage_index(predicted));
  }
};

ConfusionMatrix confusion(std::span<const Stage> truth, std::span<const Stage> predicted);

struct ClassMetrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  // Set when the denominator was zero and the metric was defined as 0.
  bool precision_undefined = false;
  bool sensitivity_undefined = false;
};

struct MetricsReport {
  ConfusionMatrix confusion;
  std::array<ClassMetrics, kNumStages> classes;
  double macro_precision = 0.0;
  double macro_sensitivity = 0.0;
  double macro_f1 = 0.0;
  double kappa = 0.0;
  bool kappa_degenerate = false;
  std::map<std::string, double> record_kappa;
};

double f1_score(double precision, double sensitivity);

MetricsReport per_class_metrics(const ConfusionMatrix& cm);

struct KappaResult {
  double kappa = 0.0;
  bool degenerate = false;  // chance agreement was 1
};

KappaResult cohen_kappa_detail(const ConfusionMatrix& cm);
inline double cohen_kappa(const ConfusionMatrix& cm) { return cohen_kappa_detail(cm).kappa; }

/// Most votes wins; ties go to the largest summed probability among the tied
/// labels, then to the lowest class index.
Stage majority_vote(std::span<const Stage> model_labels, std::span<const Probabilities> model_probs);

/// argmax with ties to the lowest class index.
Stage argmax_stage(const Probabilities& p);

struct EnsembleEpoch {
  std::vector<Stage> model_labels;
  std::vector<Probabilities> model_probs;
  std::array<int, kNumStages> votes{};
  Stage final_label = Stage::W;
};

struct EnsemblePrediction {
  std::string record_id;
  std::vector<EnsembleEpoch> epochs;

  std::vector<Stage> labels() const;
};

/// `model_probs[m]` is the (epochs x 5) probability matrix of model m.
EnsemblePrediction combine_models(const std::string& record_id, std::span<const Eigen::MatrixXd> model_probs);

struct LabeledRecord {
  std::string record_id;
  std::vector<Stage> truth;
};

/// Pooled report over all records plus a kappa per record. Records are
/// matched by id; misaligned lengths raise an error naming the record.
MetricsReport evaluate_run(std::span<const LabeledRecord> truth, std::span<const EnsemblePrediction> predictions);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
/// Five class rows plus an average row.
std::string report_table(const MetricsReport& report);
std::string confusion_csv(const ConfusionMatrix& cm);

/// One line per epoch: `index label`.
void write_hypnogram(std::span<const Stage> labels, const std::filesystem::path& path);
std::vector<Stage> read_hypnogram(const std::filesystem::path& path);

}  // namespace sleepnet
