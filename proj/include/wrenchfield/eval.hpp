#pragma once

#include "wrenchfield/datagen.hpp"

#include <string>
#include <vector>

namespace wrenchfield {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Output of any estimator for one window.
struct PredictionRecord {
  std::string estimator;
  MatF mask;    // H x N probabilities
  MatF wrench;  // H x (N*w), gated, physical units, base frame
  double runtime_ms = 0.0;
};

void validate(const PredictionRecord& p, int h_win, int n_regions, int wrench_dim);

struct DetectedEvent {
  int region = 0;
  int onset = 0;
  int offset = 0;  // inclusive
  int peak_frame = 0;
  Eigen::VectorXd wrench;  // at the peak frame
  double peak_prob = 0.0;
};

/// Per region, maximal runs with mask > delta of at least min_duration frames;
/// the peak is the frame of largest wrench norm inside the run.
std::vector<DetectedEvent> extract_events(const MatF& mask, const MatF& wrench, int wrench_dim, double delta,
                                          int min_duration = 2);

/// Ground-truth events: runs with mask > 0 of any length.
std::vector<DetectedEvent> true_events(const MatF& mask, const MatF& wrench, int wrench_dim);

/// Hop distance between every pair of regions along the body tree.
Eigen::MatrixXi region_hop_matrix(const RobotModel& model);

struct ScoreOptions {
  double delta = 0.5;
  int min_duration = 2;
  int time_tolerance = 5;  // frames (0.1 s at 50 Hz)
  int link_tolerance = 1;  // body-tree hops
  double frame_dt = 0.02;
  std::vector<int> top_k{1, 3};
};

struct TopKBlock {
  int k = 1;
  double detection = 0.0;
  double false_alarm = 0.0;
  double any_exact_hit = 0.0;
  double target_link = 0.0;
  double tolerant_link = 0.0;
  double target_time = 0.0;
  double tolerant_time = 0.0;
};

struct MetricsReport {
  std::string estimator;
  int positives = 0;
  int negatives = 0;
  int detected_positives = 0;
  int matched = 0;
  int unmatched_detections = 0;
  // whether
  double detection = 0.0;
  double miss = 0.0;
  double false_alarm = 0.0;
  double strict_detection = 0.0;  // every true region detected
  // where / when, over matched detections on positive clips
  double target_link = 0.0;
  double tolerant_link = 0.0;
  double target_time = 0.0;
  double tolerant_time = 0.0;
  double localization = 0.0;  // positive clips with an exact-region match, over all positives
  // what, over matched events
  double distance_links = 0.0;
  double interval_ms = 0.0;
  double force_mag = 0.0;
  double force_dir_deg = 0.0;
  double torque_mag = 0.0;
  double torque_dir_deg = 0.0;
  std::vector<TopKBlock> topk;
  double runtime_ms = 0.0;
  ScoreOptions options;
};

MetricsReport score(const std::vector<PredictionRecord>& predictions, const Dataset& truth,
                    const Eigen::MatrixXi& hops, const ScoreOptions& opts = {});

/// Runtime is the only non-deterministic metric; reports meant to be
/// byte-reproducible leave it out.
std::string metrics_csv_header(bool with_runtime = true);
std::string metrics_csv_row(const MetricsReport& r, bool with_runtime = true);
std::string metrics_csv(const std::vector<MetricsReport>& reports, bool with_runtime = true);

/// Whether/where/when, estimation-error and Top-k tables, one column per report.
std::string metrics_markdown(const std::vector<MetricsReport>& reports, const std::string& title,
                             bool with_runtime = true);

/// Prediction records stored with the dataset container (source "prediction").
Dataset predictions_to_dataset(const std::vector<PredictionRecord>& preds, const Dataset& inputs,
                               bool record_runtime = true);
std::vector<PredictionRecord> predictions_from_dataset(const Dataset& ds);

}  // namespace wrenchfield
