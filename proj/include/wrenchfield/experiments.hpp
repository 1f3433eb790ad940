#pragma once

#include "wrenchfield/config.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wrenchfield {

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LogFn = std::function<void(const std::string&)>;

// --- training ------------------------------------------------------------------

/// Builds the architecture for `ds`, fits input scaling when enabled and trains.
VelocityField<float> fit_cfm(const Dataset& ds, const CfmSettings& s, double delta, TrainHistory* history = nullptr,
                             const LogFn& log = {});
MlpRegressor fit_mlp(const Dataset& ds, const MlpSettings& s, MlpTrainHistory* history = nullptr,
                     const LogFn& log = {});

/// Checkpoint metadata describing the training data (read back by multi-contact eval).
std::string training_meta(const Dataset& ds, std::uint64_t seed);

/// A held-out set whose raw rollouts are kept for the model-based baselines.
struct EvalSet {
  GenerationConfig generation;
  GeneratedRollouts rollouts;
  Dataset data;
  std::vector<ClipRef> refs;
};

EvalSet make_eval_set(const RobotModel& model, const PDGains& gains, const GenerationConfig& gen);

/// Concatenates datasets with identical shapes; the header follows the first.
Dataset concat_datasets(const std::vector<const Dataset*>& parts);

// --- prediction ------------------------------------------------------------------

struct EstimatorBank {
  const VelocityField<float>* cfm = nullptr;
  const MlpRegressor* mlp = nullptr;
  GmoConfig gmo;
  CpfWindowConfig cpf;
  int flow_steps = 10;
  std::uint64_t seed = 1;
};

/// Runs one estimator over the rows of `windows` (the obs rows of `set.data`,
/// possibly re-noised). Runtime per window is stored on every record.
std::vector<PredictionRecord> predict(const std::string& estimator, const EstimatorBank& bank,
                                      const RobotModel& model, const PDGains& gains, const EvalSet& set,
                                      const MatF& windows, double delta);

std::vector<PredictionRecord> predict_cfm(const VelocityField<float>& model, const MatF& windows, int flow_steps,
                                          double delta, std::uint64_t seed);

/// Re-noises every window with a per-clip stream, reused across sigma values.
MatF noisy_windows(const Dataset& ds, double sigma, std::uint64_t seed);

// --- baseline tuning --------------------------------------------------------------

struct GridPoint {
  std::string estimator;
  std::map<std::string, double> params;
  double objective = 0.0;
  MetricsReport report;
};

struct TuningResult {
  GmoConfig gmo;
  CpfWindowConfig cpf;
  std::vector<GridPoint> grid;
};

/// Objective: localization accuracy minus false-alarm rate on the validation set.
double tuning_objective(const MetricsReport& r);

TuningResult tune_baselines(const RobotModel& model, const PDGains& gains, const BaselineSettings& s,
                            const ScoreOptions& opts, const LogFn& log = {});

std::string grid_csv(const std::vector<GridPoint>& grid);

// --- noise sweep --------------------------------------------------------------------

struct SweepRow {
  double sigma = 0.0;
  MetricsReport report;
};

struct NoiseSweepResult {
  std::vector<SweepRow> rows;                      // sigma-major, estimator-minor
  std::map<std::string, double> localization_drop;  // first sigma minus last sigma
  std::map<std::string, bool> monotone;             // localization non-increasing
};

NoiseSweepResult noise_sweep(const RobotModel& model, const PDGains& gains, const EstimatorBank& bank,
                             const EvalSet& set, const std::vector<double>& sigmas,
                             const std::vector<std::string>& estimators, const ScoreOptions& opts,
                             const LogFn& log = {});

std::string sweep_csv(const NoiseSweepResult& r);
std::string sweep_markdown(const NoiseSweepResult& r);

// --- multi-contact --------------------------------------------------------------------

struct MultiContactRow {
  int contacts = 1;
  MetricsReport report;
};

struct MultiContactResult {
  std::vector<MultiContactRow> rows;  // contact-count-major
};

/// Requires models trained on single-contact data: `trained_contacts` must be 1.
MultiContactResult multi_contact_eval(const RobotModel& model, const PDGains& gains, const EstimatorBank& bank,
                                      int trained_contacts, const GenerationConfig& test_template,
                                      const std::vector<int>& contacts, const std::vector<std::string>& estimators,
                                      const ScoreOptions& opts, const LogFn& log = {});

std::string multi_contact_csv(const MultiContactResult& r, bool with_runtime);
std::string multi_contact_markdown(const MultiContactResult& r, bool with_runtime);

// --- controller robustness ------------------------------------------------------------

struct TierResult {
  std::string tier;
  RobustnessReport robustness;
  MetricsReport report;
};

struct RobustnessAblationResult {
  std::vector<TierResult> tiers;
  bool sr_ordered = false;         // SR non-increasing along the tier list
  bool fa_improves = false;        // false alarm non-decreasing along the tier list
  bool location_improves = false;  // tolerant link non-increasing along the tier list
};

/// Robustness metrics over `episodes` rollouts of one tier.
RobustnessReport tier_robustness(const RobotModel& model, const PDGains& gains, const GenerationConfig& gen,
                                 int episodes, double eps, int window);

/// Trains one CFM per tier on `train_generation` with the tier substituted
/// (models in `pretrained` are used instead), then scores all of them on the
/// common test set.
RobustnessAblationResult robustness_ablation(const RobotModel& model, const PDGains& gains,
                                             const ExperimentConfig& cfg,
                                             const std::map<std::string, const VelocityField<float>*>& pretrained,
                                             const LogFn& log = {});

/// Same, but with caller-supplied per-tier datasets; tier labels must match
/// the dataset headers.
RobustnessAblationResult robustness_ablation(const RobotModel& model, const ExperimentConfig& cfg,
                                             const std::vector<std::string>& tiers,
                                             const std::vector<const Dataset*>& train_sets,
                                             const std::vector<RobustnessReport>& robustness,
                                             const Dataset& test, const LogFn& log = {});

std::string robustness_csv(const RobustnessAblationResult& r);
std::string robustness_markdown(const RobustnessAblationResult& r);

// --- cross-task observation ablation ---------------------------------------------------

struct CrossTaskRow {
  std::string estimator;  // "command", "unified" or "single:<task>"
  std::string condition;  // evaluated task
  MetricsReport report;
};

struct CrossTaskResult {
  std::vector<CrossTaskRow> rows;
  /// Detection change of the single-task estimator off its training task.
  std::map<std::string, double> single_task_shift;
};

CrossTaskResult cross_task_ablation(const RobotModel& model, const PDGains& gains, const ExperimentConfig& cfg,
                                    const LogFn& log = {});

std::string cross_task_csv(const CrossTaskResult& r);
std::string cross_task_markdown(const CrossTaskResult& r);

}  // namespace wrenchfield
