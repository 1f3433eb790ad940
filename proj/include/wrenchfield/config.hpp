#pragma once

#include "wrenchfield/cfm.hpp"
#include "wrenchfield/estimators.hpp"
#include "wrenchfield/eval.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace wrenchfield {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CfmSettings {
  int d_model = 128;
  int layers = 4;
  int expansion = 2;
  std::string head = "attention";
  int attn_dim = 32;
  bool time_mixing = false;
  int time_hidden = 64;
  std::vector<double> wrench_scale{50.0, 50.0, 10.0};
  int flow_steps = 10;
  double sigma_min = 0.0;
  bool standardize_inputs = true;
  CfmTrainConfig train;
};

struct MlpSettings {
  std::vector<int> hidden{512, 512, 512};
  std::vector<double> wrench_scale{50.0, 50.0, 10.0};
  bool standardize_inputs = true;
  MlpTrainConfig train;
};

/// Baseline hyperparameters; every non-empty grid list is searched on a
/// validation split and the best value replaces the scalar.
struct BaselineSettings {
  GmoConfig gmo;
  CpfWindowConfig cpf;
  std::vector<double> gmo_gain_grid;
  std::vector<double> gmo_temperature_grid;
  std::vector<double> cpf_threshold_grid;
  std::vector<double> cpf_sigma_grid;
  GenerationConfig validation;
};

struct SweepSettings {
  std::vector<double> sigmas{0.0, 0.01, 0.02, 0.05};
  std::vector<std::string> estimators{"cfm", "gmo", "cpf"};
};

struct MultiContactSettings {
  std::vector<int> contacts{1, 2, 3};
  std::vector<std::string> estimators{"cfm", "mlp"};
};

struct RobustnessSettings {
  std::vector<std::string> tiers{"good", "fair", "poor"};
  int episodes = 200;           // rollouts for the robustness metrics, per tier
  std::string test_tier = "good";  // tier of the common test set
  double recovery_eps = 0.05;
  int recovery_window = 25;
};

struct CrossTaskSettings {
  std::vector<std::string> tasks{"standing", "sway"};
  std::string single_task = "standing";
};

struct ExperimentConfig {
  ExperimentConfig();

  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::string model;       // CFM checkpoint
  std::string mlp_model;   // MLP checkpoint
  std::string train_data;  // dataset paths
  std::string test_data;
  std::string estimator = "cfm";
  ScoreOptions eval;
  GenerationConfig train_generation;
  GenerationConfig test_generation;
  CfmSettings cfm;
  MlpSettings mlp;
  BaselineSettings baselines;
  SweepSettings sweep;
  MultiContactSettings multi_contact;
  RobustnessSettings robustness;
  CrossTaskSettings cross_task;

  /// Range and consistency checks; throws ConfigError naming the field.
  void validate() const;
};

/// Parses a JSON document; absent keys keep their defaults, unknown keys and
/// type mismatches are rejected with the JSON path of the offending field.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Fully resolved configuration, every field present, keys sorted.
std::string config_to_json(const ExperimentConfig& cfg);

/// Published schema (JSON Schema draft 2020-12) of the configuration file.
std::string config_schema();

CfmArchitecture cfm_architecture(const CfmSettings& s, const DatasetHeader& data);
MlpArchitecture mlp_architecture(const MlpSettings& s, const DatasetHeader& data);

}  // namespace wrenchfield
