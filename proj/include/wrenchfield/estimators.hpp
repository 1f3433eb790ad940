#pragma once

#include "wrenchfield/eval.hpp"
#include "wrenchfield/nn/autodiff.hpp"
#include "wrenchfield/nn/parameters.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wrenchfield {

class EstimatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- generalized momentum observer ---------------------------------------------

/// Discrete observer r_k = K_O (p_k - p_0 - I_k) with
/// I_k = I_{k-1} + dt ((beta_{k-1} + beta_k) / 2 + r_{k-1} + gf_k),
/// beta = S^T tau - D qdot + Hdot v - h(q, v), which equals S^T tau + C^T v - g.
struct MomentumObserverState {
  Eigen::VectorXd gain;  // K_O per coordinate, 1/s
  Eigen::VectorXd integral;
  Eigen::VectorXd residual;
  Eigen::VectorXd p0;
  Eigen::VectorXd beta_prev;
  bool started = false;
};

MomentumObserverState make_observer(const RobotModel& model, double gain = 50.0);

/// Mean generalized force of known non-contact sources (the ground) over the
/// preceding step; pass zeros when none.
const Eigen::VectorXd& gmo_update(MomentumObserverState& state, const RobotModel& model, const GeneralizedState& x,
                                  const Eigen::VectorXd& tau_m, double dt, const Eigen::VectorXd& known_gf);

struct Localization {
  int region = -1;                  // -1 when every region is rank deficient
  Eigen::VectorXd wrench;           // world frame, at the selected region
  Eigen::VectorXd errors;           // reprojection error per region; infinity when skipped
  std::vector<int> ties;            // regions within 1e-9 relative of the best, including it
  std::vector<int> skipped;         // rank-deficient regions
  Eigen::VectorXd mask;             // softmin over regions plus a null hypothesis with error |r|
};

/// Least-squares wrench per region, best region by reprojection error.
Localization gmo_localize(const RobotModel& model, const GeneralizedState& x, const Eigen::VectorXd& r,
                          double temperature = 1.0);

// --- contact particle filter ---------------------------------------------------

struct Particle {
  std::vector<int> regions;  // hypothesized contact regions (distinct)
  double weight = 0.0;
  Eigen::VectorXd wrench;    // stacked least-squares wrenches, world frame
};

struct ParticleSet {
  std::vector<Particle> particles;
  double ess() const;
  double weight_sum() const;
  /// Posterior mass per region.
  Eigen::VectorXd region_mass(int n_regions) const;
  int mode(int n_regions) const;
};

struct CpfConfig {
  int particles = 200;
  double sigma_lik = 0.5;
  double rejuvenation = 0.1;
  int contacts = 1;
};

ParticleSet cpf_init(int n_regions, const CpfConfig& cfg, Rng& rng);

void cpf_step(ParticleSet& set, const RobotModel& model, const GeneralizedState& x, const Eigen::VectorXd& r,
              Rng& rng, const CpfConfig& cfg);

/// Systematic resampling to equal weights; particle count preserved.
void systematic_resample(ParticleSet& set, Rng& rng);

// --- window-level baselines ----------------------------------------------------

/// What a model-based baseline sees for one window: decoded (possibly noisy)
/// proprioception plus privileged base position, base linear velocity and
/// ground generalized force from the simulator.
struct WindowSignals {
  std::vector<GeneralizedState> states;
  std::vector<Eigen::VectorXd> tau;
  std::vector<Eigen::VectorXd> ground_gf;
  double dt = 0.02;
};

WindowSignals window_signals(const RobotModel& model, const Rollout& raw, int start, const MatF& obs_window,
                             const ObservationConfig& obs_cfg, const PDGains& effective);

struct GmoConfig {
  double gain = 50.0;
  double temperature = 1.0;
};

PredictionRecord gmo_predict(const RobotModel& model, const WindowSignals& w, const GmoConfig& cfg, double delta);

struct CpfWindowConfig {
  CpfConfig filter;
  double gmo_gain = 50.0;
  double threshold = 5.0;  // residual norm that opens the detection gate
  std::uint64_t seed = 1;
};

PredictionRecord cpf_predict(const RobotModel& model, const WindowSignals& w, const CpfWindowConfig& cfg,
                             double delta, std::uint64_t clip_seed);

// --- MLP regressor -------------------------------------------------------------

struct MlpArchitecture {
  int h_win = 50;
  int n_regions = 7;
  int wrench_dim = 3;
  int obs_dim = 21;
  std::vector<int> hidden{512, 512, 512};
  std::vector<double> wrench_scale{50.0, 50.0, 10.0};
  std::vector<double> obs_shift;  // per observation channel; empty for identity
  std::vector<double> obs_scale;

  int input_dim() const { return h_win * obs_dim; }
  int wrench_out() const { return h_win * n_regions * wrench_dim; }
  int mask_out() const { return h_win * n_regions; }
  void validate() const;
  bool operator==(const MlpArchitecture&) const = default;
};

std::string mlp_architecture_to_json(const MlpArchitecture& a);
MlpArchitecture mlp_architecture_from_json(const std::string& text);

class MlpRegressor {
 public:
  MlpRegressor(const MlpArchitecture& arch, std::uint64_t seed);
  MlpRegressor(const MlpArchitecture& arch, nn::ParameterSet<float> params);

  /// Columns are samples: input is input_dim x B; returns (wrench, logits).
  std::pair<nn::Var, nn::Var> forward(nn::Tape<float>& tape, const std::vector<nn::Var>& vars, nn::Var x) const;

  const MlpArchitecture& arch() const { return arch_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }

 private:
  MlpArchitecture arch_;
  nn::ParameterSet<float> params_;
};

struct MlpTrainConfig {
  long steps = 5000;
  int batch = 64;
  double lr = 1e-3;
  double lr_min = 0.0;
  long warmup = 200;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  double noise_augment = 0.0;
  double lambda_neg = 0.1;
  double lambda_sparse = 0.001;
  long log_every = 100;
};

struct MlpTrainHistory {
  std::vector<long> steps;
  std::vector<double> loss;
  double seconds = 0.0;
};

MlpTrainHistory train_mlp(MlpRegressor& model, const Dataset& ds, const MlpTrainConfig& cfg,
                          const std::function<void(long, double)>& progress = {});

/// Gated predictions for every record row of `windows` (rows = H*obs_dim).
std::vector<PredictionRecord> mlp_predict(const MlpRegressor& model, const MatF& windows, double delta);

void save_mlp(const MlpRegressor& model, const std::string& path, const std::string& meta_json = "{}");
MlpRegressor load_mlp(const std::string& path, std::string* meta_json = nullptr);

}  // namespace wrenchfield
