#pragma once

#include "wrenchfield/control.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace wrenchfield {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

struct SamplerConfig {
  double force_min = 30.0;  // N
  double force_max = 100.0;
  double duration_min = 0.1;  // s
  double duration_max = 0.4;
  double episode = 8.0;     // logged seconds; start ~ U[0, episode - duration]
  double lead_in = 0.0;     // earliest start

  void validate() const;
  std::string to_json() const;
  std::uint64_t hash() const { return fnv1a(to_json()); }
};

ContactEvent sample_contact(Rng& rng, const SamplerConfig& cfg, const RobotModel& model);

/// k simultaneous events on distinct regions sharing start time and duration.
std::vector<ContactEvent> sample_simultaneous(Rng& rng, const SamplerConfig& cfg, const RobotModel& model, int k);

struct ObservationConfig {
  double w_q = 1.0;
  double w_qd = 0.05;
  double w_omega = 0.2;
  double w_g = 1.0;
  double w_tau = 1.0;
  double dq_ref = 0.3;    // rad
  double dqd_ref = 1.0;   // rad/s
  double eps_norm = 1e-3;
  bool include_command = false;  // appends q_target - q_default
};

/// Index ranges of the channel groups inside a token.
struct ObservationLayout {
  int n = 0;
  bool command = false;
  int q() const { return 0; }
  int qd() const { return n; }
  int omega() const { return 2 * n; }
  int gdir() const { return 2 * n + 1; }
  int tau() const { return 2 * n + 3; }
  int cmd() const { return 3 * n + 3; }
  int dim() const { return command ? 4 * n + 3 : 3 * n + 3; }
};

ObservationLayout observation_layout(const RobotModel& model, const ObservationConfig& cfg);

Eigen::VectorXd impedance_normalized_torque(const Eigen::VectorXd& tau, const PDGains& gains, double dq_ref,
                                            double dqd_ref, double eps_norm);

/// Gains actually applied by a tier.
PDGains effective_gains(const PDGains& gains, const ControllerTier& tier);

/// Gravity direction in the base frame: R(pitch)^T (0, -1).
Vec2 gravity_direction(double pitch);

struct RawFrame {
  Eigen::VectorXd q_joint;
  Eigen::VectorXd qd_joint;
  double omega = 0.0;
  double pitch = 0.0;
  Eigen::VectorXd tau;
  Eigen::VectorXd command;  // q_target - q_default; used only with include_command
};

Eigen::VectorXd build_observation(const RobotModel& model, const RawFrame& raw, const ObservationConfig& cfg,
                                  const PDGains& effective);

/// Inverse of build_observation for noiseless tokens; command is dropped.
RawFrame decode_observation(const RobotModel& model, const Eigen::VectorXd& token, const ObservationConfig& cfg,
                            const PDGains& effective);

RawFrame raw_frame(const RobotModel& model, const Rollout& r, int frame);

/// Per-frame tokens and labels of a whole rollout.
struct TokenizedRollout {
  MatF obs;     // frames x obs_dim
  MatF wrench;  // frames x (N*w), base frame, physical units
  MatF mask;    // frames x N
  int frames() const { return static_cast<int>(obs.rows()); }
};

TokenizedRollout tokenize(const RobotModel& model, const Rollout& r, const ObservationConfig& cfg,
                          const PDGains& effective);

/// Mask derived from a wrench row block: 1 where the region wrench norm is > 0.
MatF derive_mask(const MatF& wrench, int regions, int wrench_dim);

struct Clip {
  MatF obs;     // H x obs_dim
  MatF wrench;  // H x (N*w)
  MatF mask;    // H x N
  bool positive = false;
  int rollout = -1;
  int start = 0;
};

struct ClipRef {
  int rollout = 0;
  int start = 0;
  bool positive = false;
};

std::vector<ClipRef> window_refs(const TokenizedRollout& r, int rollout_index, int h_win, int stride);
Clip extract_clip(const TokenizedRollout& r, const ClipRef& ref, int h_win);
std::vector<Clip> windowize(const TokenizedRollout& r, int h_win, int stride, int rollout_index = 0);

struct DatasetHeader {
  std::uint32_t version = 1;
  int h_win = 50;
  int n_regions = 7;
  int wrench_dim = 3;
  int obs_dim = 21;
  std::int64_t count = 0;
  std::int64_t positive_count = 0;
  bool positives_repeated = false;
  bool negatives_repeated = false;
  std::string sampler_hash;
  std::string model_hash;
  std::string source = "sim";
  std::map<std::string, std::string> meta;  // tier, task, contacts per clip, seeds

  bool operator==(const DatasetHeader&) const = default;
};

std::string header_to_json(const DatasetHeader& h);
DatasetHeader header_from_json(const std::string& text);

/// Records stored row-wise: obs row = H*obs_dim floats, wrench row = H*N*w, mask row = H*N.
struct Dataset {
  DatasetHeader header;
  MatF obs;
  MatF wrench;
  MatF mask;

  std::int64_t size() const { return obs.rows(); }
  Clip clip(std::int64_t i) const;
  void resize(std::int64_t count);
  void set(std::int64_t i, const Clip& c);
  bool positive(std::int64_t i) const { return mask.row(i).maxCoeff() > 0.0f; }
};

struct AssemblyOptions {
  int neg_per_pos = 4;
  std::int64_t max_positives = -1;  // -1 keeps every positive
  bool repeat_minority = false;
};

/// Indices into `refs` realizing the exact 1:neg_per_pos ratio, shuffled by `seed`.
std::vector<std::size_t> assemble_indices(const std::vector<ClipRef>& refs, std::uint64_t seed,
                                          const AssemblyOptions& opts, bool* repeated_negatives = nullptr);

/// Materialized assembly of in-memory clips.
Dataset assemble_dataset(const std::vector<Clip>& clips, std::uint64_t seed, const AssemblyOptions& opts,
                         DatasetHeader header);

struct RandomizationRanges {
  double mass[2] = {1.0, 1.0};
  double inertia[2] = {1.0, 1.0};
  double damping_add[2] = {0.0, 0.0};  // N*m*s/rad added to each joint
  double torque_limit[2] = {1.0, 1.0};
  double friction[2] = {1.0, 1.0};

  void validate() const;
  bool identity() const;
};

struct RandomizedWorld {
  RobotModel model;
  GroundContactConfig ground;
};

RandomizedWorld domain_randomize(const RobotModel& model, const GroundContactConfig& ground, Rng& rng,
                                 const RandomizationRanges& ranges);

struct NoiseSigma {
  double q = 0.0;
  double qd = 0.0;
  double omega = 0.0;
  double gdir = 0.0;
  double tau = 0.0;
  double command = 0.0;

  static NoiseSigma uniform(double s) { return {s, s, s, s, s, 0.0}; }
  bool zero() const { return q == 0 && qd == 0 && omega == 0 && gdir == 0 && tau == 0 && command == 0; }
};

/// Adds grouped Gaussian noise to an H x obs_dim window of normalized tokens
/// and renormalizes gdir.
MatF inject_noise(const MatF& window, const ObservationLayout& layout, const NoiseSigma& sigma, Rng& rng);

struct GenerationConfig {
  int rollouts = 100;
  std::uint64_t seed = 1;        // episode e uses seed + e
  std::string tier = "good";
  Task task = Task::standing;
  int contacts_per_episode = 1;  // simultaneous contacts per event
  int h_win = 50;
  int stride = 10;
  SamplerConfig sampler;
  ObservationConfig observation;
  EpisodeOptions episode;
  RandomizationRanges randomization;
  AssemblyOptions assembly;
};

struct GeneratedRollouts {
  std::vector<TokenizedRollout> tokens;
  std::vector<Rollout> raw;  // kept only when requested
  std::vector<std::vector<ContactEvent>> events;
  std::vector<bool> fell;
};

/// Simulates cfg.rollouts episodes; episode e draws its events, jitter and
/// randomization from seed + e.
GeneratedRollouts generate_rollouts(const RobotModel& model, const PDGains& gains, const GenerationConfig& cfg,
                                    bool keep_raw = false);

/// Window, assemble and label a dataset from generated rollouts.
Dataset build_dataset(const RobotModel& model, const GenerationConfig& cfg, const GeneratedRollouts& gen,
                      std::vector<ClipRef>* chosen = nullptr);

void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);
DatasetHeader read_dataset_header(const std::string& path);

}  // namespace wrenchfield
