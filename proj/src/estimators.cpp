#include "wrenchfield/estimators.hpp"

#include "wrenchfield/cfm.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace wrenchfield {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd joint_damping(const RobotModel& model) {
  Eigen::VectorXd d(model.joint_count());
  for (int j = 0; j < model.joint_count(); ++j) d(j) = model.joints[j].damping;
  return d;
}

Eigen::VectorXd observer_input(const RobotModel& model, const GeneralizedState& x, const Eigen::VectorXd& tau_m) {
  const int b = model.base_dof;
  const BiasForce h = bias_forces(model, x);
  Eigen::VectorXd beta = mass_matrix_derivative(model, x) * x.v - h.h;
  beta.tail(tau_m.size()) += tau_m - joint_damping(model).cwiseProduct(x.v.tail(x.v.size() - b));
  return beta;
}

/// Least-squares wrench for a set of regions: argmin |J^T f - r|.
struct Fit {
  Eigen::VectorXd wrench;
  double error = kInf;
  bool ok = false;
};

Fit fit_regions(const std::vector<Eigen::MatrixXd>& jac, const std::vector<int>& regions, const Eigen::VectorXd& r) {
  const int w = static_cast<int>(jac.front().rows());
  Eigen::MatrixXd A(r.size(), w * static_cast<int>(regions.size()));
  for (std::size_t i = 0; i < regions.size(); ++i) A.middleCols(w * i, w) = jac[regions[i]].transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  Fit f;
  if (qr.rank() < A.cols()) return f;
  f.wrench = qr.solve(r);
  f.error = (A * f.wrench - r).norm();
  f.ok = true;
  return f;
}

std::vector<Eigen::MatrixXd> region_jacobians(const RobotModel& model, const GeneralizedState& x) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(model.region_count());
  for (int i = 0; i < model.region_count(); ++i) out.push_back(region_jacobian(model, x, i).J);
  return out;
}

std::vector<int> random_hypothesis(int n_regions, int k, Rng& rng) {
  std::vector<int> all(n_regions);
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> u(i, n_regions - 1);
    std::swap(all[i], all[u(rng)]);
  }
  std::vector<int> h(all.begin(), all.begin() + k);
  std::sort(h.begin(), h.end());
  return h;
}

void normalize(ParticleSet& set) {
  const double s = set.weight_sum();
  if (!(s > 0) || !std::isfinite(s)) {
    for (auto& p : set.particles) p.weight = 1.0 / set.particles.size();
    return;
  }
  for (auto& p : set.particles) p.weight /= s;
}

}  // namespace

// --- observer ------------------------------------------------------------------------

MomentumObserverState make_observer(const RobotModel& model, double gain) {
  if (!(gain > 0)) throw EstimatorError("observer gain must be > 0");
  MomentumObserverState s;
  const int dof = model.dof();
  s.gain = Eigen::VectorXd::Constant(dof, gain);
  s.integral = Eigen::VectorXd::Zero(dof);
  s.residual = Eigen::VectorXd::Zero(dof);
  return s;
}

const Eigen::VectorXd& gmo_update(MomentumObserverState& state, const RobotModel& model, const GeneralizedState& x,
                                  const Eigen::VectorXd& tau_m, double dt, const Eigen::VectorXd& known_gf) {
  if (!(dt > 0)) throw EstimatorError("observer dt must be > 0");
  const Eigen::VectorXd p = mass_matrix(model, x).H * x.v;
  const Eigen::VectorXd beta = observer_input(model, x, tau_m);
  if (!state.started) {
    state.p0 = p;
    state.beta_prev = beta;
    state.integral.setZero();
    state.residual.setZero();
    state.started = true;
    return state.residual;
  }
  state.integral += dt * (0.5 * (state.beta_prev + beta) + state.residual + known_gf);
  state.residual = state.gain.cwiseProduct(p - state.p0 - state.integral);
  state.beta_prev = beta;
  return state.residual;
}

Localization gmo_localize(const RobotModel& model, const GeneralizedState& x, const Eigen::VectorXd& r,
                          double temperature) {
  if (!(temperature > 0)) throw EstimatorError("localization temperature must be > 0");
  const int N = model.region_count();
  const auto jac = region_jacobians(model, x);
  Localization loc;
  loc.errors = Eigen::VectorXd::Constant(N, kInf);
  std::vector<Eigen::VectorXd> fits(N);
  for (int i = 0; i < N; ++i) {
    Fit f = fit_regions(jac, {i}, r);
    if (!f.ok) {
      loc.skipped.push_back(i);
      continue;
    }
    loc.errors(i) = f.error;
    fits[i] = f.wrench;
  }
  const double rn = r.norm();
  const double best = loc.errors.minCoeff();
  loc.mask = Eigen::VectorXd::Zero(N);
  loc.wrench = Eigen::VectorXd::Zero(model.wrench_dim());
  if (!std::isfinite(best)) return loc;
  const double tol = 1e-9 * std::max({best, rn, std::numeric_limits<double>::min()});
  for (int i = 0; i < N; ++i)
    if (loc.errors(i) - best <= tol) loc.ties.push_back(i);
  loc.region = loc.ties.front();
  loc.wrench = fits[loc.region];
  // softmin shifted by the smallest error for stability
  const double m = std::min(best, rn);
  double z = std::exp(-(rn - m) / temperature);
  for (int i = 0; i < N; ++i) {
    if (std::isfinite(loc.errors(i))) loc.mask(i) = std::exp(-(loc.errors(i) - m) / temperature);
    z += loc.mask(i);
  }
  loc.mask /= z;
  return loc;
}

// --- particle filter ---------------------------------------------------------------

double ParticleSet::weight_sum() const {
  double s = 0.0;
  for (const auto& p : particles) s += p.weight;
  return s;
}

double ParticleSet::ess() const {
  double s = 0.0, s2 = 0.0;
  for (const auto& p : particles) {
    s += p.weight;
    s2 += p.weight * p.weight;
  }
  return s2 > 0 ? s * s / s2 : 0.0;
}

Eigen::VectorXd ParticleSet::region_mass(int n_regions) const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_regions);
  for (const auto& p : particles)
    for (int r : p.regions) m(r) += p.weight;
  return m;
}

int ParticleSet::mode(int n_regions) const {
  Eigen::Index i = 0;
  region_mass(n_regions).maxCoeff(&i);
  return static_cast<int>(i);
}

ParticleSet cpf_init(int n_regions, const CpfConfig& cfg, Rng& rng) {
  if (cfg.particles < 1) throw EstimatorError("particle count must be >= 1");
  if (cfg.contacts < 1 || cfg.contacts > n_regions) throw EstimatorError("contact count must be in [1, N]");
  ParticleSet set;
  set.particles.resize(cfg.particles);
  for (auto& p : set.particles) {
    p.regions = random_hypothesis(n_regions, cfg.contacts, rng);
    p.weight = 1.0 / cfg.particles;
  }
  return set;
}

void systematic_resample(ParticleSet& set, Rng& rng) {
  const std::size_t P = set.particles.size();
  normalize(set);
  std::uniform_real_distribution<double> u(0.0, 1.0 / P);
  const double u0 = u(rng);
  std::vector<Particle> out;
  out.reserve(P);
  double cum = set.particles.front().weight;
  std::size_t j = 0;
  for (std::size_t i = 0; i < P; ++i) {
    const double target = u0 + static_cast<double>(i) / P;
    while (cum < target && j + 1 < P) cum += set.particles[++j].weight;
    out.push_back(set.particles[j]);
    out.back().weight = 1.0 / P;
  }
  set.particles = std::move(out);
}

void cpf_step(ParticleSet& set, const RobotModel& model, const GeneralizedState& x, const Eigen::VectorXd& r,
              Rng& rng, const CpfConfig& cfg) {
  if (set.particles.empty()) throw EstimatorError("particle set is empty");
  const int N = model.region_count();
  const auto jac = region_jacobians(model, x);
  std::map<std::vector<int>, Fit> cache;
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma_lik * cfg.sigma_lik);

  // rejuvenation: re-propose a fraction uniformly at the mean weight
  const int fresh = static_cast<int>(std::lround(cfg.rejuvenation * set.particles.size()));
  if (fresh > 0) {
    normalize(set);
    std::uniform_int_distribution<std::size_t> pick(0, set.particles.size() - 1);
    for (int i = 0; i < fresh; ++i) {
      auto& p = set.particles[pick(rng)];
      p.regions = random_hypothesis(N, cfg.contacts, rng);
      p.weight = 1.0 / set.particles.size();
    }
  }

  // log-likelihood weighting, shifted by the best fit to avoid underflow
  std::vector<double> err(set.particles.size());
  double best = kInf;
  for (std::size_t i = 0; i < set.particles.size(); ++i) {
    auto& p = set.particles[i];
    auto it = cache.find(p.regions);
    if (it == cache.end()) it = cache.emplace(p.regions, fit_regions(jac, p.regions, r)).first;
    p.wrench = it->second.ok ? it->second.wrench : Eigen::VectorXd::Zero(model.wrench_dim() * p.regions.size());
    err[i] = it->second.error;
    best = std::min(best, err[i]);
  }
  for (std::size_t i = 0; i < set.particles.size(); ++i) {
    auto& p = set.particles[i];
    p.weight *= std::isfinite(err[i]) ? std::exp(-(err[i] * err[i] - best * best) * inv2s2) : 0.0;
  }
  normalize(set);
  if (set.ess() < 0.5 * set.particles.size()) systematic_resample(set, rng);
}

// --- window signals and window-level baselines ----------------------------------------

WindowSignals window_signals(const RobotModel& model, const Rollout& raw, int start, const MatF& obs_window,
                             const ObservationConfig& obs_cfg, const PDGains& effective) {
  const int H = static_cast<int>(obs_window.rows());
  if (start < 0 || start + H > raw.n_frames) throw EstimatorError("window exceeds the rollout");
  WindowSignals w;
  w.dt = raw.frame_dt;
  for (int k = 0; k < H; ++k) {
    const int f = start + k;
    const RawFrame d =
        decode_observation(model, obs_window.row(k).transpose().cast<double>(), obs_cfg, effective);
    GeneralizedState x;
    x.t_phys = f * raw.frame_dt;
    x.q_base << raw.q_base(f, 0), raw.q_base(f, 1), d.pitch;
    x.q_joint = d.q_joint;
    x.v.resize(model.dof());
    x.v << raw.v(f, 0), raw.v(f, 1), d.omega, d.qd_joint;
    w.states.push_back(std::move(x));
    w.tau.push_back(d.tau);
    w.ground_gf.push_back(raw.ground_gf.row(f).transpose());
  }
  return w;
}

namespace {

std::vector<Eigen::VectorXd> window_residuals(const RobotModel& model, const WindowSignals& w, double gain) {
  MomentumObserverState obs = make_observer(model, gain);
  std::vector<Eigen::VectorXd> out;
  for (std::size_t k = 0; k < w.states.size(); ++k)
    out.push_back(gmo_update(obs, model, w.states[k], w.tau[k], w.dt, w.ground_gf[k]));
  return out;
}

PredictionRecord blank_record(const RobotModel& model, int H, const std::string& name) {
  PredictionRecord p;
  p.estimator = name;
  p.mask = MatF::Zero(H, model.region_count());
  p.wrench = MatF::Zero(H, model.region_count() * model.wrench_dim());
  return p;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

PredictionRecord gmo_predict(const RobotModel& model, const WindowSignals& w, const GmoConfig& cfg, double delta) {
  const auto t0 = std::chrono::steady_clock::now();
  const int H = static_cast<int>(w.states.size());
  const int wd = model.wrench_dim();
  PredictionRecord p = blank_record(model, H, "gmo");
  const auto res = window_residuals(model, w, cfg.gain);
  for (int k = 0; k < H; ++k) {
    const Localization loc = gmo_localize(model, w.states[k], res[k], cfg.temperature);
    p.mask.row(k) = loc.mask.transpose().cast<float>();
    if (loc.region >= 0 && loc.mask(loc.region) > delta)
      p.wrench.row(k).segment(loc.region * wd, wd) =
          world_to_base(w.states[k].q_base(2), loc.wrench).transpose().cast<float>();
  }
  p.runtime_ms = elapsed_ms(t0);
  return p;
}

PredictionRecord cpf_predict(const RobotModel& model, const WindowSignals& w, const CpfWindowConfig& cfg,
                             double delta, std::uint64_t clip_seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const int H = static_cast<int>(w.states.size());
  const int N = model.region_count();
  const int wd = model.wrench_dim();
  PredictionRecord p = blank_record(model, H, "cpf");
  const auto res = window_residuals(model, w, cfg.gmo_gain);
  Rng rng(cfg.seed ^ (clip_seed * 0x9E3779B97F4A7C15ULL));
  ParticleSet set = cpf_init(N, cfg.filter, rng);
  for (int k = 0; k < H; ++k) {
    cpf_step(set, model, w.states[k], res[k], rng, cfg.filter);
    if (!(res[k].norm() > cfg.threshold)) continue;
    const Eigen::VectorXd mass = set.region_mass(N);
    p.mask.row(k) = mass.transpose().cast<float>();
    for (int i = 0; i < N; ++i) {
      if (!(mass(i) > delta)) continue;
      Eigen::VectorXd f = Eigen::VectorXd::Zero(wd);
      double wsum = 0.0;
      for (const auto& q : set.particles) {
        const auto it = std::find(q.regions.begin(), q.regions.end(), i);
        if (it == q.regions.end()) continue;
        f += q.weight * q.wrench.segment(wd * (it - q.regions.begin()), wd);
        wsum += q.weight;
      }
      if (wsum > 0)
        p.wrench.row(k).segment(i * wd, wd) =
            world_to_base(w.states[k].q_base(2), f / wsum).transpose().cast<float>();
    }
  }
  p.runtime_ms = elapsed_ms(t0);
  return p;
}

// --- MLP --------------------------------------------------------------------------

void MlpArchitecture::validate() const {
  if (h_win < 1 || n_regions < 1 || wrench_dim < 1 || obs_dim < 1) throw EstimatorError("mlp: dimensions must be >= 1");
  if (hidden.empty()) throw EstimatorError("mlp: at least one hidden layer is required");
  for (int h : hidden)
    if (h < 1) throw EstimatorError("mlp: hidden sizes must be >= 1");
  if (static_cast<int>(wrench_scale.size()) != wrench_dim)
    throw EstimatorError("mlp: wrench_scale needs one entry per wrench component");
  validate_input_scaling(obs_shift, obs_scale, obs_dim);
}

std::string mlp_architecture_to_json(const MlpArchitecture& a) {
  return json{{"h_win", a.h_win},   {"n_regions", a.n_regions}, {"wrench_dim", a.wrench_dim},
              {"obs_dim", a.obs_dim}, {"hidden", a.hidden},   {"wrench_scale", a.wrench_scale},
              {"obs_shift", a.obs_shift}, {"obs_scale", a.obs_scale}}
      .dump();
}

MlpArchitecture mlp_architecture_from_json(const std::string& text) {
  MlpArchitecture a;
  try {
    const json j = json::parse(text);
    for (const auto& [k, v] : j.items())
      if (k != "h_win" && k != "n_regions" && k != "wrench_dim" && k != "obs_dim" && k != "hidden" &&
          k != "wrench_scale" && k != "obs_shift" && k != "obs_scale")
        throw EstimatorError("mlp architecture: unknown key '" + k + "'");
    a.h_win = j.at("h_win").get<int>();
    a.n_regions = j.at("n_regions").get<int>();
    a.wrench_dim = j.at("wrench_dim").get<int>();
    a.obs_dim = j.at("obs_dim").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.wrench_scale = j.at("wrench_scale").get<std::vector<double>>();
    a.obs_shift = j.value("obs_shift", a.obs_shift);
    a.obs_scale = j.value("obs_scale", a.obs_scale);
  } catch (const json::exception& e) {
    throw EstimatorError(std::string("mlp architecture: ") + e.what());
  }
  a.validate();
  return a;
}

MlpRegressor::MlpRegressor(const MlpArchitecture& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  Rng rng(seed);
  int in = arch_.input_dim();
  for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
    const int out = arch_.hidden[l];
    params_.add("fc" + std::to_string(l) + ".w", nn::uniform_init<float>(out, in, rng));
    params_.add("fc" + std::to_string(l) + ".b", nn::Mat<float>::Zero(out, 1));
    in = out;
  }
  params_.add("wrench_head.w", nn::uniform_init<float>(arch_.wrench_out(), in, rng));
  params_.add("wrench_head.b", nn::Mat<float>::Zero(arch_.wrench_out(), 1));
  params_.add("mask_head.w", nn::uniform_init<float>(arch_.mask_out(), in, rng));
  params_.add("mask_head.b", nn::Mat<float>::Zero(arch_.mask_out(), 1));
}

MlpRegressor::MlpRegressor(const MlpArchitecture& arch, nn::ParameterSet<float> params)
    : arch_(arch), params_(std::move(params)) {
  arch_.validate();
  const MlpRegressor ref(arch_, 0);
  if (ref.params().size() != params_.size())
    throw EstimatorError("mlp: expected " + std::to_string(ref.params().size()) + " tensors, got " +
                         std::to_string(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto &a = ref.params()[i], &b = params_[i];
    if (a.name != b.name) throw EstimatorError("mlp: tensor " + std::to_string(i) + " should be '" + a.name + "'");
    if (a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      throw EstimatorError("shape mismatch for tensor '" + a.name + "': architecture expects " +
                           std::to_string(a.value.rows()) + "x" + std::to_string(a.value.cols()) + ", got " +
                           std::to_string(b.value.rows()) + "x" + std::to_string(b.value.cols()));
  }
}

std::pair<nn::Var, nn::Var> MlpRegressor::forward(nn::Tape<float>& tape, const std::vector<nn::Var>& vars,
                                                  nn::Var x) const {
  if (tape.value(x).rows() != arch_.input_dim())
    throw EstimatorError("mlp: input has " + std::to_string(tape.value(x).rows()) + " rows, expected " +
                         std::to_string(arch_.input_dim()));
  std::size_t i = 0;
  nn::Var h = x;
  if (!arch_.obs_shift.empty()) {
    const Eigen::Index cols = tape.value(x).cols();
    Eigen::MatrixXf shift(arch_.input_dim(), 1), scale(arch_.input_dim(), cols);
    for (int r = 0; r < arch_.input_dim(); ++r) {
      shift(r, 0) = static_cast<float>(-arch_.obs_shift[r % arch_.obs_dim]);
      scale.row(r).setConstant(static_cast<float>(arch_.obs_scale[r % arch_.obs_dim]));
    }
    h = tape.hadamard(tape.add_col(x, tape.constant(shift)), tape.constant(scale));
  }
  for (std::size_t l = 0; l < arch_.hidden.size(); ++l, i += 2)
    h = tape.activation(tape.linear(h, vars[i], vars[i + 1]), nn::Act::relu);
  const nn::Var wrench = tape.linear(h, vars[i], vars[i + 1]);
  const nn::Var logits = tape.linear(h, vars[i + 2], vars[i + 3]);
  return {wrench, logits};
}

MlpTrainHistory train_mlp(MlpRegressor& model, const Dataset& ds, const MlpTrainConfig& cfg,
                          const std::function<void(long, double)>& progress) {
  const auto& a = model.arch();
  const auto& h = ds.header;
  if (h.h_win != a.h_win || h.n_regions != a.n_regions || h.wrench_dim != a.wrench_dim || h.obs_dim != a.obs_dim)
    throw EstimatorError("mlp: dataset dimensions do not match the architecture");
  if (ds.size() == 0) throw EstimatorError("mlp: training dataset is empty");
  if (cfg.batch <= 0 || cfg.steps <= 0) throw EstimatorError("mlp: batch and steps must be positive");
  const ObservationLayout layout = cfg.noise_augment > 0 ? layout_from_header(h) : ObservationLayout{};
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  nn::Adam<float> opt(model.params());
  std::vector<std::int64_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int B = cfg.batch, W = a.wrench_dim;
  Eigen::MatrixXf X(a.input_dim(), B), Y(a.wrench_out(), B), M(a.mask_out(), B), Wt(a.wrench_out(), B);
  MlpTrainHistory hist;
  double acc = 0.0;
  int acc_n = 0;
  for (long step = 0; step < cfg.steps; ++step) {
    for (int s = 0; s < B; ++s) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::int64_t r = order[cursor++];
      if (cfg.noise_augment > 0) {
        MatF win = Eigen::Map<const MatF>(ds.obs.row(r).data(), a.h_win, a.obs_dim);
        win = inject_noise(win, layout, NoiseSigma::uniform(cfg.noise_augment * u01(rng)), rng);
        X.col(s) = Eigen::Map<const Eigen::VectorXf>(win.data(), win.size());
      } else {
        X.col(s) = ds.obs.row(r).transpose();
      }
      M.col(s) = ds.mask.row(r).transpose();
      for (int c = 0; c < a.wrench_out(); ++c) {
        Y(c, s) = ds.wrench(r, c) / static_cast<float>(a.wrench_scale[c % W]);
        Wt(c, s) = M(c / W, s) > 0.0f ? 1.0f : static_cast<float>(cfg.lambda_neg);
      }
    }
    nn::Tape<float> tape;
    auto& params = model.params();
    const auto vars = params.bind(tape);
    const auto [wr, lg] = model.forward(tape, vars, tape.constant(X));
    const float norm = static_cast<float>(a.n_regions) * a.h_win * B;
    nn::Var loss = tape.add(tape.bce_logits(lg, M), tape.weighted_sq(wr, Y, Wt, norm));
    if (cfg.lambda_sparse > 0)
      loss = tape.add(loss, tape.scale(tape.mean(tape.activation(lg, nn::Act::sigmoid)),
                                       static_cast<float>(cfg.lambda_sparse)));
    const double lv = tape.scalar(loss);
    if (!std::isfinite(lv)) throw EstimatorError("mlp: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    params.zero_grad();
    params.collect(tape, vars);
    if (cfg.grad_clip > 0) {
      const double n = params.grad_norm();
      if (n > cfg.grad_clip) params.scale_grad(static_cast<float>(cfg.grad_clip / n));
    }
    opt.step(params, nn::cosine_lr(cfg.lr, cfg.lr_min, step, cfg.steps, cfg.warmup));
    acc += lv;
    ++acc_n;
    if ((step + 1) % std::max<long>(1, cfg.log_every) == 0 || step + 1 == cfg.steps) {
      hist.steps.push_back(step + 1);
      hist.loss.push_back(acc / acc_n);
      if (progress) progress(step + 1, acc / acc_n);
      acc = 0.0;
      acc_n = 0;
    }
  }
  hist.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return hist;
}

std::vector<PredictionRecord> mlp_predict(const MlpRegressor& model, const MatF& windows, double delta) {
  const auto& a = model.arch();
  if (windows.cols() != a.input_dim())
    throw EstimatorError("mlp: window width " + std::to_string(windows.cols()) + " does not match H*obs_dim = " +
                         std::to_string(a.input_dim()));
  std::vector<PredictionRecord> out;
  out.reserve(windows.rows());
  constexpr int kBatch = 256;
  for (std::int64_t first = 0; first < windows.rows(); first += kBatch) {
    const auto t0 = std::chrono::steady_clock::now();
    const int B = static_cast<int>(std::min<std::int64_t>(kBatch, windows.rows() - first));
    nn::Tape<float> tape;
    std::vector<nn::Var> vars;
    for (const auto& p : model.params()) vars.push_back(tape.constant(p.value));
    const Eigen::MatrixXf X = windows.middleRows(first, B).transpose();
    const auto [wr, lg] = model.forward(tape, vars, tape.constant(X));
    const Eigen::MatrixXf& wv = tape.value(wr);
    const Eigen::MatrixXf& lv = tape.value(lg);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / B;
    for (int s = 0; s < B; ++s) {
      MatF mask = Eigen::Map<const MatF>(lv.col(s).data(), a.h_win, a.n_regions)
                      .unaryExpr([](float l) { return nn::Tape<float>::sigmoid(l); });
      const MatF chunk = Eigen::Map<const MatF>(wv.col(s).data(), a.h_win, a.n_regions * a.wrench_dim);
      PredictionRecord p;
      p.estimator = "mlp";
      p.wrench = gate_wrench(mask, destandardize_chunk(chunk, a.wrench_scale), delta, a.wrench_dim);
      p.mask = std::move(mask);
      p.runtime_ms = ms;
      out.push_back(std::move(p));
    }
  }
  return out;
}

void save_mlp(const MlpRegressor& model, const std::string& path, const std::string& meta_json) {
  ModelFile f;
  f.kind = "mlp";
  f.architecture_json = mlp_architecture_to_json(model.arch());
  f.meta_json = meta_json;
  for (const auto& p : model.params()) f.tensors.push_back({p.name, p.value});
  write_model_file(path, f);
}

MlpRegressor load_mlp(const std::string& path, std::string* meta_json) {
  ModelFile f = read_model_file(path);
  if (f.kind != "mlp") throw EstimatorError("model file '" + path + "' holds a '" + f.kind + "' model, not mlp");
  const MlpArchitecture a = mlp_architecture_from_json(f.architecture_json);
  nn::ParameterSet<float> ps;
  for (auto& t : f.tensors) ps.add(t.name, std::move(t.value));
  if (meta_json) *meta_json = f.meta_json;
  return MlpRegressor(a, std::move(ps));
}

}  // namespace wrenchfield
