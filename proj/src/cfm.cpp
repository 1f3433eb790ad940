#include "wrenchfield/cfm.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace wrenchfield {

using json = nlohmann::json;

void CfmArchitecture::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw CfmError(std::string("architecture: ") + what + " must be positive");
  };
  positive(h_win, "h_win");
  positive(n_regions, "n_regions");
  positive(wrench_dim, "wrench_dim");
  positive(obs_dim, "obs_dim");
  positive(d_model, "d_model");
  positive(layers, "layers");
  positive(expansion, "expansion");
  positive(attn_dim, "attn_dim");
  positive(time_hidden, "time_hidden");
  positive(steps, "steps");
  if (head != "attention" && head != "linear") throw CfmError("architecture: head must be 'attention' or 'linear'");
  if (static_cast<int>(wrench_scale.size()) != wrench_dim)
    throw CfmError("architecture: wrench_scale needs one entry per wrench channel");
  for (double s : wrench_scale)
    if (!(s > 0)) throw CfmError("architecture: wrench_scale entries must be positive");
  if (!(delta > 0 && delta < 1)) throw CfmError("architecture: delta must lie in (0, 1)");
  if (!(sigma_min >= 0 && sigma_min < 1)) throw CfmError("architecture: sigma_min must lie in [0, 1)");
  validate_input_scaling(obs_shift, obs_scale, obs_dim);
}

void validate_input_scaling(const std::vector<double>& shift, const std::vector<double>& scale, int obs_dim) {
  if (shift.empty() && scale.empty()) return;
  if (static_cast<int>(shift.size()) != obs_dim || static_cast<int>(scale.size()) != obs_dim)
    throw CfmError("input scaling needs obs_dim = " + std::to_string(obs_dim) + " entries, got " +
                   std::to_string(shift.size()) + " shifts and " + std::to_string(scale.size()) + " scales");
  for (std::size_t i = 0; i < shift.size(); ++i)
    if (!std::isfinite(shift[i]) || !(scale[i] > 0) || !std::isfinite(scale[i]))
      throw CfmError("input scaling entry " + std::to_string(i) + " is not finite and positive");
}

InputScaling fit_input_scaling(const Dataset& ds, double floor) {
  const int D = ds.header.obs_dim, H = ds.header.h_win;
  if (ds.size() == 0) throw CfmError("input scaling: dataset is empty");
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(D), sq = Eigen::ArrayXd::Zero(D);
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    const Eigen::Map<const Eigen::MatrixXf> w(ds.obs.row(i).data(), D, H);
    sum += w.cast<double>().rowwise().sum().array();
    sq += w.cast<double>().array().square().rowwise().sum();
  }
  const double n = static_cast<double>(ds.size()) * H;
  const Eigen::ArrayXd mean = sum / n;
  const Eigen::ArrayXd sd = (sq / n - mean.square()).max(0.0).sqrt().max(floor);
  InputScaling s;
  s.shift.assign(mean.data(), mean.data() + D);
  for (int i = 0; i < D; ++i) s.scale.push_back(1.0 / sd(i));
  return s;
}

std::string architecture_to_json(const CfmArchitecture& a) {
  json j = {{"h_win", a.h_win},         {"n_regions", a.n_regions},     {"wrench_dim", a.wrench_dim},
            {"obs_dim", a.obs_dim},     {"d_model", a.d_model},         {"layers", a.layers},
            {"expansion", a.expansion}, {"head", a.head},               {"attn_dim", a.attn_dim},
            {"time_mixing", a.time_mixing}, {"time_hidden", a.time_hidden}, {"wrench_scale", a.wrench_scale},
            {"delta", a.delta},         {"steps", a.steps},             {"sigma_min", a.sigma_min},
            {"obs_shift", a.obs_shift}, {"obs_scale", a.obs_scale}};
  return j.dump();
}

CfmArchitecture architecture_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CfmError(std::string("architecture: invalid JSON: ") + e.what());
  }
  static const std::set<std::string> known{"h_win", "n_regions", "wrench_dim", "obs_dim", "d_model",
                                           "layers", "expansion", "head", "attn_dim", "time_mixing",
                                           "time_hidden", "wrench_scale", "delta", "steps", "sigma_min",
                                           "obs_shift", "obs_scale"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw CfmError("architecture: unknown key '" + it.key() + "'");
  CfmArchitecture a;
  try {
    a.h_win = j.value("h_win", a.h_win);
    a.n_regions = j.value("n_regions", a.n_regions);
    a.wrench_dim = j.value("wrench_dim", a.wrench_dim);
    a.obs_dim = j.value("obs_dim", a.obs_dim);
    a.d_model = j.value("d_model", a.d_model);
    a.layers = j.value("layers", a.layers);
    a.expansion = j.value("expansion", a.expansion);
    a.head = j.value("head", a.head);
    a.attn_dim = j.value("attn_dim", a.attn_dim);
    a.time_mixing = j.value("time_mixing", a.time_mixing);
    a.time_hidden = j.value("time_hidden", a.time_hidden);
    a.wrench_scale = j.value("wrench_scale", a.wrench_scale);
    a.delta = j.value("delta", a.delta);
    a.steps = j.value("steps", a.steps);
    a.sigma_min = j.value("sigma_min", a.sigma_min);
    a.obs_shift = j.value("obs_shift", a.obs_shift);
    a.obs_scale = j.value("obs_scale", a.obs_scale);
  } catch (const json::exception& e) {
    throw CfmError(std::string("architecture: ") + e.what());
  }
  a.validate();
  return a;
}

std::vector<TensorSpec> parameter_layout(const CfmArchitecture& a) {
  using I = TensorSpec::Init;
  const int d = a.d_model, nw = a.chunk_dim(), e = a.expansion * d;
  std::vector<TensorSpec> L;
  auto lin = [&](const std::string& name, int out, int in, I w = I::uniform) {
    L.push_back({name + ".w", out, in, w});
    L.push_back({name + ".b", out, 1, I::zeros});
  };
  auto norm = [&](const std::string& name, int dim) {
    L.push_back({name + ".g", dim, 1, I::ones});
    L.push_back({name + ".b", dim, 1, I::zeros});
  };
  lin("embed_obs", d, a.obs_dim);
  lin("embed_x", d, nw);
  lin("embed_t", d, d);
  lin("input", d, 3 * d);
  for (int l = 0; l < a.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    if (a.time_mixing) {
      norm(p + ".tnorm", d);
      lin(p + ".tmix1", a.time_hidden, a.h_win);
      lin(p + ".tmix2", a.h_win, a.time_hidden);
    }
    norm(p + ".norm", d);
    lin(p + ".fc1", e, d);
    lin(p + ".fc2", d, e);
  }
  norm("final_norm", d);
  if (a.head == "linear") {
    lin("wrench_head", nw, d, I::zeros);
    lin("mask_head", a.n_regions, d, I::zeros);
  } else {
    for (const auto& [name, out] : {std::pair<std::string, int>{"wrench_head", nw}, {"mask_head", a.n_regions}}) {
      lin(name + ".query", a.attn_dim, d);
      lin(name + ".key", a.attn_dim, d);
      lin(name + ".value", a.attn_dim, d);
      L.push_back({name + ".regions", a.attn_dim, a.n_regions, I::unit});
      lin(name + ".out", out, a.n_regions * a.attn_dim + d, I::zeros);
    }
  }
  return L;
}

MatF standardize_chunk(const MatF& wrench, const std::vector<double>& scale) {
  const int w = static_cast<int>(scale.size());
  if (w == 0 || wrench.cols() % w != 0) throw CfmError("standardize: chunk width is not a multiple of the wrench size");
  MatF out = wrench;
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) /= static_cast<float>(scale[c % w]);
  return out;
}

MatF destandardize_chunk(const MatF& chunk, const std::vector<double>& scale) {
  const int w = static_cast<int>(scale.size());
  if (w == 0 || chunk.cols() % w != 0) throw CfmError("destandardize: chunk width is not a multiple of the wrench size");
  MatF out = chunk;
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) *= static_cast<float>(scale[c % w]);
  return out;
}

MatF gate_wrench(const MatF& mask, const MatF& wrench, double delta, int wrench_dim) {
  if (mask.rows() != wrench.rows() || mask.cols() * wrench_dim != wrench.cols())
    throw CfmError("gate: mask and wrench shapes disagree");
  MatF out = wrench;
  for (Eigen::Index t = 0; t < mask.rows(); ++t)
    for (Eigen::Index i = 0; i < mask.cols(); ++i)
      if (!(mask(t, i) > delta)) out.block(t, i * wrench_dim, 1, wrench_dim).setZero();
  return out;
}

GatedPrediction gate(const MatF& mask, const MatF& raw, double delta, int wrench_dim) {
  GatedPrediction g;
  g.mask = mask;
  g.raw = raw;
  g.gated = gate_wrench(mask, raw, delta, wrench_dim);
  g.delta = delta;
  return g;
}

// --- training -------------------------------------------------------------------

void gather_batch(const Dataset& ds, const std::vector<std::int64_t>& rows, const CfmArchitecture& a,
                  CfmBatch<float>& b) {
  const int H = a.h_win, B = static_cast<int>(rows.size());
  b.obs.resize(a.obs_dim, B * H);
  b.x1.resize(a.chunk_dim(), B * H);
  b.mask.resize(a.n_regions, B * H);
  using ColMap = Eigen::Map<const Eigen::MatrixXf>;
  Eigen::VectorXf inv(a.chunk_dim());
  for (int r = 0; r < a.chunk_dim(); ++r) inv(r) = static_cast<float>(1.0 / a.wrench_scale[r % a.wrench_dim]);
  for (int s = 0; s < B; ++s) {
    const std::int64_t i = rows[s];
    b.obs.middleCols(s * H, H) = ColMap(ds.obs.row(i).data(), a.obs_dim, H);
    b.x1.middleCols(s * H, H) = inv.asDiagonal() * ColMap(ds.wrench.row(i).data(), a.chunk_dim(), H);
    b.mask.middleCols(s * H, H) = ColMap(ds.mask.row(i).data(), a.n_regions, H);
  }
}

LossBreakdown cfm_train_step(VelocityField<float>& model, nn::Adam<float>& opt, const CfmBatch<float>& batch,
                             const CfmLossWeights& w, double lr, double grad_clip) {
  nn::Tape<float> tape;
  auto& params = model.params();
  const auto vars = params.bind(tape);
  LossBreakdown lb;
  const nn::Var total = cfm_loss(tape, model, vars, batch, w, &lb);
  if (!std::isfinite(lb.total))
    throw CfmError("non-finite loss (mask " + std::to_string(lb.mask) + ", wrench " + std::to_string(lb.wrench) +
                   ", consistency " + std::to_string(lb.consistency) + ", sparsity " + std::to_string(lb.sparsity) +
                   ")");
  tape.backward(total);
  params.zero_grad();
  params.collect(tape, vars);
  if (grad_clip > 0) {
    const double n = params.grad_norm();
    if (n > grad_clip) params.scale_grad(static_cast<float>(grad_clip / n));
  }
  opt.step(params, lr);
  return lb;
}

ObservationLayout layout_from_header(const DatasetHeader& h) {
  const auto it = h.meta.find("command_channel");
  const bool cmd = it != h.meta.end() && it->second == "true";
  const int n = cmd ? (h.obs_dim - 3) / 4 : (h.obs_dim - 3) / 3;
  ObservationLayout l{n, cmd};
  if (l.dim() != h.obs_dim) throw CfmError("dataset obs_dim does not match any token layout");
  return l;
}

namespace {

void check_dataset(const CfmArchitecture& a, const DatasetHeader& h) {
  if (h.h_win != a.h_win || h.n_regions != a.n_regions || h.wrench_dim != a.wrench_dim || h.obs_dim != a.obs_dim)
    throw CfmError("dimension mismatch: model expects H=" + std::to_string(a.h_win) + " N=" +
                   std::to_string(a.n_regions) + " w=" + std::to_string(a.wrench_dim) +
                   " obs=" + std::to_string(a.obs_dim) + ", dataset has H=" + std::to_string(h.h_win) +
                   " N=" + std::to_string(h.n_regions) + " w=" + std::to_string(h.wrench_dim) +
                   " obs=" + std::to_string(h.obs_dim));
}

}  // namespace

TrainHistory train_cfm(VelocityField<float>& model, const Dataset& ds, const CfmTrainConfig& cfg,
                       const ProgressFn& progress) {
  const auto& a = model.arch();
  check_dataset(a, ds.header);
  if (ds.size() == 0) throw CfmError("training dataset is empty");
  if (cfg.batch <= 0 || cfg.steps <= 0) throw CfmError("batch and steps must be positive");
  const ObservationLayout layout = cfg.noise_augment > 0 ? layout_from_header(ds.header) : ObservationLayout{};
  const auto t0 = std::chrono::steady_clock::now();

  Rng rng(cfg.seed);
  nn::Adam<float> opt(model.params());
  std::vector<std::int64_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::int64_t> rows(cfg.batch);
  CfmBatch<float> batch;
  TrainHistory hist;
  LossBreakdown acc;
  int acc_n = 0;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (long step = 0; step < cfg.steps; ++step) {
    for (auto& r : rows) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      r = order[cursor++];
    }
    gather_batch(ds, rows, a, batch);
    if (cfg.noise_augment > 0) {
      for (int s = 0; s < cfg.batch; ++s) {
        const double sigma = cfg.noise_augment * u01(rng);
        MatF w = Eigen::Map<const Eigen::MatrixXf>(batch.obs.middleCols(s * a.h_win, a.h_win).data(), a.obs_dim,
                                                   a.h_win)
                     .transpose();
        w = inject_noise(w, layout, NoiseSigma::uniform(sigma), rng);
        batch.obs.middleCols(s * a.h_win, a.h_win) = w.transpose();
      }
    }
    draw_flow(batch, a.h_win, rng);
    const double lr = nn::cosine_lr(cfg.lr, cfg.lr_min, step, cfg.steps, cfg.warmup);
    const auto lb = cfm_train_step(model, opt, batch, cfg.loss, lr, cfg.grad_clip);
    acc.mask += lb.mask;
    acc.wrench += lb.wrench;
    acc.consistency += lb.consistency;
    acc.sparsity += lb.sparsity;
    acc.total += lb.total;
    ++acc_n;
    if ((step + 1) % std::max(1, cfg.log_every) == 0 || step + 1 == cfg.steps) {
      LossBreakdown avg{acc.mask / acc_n, acc.wrench / acc_n, acc.consistency / acc_n, acc.sparsity / acc_n,
                        acc.total / acc_n};
      hist.steps.push_back(step + 1);
      hist.loss.push_back(avg);
      if (progress) progress(step + 1, avg);
      acc = {};
      acc_n = 0;
    }
  }
  hist.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return hist;
}

// --- sampling ---------------------------------------------------------------------

namespace {

struct FlowRun {
  Eigen::MatrixXf x;       // chunk_dim x (B*H), standardized
  Eigen::MatrixXf logits;  // n_regions x (B*H) at the last step
  Eigen::MatrixXf last_update;
};

FlowRun integrate(const VelocityField<float>& model, const Eigen::MatrixXf& obs, Eigen::MatrixXf x, int B,
                  const FlowSchedule& schedule) {
  const float dt = static_cast<float>(schedule.dt());
  FlowRun run;
  for (int k = 0; k < schedule.steps; ++k) {
    nn::Tape<float> tape;
    std::vector<nn::Var> vars;
    vars.reserve(model.params().size());
    for (const auto& p : model.params()) vars.push_back(tape.constant(p.value));
    const nn::Var o = tape.constant(obs);
    const nn::Var xv = tape.constant(x);
    const auto out = model.forward(tape, vars, o, xv, std::vector<double>(B, schedule.t(k)));
    run.last_update = dt * tape.value(out.v);
    x += run.last_update;
    if (k + 1 == schedule.steps) run.logits = tape.value(out.logits);
  }
  run.x = std::move(x);
  return run;
}

Eigen::MatrixXf window_obs(const MatF& windows, std::int64_t first, int B, const CfmArchitecture& a) {
  Eigen::MatrixXf obs(a.obs_dim, B * a.h_win);
  for (int s = 0; s < B; ++s)
    obs.middleCols(s * a.h_win, a.h_win) =
        Eigen::Map<const Eigen::MatrixXf>(windows.row(first + s).data(), a.obs_dim, a.h_win);
  return obs;
}

Eigen::MatrixXf source_noise(int rows, int B, int H, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXf x(rows, B * H);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < rows; ++i) x(i, j) = static_cast<float>(n(rng));
  return x;
}

}  // namespace

std::vector<GatedPrediction> sample(const VelocityField<float>& model, const MatF& windows,
                                    const FlowSchedule& schedule, Rng& rng, double delta, int batch) {
  const auto& a = model.arch();
  if (windows.cols() != a.h_win * a.obs_dim)
    throw CfmError("sample: window width " + std::to_string(windows.cols()) + " does not match H*obs_dim = " +
                   std::to_string(a.h_win * a.obs_dim));
  if (schedule.steps < 1) throw CfmError("sample: schedule needs at least one step");
  std::vector<GatedPrediction> out;
  out.reserve(windows.rows());
  const int H = a.h_win;
  for (std::int64_t first = 0; first < windows.rows(); first += batch) {
    const int B = static_cast<int>(std::min<std::int64_t>(batch, windows.rows() - first));
    const Eigen::MatrixXf obs = window_obs(windows, first, B, a);
    const auto run = integrate(model, obs, source_noise(a.chunk_dim(), B, H, rng), B, schedule);
    for (int s = 0; s < B; ++s) {
      MatF mask = run.logits.middleCols(s * H, H).transpose().unaryExpr(
          [](float l) { return nn::Tape<float>::sigmoid(l); });
      MatF chunk = run.x.middleCols(s * H, H).transpose();
      out.push_back(gate(mask, destandardize_chunk(chunk, a.wrench_scale), delta, a.wrench_dim));
    }
  }
  return out;
}

GatedPrediction sample_one(const VelocityField<float>& model, const MatF& window, const FlowSchedule& schedule,
                           Rng& rng, double delta) {
  const auto& a = model.arch();
  MatF row = window;
  if (window.rows() == a.h_win && window.cols() == a.obs_dim)
    row = Eigen::Map<const MatF>(window.data(), 1, a.h_win * a.obs_dim);
  return sample(model, row, schedule, rng, delta, 1).front();
}

double terminal_update_norm(const VelocityField<float>& model, const MatF& windows, const FlowSchedule& schedule,
                            Rng& rng) {
  const auto& a = model.arch();
  const int B = static_cast<int>(windows.rows());
  const auto run = integrate(model, window_obs(windows, 0, B, a), source_noise(a.chunk_dim(), B, a.h_win, rng), B,
                             schedule);
  double s = 0.0;
  for (int b = 0; b < B; ++b) s += run.last_update.middleCols(b * a.h_win, a.h_win).norm();
  return s / std::max(1, B);
}

// --- checkpoint files -----------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'W', 'S', 'M', 'F'};
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void write_model_file(const std::string& path, const ModelFile& f) {
  json desc;
  desc["kind"] = f.kind;
  desc["architecture"] = json::parse(f.architecture_json);
  desc["meta"] = json::parse(f.meta_json);
  desc["tensors"] = json::array();
  for (const auto& t : f.tensors) desc["tensors"].push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}});
  const std::string text = desc.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CfmError("cannot write model file: " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(kModelMagic, 4);
  out.write(reinterpret_cast<const char*>(&kModelVersion), 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), len);
  for (const auto& t : f.tensors) out.write(reinterpret_cast<const char*>(t.value.data()), t.value.size() * 4);
  if (!out) throw CfmError("write failed: " + path);
}

ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CfmError("cannot open model file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw CfmError("bad magic in model file: " + path);
  std::uint32_t version = 0, len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in) throw CfmError("truncated model header: " + path);
  if (version != kModelVersion) throw CfmError("unsupported model file version " + std::to_string(version) + ": " + path);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw CfmError("truncated model descriptor: " + path);
  json desc;
  try {
    desc = json::parse(text);
  } catch (const json::exception& e) {
    throw CfmError(std::string("model descriptor is not valid JSON: ") + e.what());
  }
  ModelFile f;
  std::vector<std::pair<std::string, std::array<std::int64_t, 2>>> shapes;
  try {
    f.kind = desc.at("kind").get<std::string>();
    f.architecture_json = desc.at("architecture").dump();
    f.meta_json = desc.value("meta", json::object()).dump();
    for (const auto& t : desc.at("tensors"))
      shapes.push_back({t.at("name").get<std::string>(),
                        {t.at("shape").at(0).get<std::int64_t>(), t.at("shape").at(1).get<std::int64_t>()}});
  } catch (const json::exception& e) {
    throw CfmError(std::string("model descriptor: ") + e.what());
  }
  const auto start = in.tellg();
  in.seekg(0, std::ios::end);
  std::int64_t remaining = static_cast<std::int64_t>(in.tellg() - start);
  in.seekg(start);
  std::int64_t expected = 0;
  for (const auto& s : shapes) expected += 4 * s.second[0] * s.second[1];
  for (const auto& [name, shape] : shapes) {
    const std::int64_t bytes = 4 * shape[0] * shape[1];
    if (shape[0] < 0 || shape[1] < 0 || bytes > remaining)
      throw CfmError("truncated parameter block: tensor '" + name + "' needs " + std::to_string(bytes) +
                     " bytes, only " + std::to_string(std::max<std::int64_t>(0, remaining)) + " remain: " + path);
    NamedTensor t{name, Eigen::MatrixXf(shape[0], shape[1])};
    in.read(reinterpret_cast<char*>(t.value.data()), bytes);
    remaining -= bytes;
    f.tensors.push_back(std::move(t));
  }
  if (remaining != 0)
    throw CfmError("parameter block length mismatch: descriptor accounts for " + std::to_string(expected) +
                   " bytes, file holds " + std::to_string(expected + remaining) + ": " + path);
  return f;
}

void save_checkpoint(const VelocityField<float>& model, const std::string& path, const std::string& meta_json) {
  ModelFile f;
  f.kind = "cfm";
  f.architecture_json = architecture_to_json(model.arch());
  f.meta_json = meta_json;
  for (const auto& p : model.params()) f.tensors.push_back({p.name, p.value});
  write_model_file(path, f);
}

VelocityField<float> load_checkpoint(const std::string& path, std::string* meta_json) {
  ModelFile f = read_model_file(path);
  if (f.kind != "cfm") throw CfmError("model file holds a '" + f.kind + "' model, expected 'cfm': " + path);
  const auto arch = architecture_from_json(f.architecture_json);
  nn::ParameterSet<float> params;
  for (auto& t : f.tensors) params.add(t.name, std::move(t.value));
  if (meta_json) *meta_json = f.meta_json;
  return VelocityField<float>(arch, std::move(params));
}

}  // namespace wrenchfield
