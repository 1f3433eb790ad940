#pragma once

#include "wrenchfield/datagen.hpp"
#include "wrenchfield/nn/parameters.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wrenchfield {

class CfmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CfmArchitecture {
  int h_win = 50;
  int n_regions = 7;
  int wrench_dim = 3;
  int obs_dim = 21;
  int d_model = 128;
  int layers = 4;
  int expansion = 4;            // per-frame block hidden width = expansion * d_model
  std::string head = "attention";  // "attention" or "linear"
  int attn_dim = 32;
  bool time_mixing = false;     // optional token-mixing sublayer in every block
  int time_hidden = 64;
  std::vector<double> wrench_scale{50.0, 50.0, 10.0};  // per channel of a region wrench
  double delta = 0.5;
  int steps = 10;
  double sigma_min = 0.0;
  std::vector<double> obs_shift;  // per observation channel; empty for identity
  std::vector<double> obs_scale;

  int chunk_dim() const { return n_regions * wrench_dim; }
  void validate() const;
  bool operator==(const CfmArchitecture&) const = default;
};

std::string architecture_to_json(const CfmArchitecture& a);

/// Fixed per-channel affine map (o - shift) * scale applied to observation tokens.
struct InputScaling {
  std::vector<double> shift;
  std::vector<double> scale;
};

/// Channel mean and 1 / max(std, floor) over every frame of the dataset.
InputScaling fit_input_scaling(const Dataset& ds, double floor = 1e-3);

void validate_input_scaling(const std::vector<double>& shift, const std::vector<double>& scale, int obs_dim);
CfmArchitecture architecture_from_json(const std::string& text);

struct FlowSchedule {
  int steps = 10;
  double dt() const { return 1.0 / steps; }
  double t(int k) const { return static_cast<double>(k) / steps; }
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  enum class Init { uniform, zeros, ones, unit } init = Init::uniform;
};

/// Ordered parameter shapes implied by an architecture.
std::vector<TensorSpec> parameter_layout(const CfmArchitecture& a);

/// Sinusoidal flow-time features, one column per sample.
template <class S>
nn::Mat<S> time_features(const std::vector<double>& t, int dim) {
  nn::Mat<S> f(dim, static_cast<Eigen::Index>(t.size()));
  const int half = dim / 2;
  for (std::size_t s = 0; s < t.size(); ++s)
    for (int k = 0; k < half; ++k) {
      const double w = std::exp(-std::log(1000.0) * k / std::max(1, half - 1));
      const double a = 100.0 * t[s] * w;
      f(k, s) = static_cast<S>(std::sin(a));
      f(half + k, s) = static_cast<S>(std::cos(a));
    }
  if (dim % 2) f.row(dim - 1).setZero();
  return f;
}

template <class S>
class VelocityField {
 public:
  VelocityField() = default;

  /// Random backbone, zero-initialized heads.
  VelocityField(const CfmArchitecture& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    std::mt19937_64 rng(seed);
    for (const auto& t : parameter_layout(arch)) {
      nn::Mat<S> m;
      switch (t.init) {
        case TensorSpec::Init::uniform: m = nn::uniform_init<S>(t.rows, t.cols, rng); break;
        case TensorSpec::Init::zeros: m = nn::Mat<S>::Zero(t.rows, t.cols); break;
        case TensorSpec::Init::ones: m = nn::Mat<S>::Ones(t.rows, t.cols); break;
        case TensorSpec::Init::unit: {
          std::uniform_real_distribution<double> u(-1.0, 1.0);
          m.resize(t.rows, t.cols);
          for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(u(rng));
          break;
        }
      }
      params_.add(t.name, std::move(m));
    }
  }

  /// Adopts an existing parameter set after checking every shape.
  VelocityField(const CfmArchitecture& arch, nn::ParameterSet<S> params) : arch_(arch), params_(std::move(params)) {
    arch.validate();
    const auto layout = parameter_layout(arch);
    if (layout.size() != params_.size())
      throw CfmError("parameter count mismatch: architecture expects " + std::to_string(layout.size()) +
                     " tensors, got " + std::to_string(params_.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& p = params_[i];
      if (p.name != layout[i].name)
        throw CfmError("tensor order mismatch: expected '" + layout[i].name + "', got '" + p.name + "'");
      if (p.value.rows() != layout[i].rows || p.value.cols() != layout[i].cols)
        throw CfmError("shape mismatch for tensor '" + p.name + "': architecture expects " +
                       std::to_string(layout[i].rows) + "x" + std::to_string(layout[i].cols) + ", got " +
                       std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
  }

  const CfmArchitecture& arch() const { return arch_; }
  nn::ParameterSet<S>& params() { return params_; }
  const nn::ParameterSet<S>& params() const { return params_; }

  template <class T>
  VelocityField<T> cast() const {
    return VelocityField<T>(arch_, params_.template cast<T>());
  }

  struct Output {
    nn::Var v;       // chunk_dim x (B*H)
    nn::Var logits;  // n_regions x (B*H)
  };

  /// obs: obs_dim x (B*H), x: chunk_dim x (B*H), t: one flow time per sample.
  Output forward(nn::Tape<S>& tape, const std::vector<nn::Var>& p, nn::Var obs, nn::Var x,
                 const std::vector<double>& t) const {
    const int H = arch_.h_win, d = arch_.d_model;
    const auto& ov = tape.value(obs);
    const auto& xv = tape.value(x);
    if (ov.rows() != arch_.obs_dim || xv.rows() != arch_.chunk_dim() || ov.cols() != xv.cols() ||
        ov.cols() != static_cast<Eigen::Index>(t.size()) * H)
      throw CfmError("velocity: input shapes do not match the architecture (obs " + std::to_string(ov.rows()) + "x" +
                     std::to_string(ov.cols()) + ", chunk " + std::to_string(xv.rows()) + "x" +
                     std::to_string(xv.cols()) + ", " + std::to_string(t.size()) + " flow times)");
    std::size_t c = 0;
    auto next = [&]() { return p.at(c++); };
    auto lin = [&](nn::Var in) {
      const nn::Var w = next();
      const nn::Var b = next();
      return tape.linear(in, w, b);
    };
    auto norm = [&](nn::Var in) {
      const nn::Var g = next();
      const nn::Var b = next();
      return tape.layernorm(in, g, b);
    };
    auto mix = [&](nn::Var in, int h) {
      const nn::Var w = next();
      const nn::Var b = next();
      return tape.time_mix(in, w, b, h);
    };
    using nn::Act;

    nn::Var obs_in = obs;
    if (!arch_.obs_shift.empty()) {
      nn::Mat<S> shift(arch_.obs_dim, 1), scale(arch_.obs_dim, 1);
      for (int i = 0; i < arch_.obs_dim; ++i) {
        shift(i, 0) = static_cast<S>(-arch_.obs_shift[i]);
        scale(i, 0) = static_cast<S>(arch_.obs_scale[i]);
      }
      obs_in = tape.hadamard(tape.add_col(obs, tape.constant(shift)), tape.constant(scale.replicate(1, ov.cols())));
    }
    const nn::Var eo = lin(obs_in);
    const nn::Var ex = lin(x);
    const nn::Var tf = tape.constant(time_features<S>(t, d));
    const nn::Var et = tape.repeat_cols(tape.activation(lin(tf), Act::gelu), H);
    nn::Var h = lin(tape.concat_rows(tape.concat_rows(eo, ex), et));

    for (int l = 0; l < arch_.layers; ++l) {
      if (arch_.time_mixing) {
        nn::Var y = norm(h);
        y = tape.activation(mix(y, H), Act::gelu);
        y = mix(y, arch_.time_hidden);
        h = tape.add(h, y);
      }
      nn::Var y = norm(h);
      y = tape.activation(lin(y), Act::gelu);
      y = lin(y);
      h = tape.add(h, y);
    }
    h = norm(h);

    Output out;
    if (arch_.head == "linear") {
      out.v = lin(h);
      out.logits = lin(h);
    } else {
      out.v = attention_head(tape, h, lin, next);
      out.logits = attention_head(tape, h, lin, next);
    }
    if (c != p.size()) throw CfmError("velocity: parameter list longer than the architecture consumes");
    return out;
  }

 private:
  template <class Lin, class Next>
  nn::Var attention_head(nn::Tape<S>& tape, nn::Var h, Lin& lin, Next& next) const {
    const nn::Var q = lin(h);
    const nn::Var k = lin(h);
    const nn::Var v = lin(h);
    const nn::Var e = next();
    const nn::Var a = tape.region_attention(q, e, k, v, arch_.h_win);
    return lin(tape.concat_rows(a, h));
  }

  CfmArchitecture arch_;
  nn::ParameterSet<S> params_;
};

// --- standardization and gating ---------------------------------------------

/// Divides channel c of every region wrench by scale[c].
MatF standardize_chunk(const MatF& wrench, const std::vector<double>& scale);
MatF destandardize_chunk(const MatF& chunk, const std::vector<double>& scale);

struct GatedPrediction {
  MatF mask;    // H x N probabilities
  MatF raw;     // H x (N*w), physical units
  MatF gated;   // raw where mask > delta, else 0
  double delta = 0.5;
};

MatF gate_wrench(const MatF& mask, const MatF& wrench, double delta, int wrench_dim);
GatedPrediction gate(const MatF& mask, const MatF& raw, double delta, int wrench_dim);

// --- loss and training --------------------------------------------------------

struct LossBreakdown {
  double mask = 0.0;
  double wrench = 0.0;
  double consistency = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
};

struct CfmLossWeights {
  double lambda_neg = 0.1;
  double lambda_c = 0.01;
  double lambda_s = 0.001;
};

/// A training batch in token-column layout with its flow draws.
template <class S>
struct CfmBatch {
  nn::Mat<S> obs;   // obs_dim x (B*H)
  nn::Mat<S> x1;    // chunk_dim x (B*H), standardized
  nn::Mat<S> mask;  // N x (B*H)
  nn::Mat<S> x0;    // chunk_dim x (B*H), standard normal
  std::vector<double> t;  // per sample
  int samples() const { return static_cast<int>(t.size()); }
};

/// Composite objective; returns the scalar total and fills the breakdown.
template <class S>
nn::Var cfm_loss(nn::Tape<S>& tape, const VelocityField<S>& model, const std::vector<nn::Var>& p,
                 const CfmBatch<S>& b, const CfmLossWeights& w, LossBreakdown* out = nullptr) {
  const auto& a = model.arch();
  const int H = a.h_win, N = a.n_regions, wd = a.wrench_dim;
  const Eigen::Index cols = b.obs.cols();
  if (cols != static_cast<Eigen::Index>(b.samples()) * H || b.x1.cols() != cols || b.mask.cols() != cols ||
      b.x0.cols() != cols)
    throw CfmError("cfm_loss: batch shapes disagree");
  const S smin = static_cast<S>(a.sigma_min);
  Eigen::Matrix<S, 1, Eigen::Dynamic> tt(cols), one_minus(cols), keep(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const S tv = static_cast<S>(b.t[j / H]);
    tt(j) = tv;
    one_minus(j) = S(1) - tv;
    keep(j) = S(1) - (S(1) - smin) * tv;
  }
  const nn::Mat<S> xt = b.x0 * keep.asDiagonal() + b.x1 * tt.asDiagonal();
  const nn::Mat<S> u = b.x1 - (S(1) - smin) * b.x0;

  nn::Mat<S> lam(a.chunk_dim(), cols), nc(a.chunk_dim(), cols);
  S n_nc = 0;
  for (Eigen::Index j = 0; j < cols; ++j)
    for (int i = 0; i < N; ++i) {
      const bool on = b.mask(i, j) > S(0);
      lam.block(i * wd, j, wd, 1).setConstant(on ? S(1) : static_cast<S>(w.lambda_neg));
      nc.block(i * wd, j, wd, 1).setConstant(on ? S(0) : S(1));
      n_nc += on ? S(0) : S(1);
    }
  const S n_cells = static_cast<S>(N) * static_cast<S>(cols);

  const nn::Var obs = tape.constant(b.obs);
  const nn::Var xv = tape.constant(xt);
  const auto o = model.forward(tape, p, obs, xv, b.t);

  const nn::Var l_mask = tape.bce_logits(o.logits, b.mask);
  const nn::Var l_wrench = tape.weighted_sq(o.v, u, lam, n_cells);
  const nn::Var x1hat = tape.add(xv, tape.col_scale(o.v, one_minus));
  const nn::Var l_cons = tape.scale(
      tape.weighted_sq(x1hat, nn::Mat<S>::Zero(a.chunk_dim(), cols), nc, std::max(n_nc, S(1))),
      static_cast<S>(w.lambda_c));
  const nn::Var l_sparse =
      tape.scale(tape.mean(tape.activation(o.logits, nn::Act::sigmoid)), static_cast<S>(w.lambda_s));
  const nn::Var total = tape.add(tape.add(l_mask, l_wrench), tape.add(l_cons, l_sparse));
  if (out) {
    out->mask = tape.scalar(l_mask);
    out->wrench = tape.scalar(l_wrench);
    out->consistency = tape.scalar(l_cons);
    out->sparsity = tape.scalar(l_sparse);
    out->total = tape.scalar(total);
  }
  return total;
}

struct CfmTrainConfig {
  long steps = 20000;
  int batch = 64;
  double lr = 3e-4;
  double lr_min = 0.0;
  long warmup = 500;
  double grad_clip = 1.0;     // global norm; <= 0 disables
  std::uint64_t seed = 1;
  double noise_augment = 0.0;  // per-sample sigma ~ U[0, noise_augment] on normalized channels
  CfmLossWeights loss;
  int log_every = 100;
};

struct TrainHistory {
  std::vector<long> steps;
  std::vector<LossBreakdown> loss;  // averaged over each logging interval
  double seconds = 0.0;
};

using ProgressFn = std::function<void(long step, const LossBreakdown& avg)>;

/// Copies dataset records into token-column batch matrices.
void gather_batch(const Dataset& ds, const std::vector<std::int64_t>& rows, const CfmArchitecture& a,
                  CfmBatch<float>& b);

/// Draws flow times and source noise for a gathered batch.
template <class S>
void draw_flow(CfmBatch<S>& b, int h_win, Rng& rng) {
  const int B = static_cast<int>(b.obs.cols() / h_win);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  b.t.resize(B);
  for (auto& t : b.t) t = u(rng);
  b.x0.resize(b.x1.rows(), b.x1.cols());
  for (Eigen::Index j = 0; j < b.x0.cols(); ++j)
    for (Eigen::Index i = 0; i < b.x0.rows(); ++i) b.x0(i, j) = static_cast<S>(n(rng));
}

/// One optimizer step on a prepared batch. Throws on a non-finite loss.
LossBreakdown cfm_train_step(VelocityField<float>& model, nn::Adam<float>& opt, const CfmBatch<float>& batch,
                             const CfmLossWeights& w, double lr, double grad_clip);

/// Layout of observation channels implied by a dataset header.
ObservationLayout layout_from_header(const DatasetHeader& h);

TrainHistory train_cfm(VelocityField<float>& model, const Dataset& ds, const CfmTrainConfig& cfg,
                       const ProgressFn& progress = {});

// --- sampling -------------------------------------------------------------------

/// Euler integration of the flow for each window (rows of `windows`, each
/// H*obs_dim floats); samples are drawn window by window from `rng`.
std::vector<GatedPrediction> sample(const VelocityField<float>& model, const MatF& windows,
                                    const FlowSchedule& schedule, Rng& rng, double delta, int batch = 64);

GatedPrediction sample_one(const VelocityField<float>& model, const MatF& window, const FlowSchedule& schedule,
                           Rng& rng, double delta);

/// Norm of the last Euler update, averaged over windows (flow convergence probe).
double terminal_update_norm(const VelocityField<float>& model, const MatF& windows, const FlowSchedule& schedule,
                            Rng& rng);

// --- checkpoint files -----------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic> value;
};

struct ModelFile {
  std::string kind;               // "cfm" or "mlp"
  std::string architecture_json;  // compact JSON object
  std::string meta_json = "{}";
  std::vector<NamedTensor> tensors;
};

void write_model_file(const std::string& path, const ModelFile& f);
ModelFile read_model_file(const std::string& path);

void save_checkpoint(const VelocityField<float>& model, const std::string& path, const std::string& meta_json = "{}");
VelocityField<float> load_checkpoint(const std::string& path, std::string* meta_json = nullptr);

}  // namespace wrenchfield
