#include "doctest.h"
#include "wrenchfield/cfm.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace wrenchfield;
using nn::Mat;

namespace {

CfmArchitecture small_arch(const std::string& head = "attention", bool time_mixing = false) {
  CfmArchitecture a;
  a.h_win = 4;
  a.n_regions = 3;
  a.wrench_dim = 3;
  a.obs_dim = 5;
  a.d_model = 8;
  a.layers = 2;
  a.expansion = 2;
  a.attn_dim = 4;
  a.time_hidden = 3;
  a.head = head;
  a.time_mixing = time_mixing;
  return a;
}

template <class S>
Mat<S> randn(int r, int c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<S> m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = static_cast<S>(n(rng));
  return m;
}

template <class S>
void randomize(VelocityField<S>& m, Rng& rng, double scale = 0.5) {
  for (auto& p : m.params()) p.value = randn<S>(p.value.rows(), p.value.cols(), rng) * static_cast<S>(scale);
}

template <class S>
CfmBatch<S> random_batch(const CfmArchitecture& a, int B, Rng& rng) {
  CfmBatch<S> b;
  b.obs = randn<S>(a.obs_dim, B * a.h_win, rng);
  b.x1 = randn<S>(a.chunk_dim(), B * a.h_win, rng);
  b.mask = Mat<S>::Zero(a.n_regions, B * a.h_win);
  for (int j = 0; j < B * a.h_win; j += 3) {
    b.mask((j / 3) % a.n_regions, j) = 1;
    // cells without contact keep a zero chunk as in real data
  }
  draw_flow(b, a.h_win, rng);
  return b;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("wf_cfm_" + name)).string();
}

}  // namespace

TEST_CASE("cfm: zero-initialized heads give zero velocity and mask logits") {
  for (const std::string head : {"attention", "linear"}) {
    const auto a = small_arch(head);
    VelocityField<float> m(a, 3);
    nn::Tape<float> t;
    Rng rng(1);
    const auto vars = m.params().bind(t);
    const auto o = m.forward(t, vars, t.constant(randn<float>(a.obs_dim, 2 * a.h_win, rng)),
                             t.constant(randn<float>(a.chunk_dim(), 2 * a.h_win, rng)), {0.2, 0.7});
    CHECK(t.value(o.v).isZero(0.0f));
    CHECK(t.value(o.logits).isZero(0.0f));
  }
}

TEST_CASE("cfm: velocity output shape equals chunk shape across configurations") {
  Rng rng(2);
  for (int H : {1, 4, 7})
    for (int N : {1, 3})
      for (int w : {1, 3})
        for (const std::string head : {"attention", "linear"}) {
          CfmArchitecture a = small_arch(head, H > 1);
          a.h_win = H;
          a.n_regions = N;
          a.wrench_dim = w;
          a.wrench_scale.assign(w, 1.0);
          VelocityField<float> m(a, 5);
          nn::Tape<float> t;
          const auto vars = m.params().bind(t);
          const auto o = m.forward(t, vars, t.constant(randn<float>(a.obs_dim, 3 * H, rng)),
                                   t.constant(randn<float>(N * w, 3 * H, rng)), {0.0, 0.5, 1.0});
          CHECK(t.value(o.v).rows() == N * w);
          CHECK(t.value(o.v).cols() == 3 * H);
          CHECK(t.value(o.logits).rows() == N);
          CHECK(t.value(o.logits).cols() == 3 * H);
        }
}

TEST_CASE("cfm: velocity rejects mismatched inputs") {
  const auto a = small_arch();
  VelocityField<float> m(a, 1);
  nn::Tape<float> t;
  Rng rng(3);
  const auto vars = m.params().bind(t);
  CHECK_THROWS_AS(m.forward(t, vars, t.constant(randn<float>(a.obs_dim + 1, a.h_win, rng)),
                            t.constant(randn<float>(a.chunk_dim(), a.h_win, rng)), {0.5}),
                  CfmError);
  CHECK_THROWS_AS(m.forward(t, vars, t.constant(randn<float>(a.obs_dim, a.h_win, rng)),
                            t.constant(randn<float>(a.chunk_dim(), a.h_win, rng)), {0.5, 0.1}),
                  CfmError);
}

namespace {

double param_gradient_error(const CfmArchitecture& a, bool full_loss, std::uint64_t seed, int coords) {
  Rng rng(seed);
  VelocityField<double> m(a, seed);
  randomize(m, rng);
  const auto b = random_batch<double>(a, 2, rng);
  const Mat<double> proj = randn<double>(a.chunk_dim(), 2 * a.h_win, rng);
  const Mat<double> projl = randn<double>(a.n_regions, 2 * a.h_win, rng);

  auto objective = [&](const VelocityField<double>& model, nn::Tape<double>& t, const std::vector<nn::Var>& vars) {
    if (full_loss) return cfm_loss(t, model, vars, b, CfmLossWeights{0.3, 0.2, 0.1});
    const auto o = model.forward(t, vars, t.constant(b.obs), t.constant(b.x1), b.t);
    return t.add(t.sum(t.hadamard(o.v, t.constant(proj))), t.sum(t.hadamard(o.logits, t.constant(projl))));
  };

  nn::Tape<double> t;
  const auto vars = m.params().bind(t);
  t.backward(objective(m, t, vars));
  m.params().zero_grad();
  m.params().collect(t, vars);

  auto value = [&]() {
    nn::Tape<double> tt;
    const auto vv = m.params().bind(tt);
    return tt.scalar(objective(m, tt, vv));
  };
  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> pick(0, m.params().size() - 1);
  for (int k = 0; k < coords; ++k) {
    auto& p = m.params()[pick(rng)];
    std::uniform_int_distribution<Eigen::Index> el(0, p.value.size() - 1);
    const Eigen::Index e = el(rng);
    const double x0 = p.value.data()[e];
    auto central = [&](double h) {
      p.value.data()[e] = x0 + h;
      const double fp = value();
      p.value.data()[e] = x0 - h;
      const double fm = value();
      p.value.data()[e] = x0;
      return (fp - fm) / (2 * h);
    };
    // Richardson extrapolation of two central differences: O(h^4) truncation
    const double num = (4 * central(1e-4) - central(2e-4)) / 3, ana = p.grad.data()[e];
    worst = std::max(worst, std::abs(num - ana) / std::max({1e-6, std::abs(num), std::abs(ana)}));
  }
  return worst;
}

}  // namespace

TEST_CASE("cfm: parameter gradients of the velocity field match finite differences at 20 coordinates") {
  for (const std::string head : {"attention", "linear"})
    for (bool tm : {false, true}) {
      CAPTURE(head);
      CAPTURE(tm);
      CHECK(param_gradient_error(small_arch(head, tm), false, 21, 20) < 1e-4);
    }
}

TEST_CASE("cfm: the full composite loss passes finite-difference checks") {
  for (const std::string head : {"attention", "linear"})
    for (bool tm : {false, true}) {
      CAPTURE(head);
      CAPTURE(tm);
      CHECK(param_gradient_error(small_arch(head, tm), true, 33, 40) < 1e-4);
    }
}

TEST_CASE("cfm: loss terms are nonnegative and sum to the total") {
  Rng rng(4);
  const auto a = small_arch();
  VelocityField<double> m(a, 4);
  randomize(m, rng);
  const auto b = random_batch<double>(a, 3, rng);
  nn::Tape<double> t;
  LossBreakdown lb;
  cfm_loss(t, m, m.params().bind(t), b, CfmLossWeights{}, &lb);
  CHECK(lb.mask >= 0);
  CHECK(lb.wrench >= 0);
  CHECK(lb.consistency >= 0);
  CHECK(lb.sparsity >= 0);
  CHECK(lb.total == doctest::Approx(lb.mask + lb.wrench + lb.consistency + lb.sparsity));
}

TEST_CASE("cfm: all-zero mask with strongly negative logits drives mask and sparsity terms to zero") {
  Rng rng(5);
  const auto a = small_arch("linear");
  VelocityField<double> m(a, 5);
  for (auto& p : m.params())
    if (p.name == "mask_head.b") p.value.setConstant(-60.0);
  auto b = random_batch<double>(a, 2, rng);
  b.mask.setZero();
  nn::Tape<double> t;
  LossBreakdown lb;
  cfm_loss(t, m, m.params().bind(t), b, CfmLossWeights{}, &lb);
  CHECK(lb.mask < 1e-20);
  CHECK(lb.sparsity < 1e-20);
}

TEST_CASE("cfm: an exactly representable velocity makes the wrench term vanish") {
  // With sigma_min = 0 the target u = x1 - x0 equals (x1 - x_t)/(1 - t); a model
  // whose velocity is u reaches the floor of the wrench objective.
  Rng rng(6);
  const auto a = small_arch("linear");
  auto b = random_batch<double>(a, 2, rng);
  nn::Tape<double> t;
  const nn::Var v = t.variable(b.x1 - b.x0);
  Mat<double> lam = Mat<double>::Ones(a.chunk_dim(), b.x1.cols());
  CHECK(t.scalar(t.weighted_sq(v, b.x1 - b.x0, lam, 1.0)) == 0.0);
}

TEST_CASE("cfm: training on a deterministic toy shrinks the wrench loss, terminal error and path curvature") {
  // For a deterministic target the exact flow is a straight line, so the last
  // Euler update tends to dt*(x1 - x0) and one step reproduces ten steps.
  CfmArchitecture a;
  a.h_win = 1;
  a.n_regions = 1;
  a.wrench_dim = 1;
  a.obs_dim = 1;
  a.d_model = 32;
  a.layers = 2;
  a.expansion = 2;
  a.head = "linear";
  a.wrench_scale = {1.0};
  VelocityField<float> m(a, 9);
  nn::Adam<float> opt(m.params());
  Rng rng(10);
  std::uniform_int_distribution<int> coin(0, 1);
  auto make = [&](int B) {
    CfmBatch<float> b;
    b.obs.resize(1, B);
    b.x1.resize(1, B);
    b.mask = Mat<float>::Ones(1, B);
    for (int s = 0; s < B; ++s) {
      const float c = coin(rng) ? 1.0f : -1.0f;
      b.obs(0, s) = c;
      b.x1(0, s) = c;
    }
    draw_flow(b, 1, rng);
    return b;
  };
  MatF probe(64, 1);
  for (int i = 0; i < 64; ++i) probe(i, 0) = i % 2 ? 1.0f : -1.0f;
  auto probe_errors = [&]() {
    Rng r1(1), r2(1);
    const auto ten = sample(m, probe, FlowSchedule{10}, r1, 0.5);
    const auto one = sample(m, probe, FlowSchedule{1}, r2, 0.5);
    double target = 0, curvature = 0;
    for (int i = 0; i < 64; ++i) {
      target += std::abs(ten[i].raw(0, 0) - probe(i, 0)) / 64;
      curvature += std::abs(ten[i].raw(0, 0) - one[i].raw(0, 0)) / 64;
    }
    return std::pair<double, double>{target, curvature};
  };
  double first = 0, last = 0;
  std::vector<std::pair<double, double>> checkpoints;
  for (int step = 0; step < 1500; ++step) {
    const auto lb = cfm_train_step(m, opt, make(64), CfmLossWeights{}, nn::cosine_lr(3e-3, 1e-4, step, 1500, 50), 1.0);
    if (step < 50) first += lb.wrench / 50;
    if (step >= 1450) last += lb.wrench / 50;
    if (step == 100 || step == 400 || step == 1499) checkpoints.push_back(probe_errors());
  }
  CHECK(last < 0.1 * first);
  CHECK(checkpoints[0].first > checkpoints[1].first);
  CHECK(checkpoints[1].first > checkpoints[2].first);
  CHECK(checkpoints[0].second > checkpoints[2].second);
  CHECK(checkpoints[2].first < 0.1);
  CHECK(checkpoints[2].second < 0.1);
  Rng r5(3);
  CHECK(terminal_update_norm(m, probe, FlowSchedule{10}, r5) > 0.0);
}

TEST_CASE("cfm: single-step schedule is one Euler step from the source sample") {
  const auto a = small_arch();
  VelocityField<float> m(a, 12);
  Rng rng(13);
  randomize(m, rng, 0.3);
  const Mat<float> obs = randn<float>(a.obs_dim, a.h_win, rng);
  MatF window = Eigen::Map<const MatF>(obs.data(), 1, obs.size());

  Rng s1(99);
  const auto g = sample(m, window, FlowSchedule{1}, s1, 0.5).front();

  Rng s2(99);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<float> x0(a.chunk_dim(), a.h_win);
  for (int j = 0; j < x0.cols(); ++j)
    for (int i = 0; i < x0.rows(); ++i) x0(i, j) = static_cast<float>(n(s2));
  nn::Tape<float> t;
  const auto o = m.forward(t, m.params().bind(t), t.constant(obs), t.constant(x0), {0.0});
  const Mat<float> x1 = x0 + t.value(o.v);
  MatF expected = destandardize_chunk(MatF(x1.transpose()), a.wrench_scale);
  CHECK((g.raw - expected).norm() < 1e-5f * (1 + expected.norm()));
  MatF mask = t.value(o.logits).transpose().unaryExpr([](float l) { return nn::Tape<float>::sigmoid(l); });
  CHECK((g.mask - mask).norm() < 1e-6f);
}

TEST_CASE("cfm: gating zeroes wrenches at or below the threshold and is idempotent") {
  Rng rng(14);
  MatF mask(4, 2), raw(4, 6);
  mask << 0.9f, 0.1f, 0.5f, 0.51f, 0.0f, 1.0f, 0.3f, 0.7f;
  raw.setRandom();
  const auto g = gate(mask, raw, 0.5, 3);
  for (int t = 0; t < 4; ++t)
    for (int i = 0; i < 2; ++i) {
      const bool on = mask(t, i) > 0.5f;
      for (int c = 0; c < 3; ++c) CHECK(g.gated(t, i * 3 + c) == (on ? raw(t, i * 3 + c) : 0.0f));
    }
  CHECK(gate_wrench(mask, g.gated, 0.5, 3) == g.gated);
}

TEST_CASE("cfm: standardization round trip") {
  Rng rng(15);
  MatF w = MatF::Random(5, 21) * 80.0f;
  const std::vector<double> s{50.0, 50.0, 10.0};
  const MatF back = destandardize_chunk(standardize_chunk(w, s), s);
  CHECK((back - w).cwiseAbs().maxCoeff() < 1e-6f * 80.0f);
  CHECK(standardize_chunk(w, s)(2, 2) == doctest::Approx(w(2, 2) / 10.0f));
}

TEST_CASE("cfm: sampling is deterministic given seed, model, window and schedule") {
  const auto a = small_arch();
  VelocityField<float> m(a, 16);
  Rng rng(17);
  randomize(m, rng, 0.3);
  MatF windows = MatF::Random(5, a.h_win * a.obs_dim);
  Rng r1(5), r2(5), r3(6);
  const auto p1 = sample(m, windows, FlowSchedule{10}, r1, 0.5, 2);
  const auto p2 = sample(m, windows, FlowSchedule{10}, r2, 0.5, 2);
  const auto p3 = sample(m, windows, FlowSchedule{10}, r3, 0.5, 2);
  for (int i = 0; i < 5; ++i) {
    CHECK(p1[i].raw == p2[i].raw);
    CHECK(p1[i].mask == p2[i].mask);
  }
  CHECK(p1[0].raw != p3[0].raw);
}

TEST_CASE("cfm: architecture JSON round trip and validation") {
  auto a = small_arch("linear", true);
  a.wrench_scale = {1.5, 2.5, 3.5};
  CHECK(architecture_from_json(architecture_to_json(a)) == a);
  CHECK_THROWS_AS(architecture_from_json(R"({"d_model": 0})"), CfmError);
  CHECK_THROWS_AS(architecture_from_json(R"({"heads": "x"})"), CfmError);
  CHECK_THROWS_AS(architecture_from_json(R"({"head": "conv"})"), CfmError);
}

TEST_CASE("checkpoint: save then load reproduces outputs bitwise") {
  const auto a = small_arch("attention", true);
  VelocityField<float> m(a, 18);
  Rng rng(19);
  randomize(m, rng, 0.3);
  const auto path = tmp_path("rt.wsmf");
  save_checkpoint(m, path, R"({"note":"x"})");
  std::string meta;
  const auto back = load_checkpoint(path, &meta);
  CHECK(meta == R"({"note":"x"})");
  CHECK(back.arch() == a);
  for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back.params()[i].value == m.params()[i].value);
  MatF windows = MatF::Random(3, a.h_win * a.obs_dim);
  Rng r1(3), r2(3);
  const auto p1 = sample(m, windows, FlowSchedule{10}, r1, 0.5);
  const auto p2 = sample(back, windows, FlowSchedule{10}, r2, 0.5);
  for (int i = 0; i < 3; ++i) CHECK(p1[i].raw == p2[i].raw);
  const auto path2 = tmp_path("rt2.wsmf");
  save_checkpoint(back, path2, meta);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint: corrupted files are rejected with explicit errors") {
  const auto a = small_arch();
  VelocityField<float> m(a, 20);
  const auto path = tmp_path("bad.wsmf");
  save_checkpoint(m, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary);
    out.write(b.data(), b.size());
  };
  auto message = [&]() -> std::string {
    try {
      load_checkpoint(path);
    } catch (const CfmError& e) {
      return e.what();
    }
    return "";
  };

  write(bytes.substr(0, bytes.size() - 10));
  CHECK(message().find("truncated parameter block") != std::string::npos);
  write(bytes + "xxxx");
  CHECK(message().find("parameter block length mismatch") != std::string::npos);
  std::string badmagic = bytes;
  badmagic[0] = 'X';
  write(badmagic);
  CHECK(message().find("bad magic") != std::string::npos);
  std::string badver = bytes;
  badver[4] = 9;
  write(badver);
  CHECK(message().find("unsupported model file version") != std::string::npos);

  // descriptor claims d_model = 4 while the tensors were written for d_model = 8
  ModelFile f = read_model_file((write(bytes), path));
  auto arch4 = a;
  arch4.d_model = 4;
  f.architecture_json = architecture_to_json(arch4);
  write_model_file(path, f);
  const auto msg = message();
  CHECK(msg.find("shape mismatch for tensor 'embed_obs.w'") != std::string::npos);
  std::remove(path.c_str());
}
