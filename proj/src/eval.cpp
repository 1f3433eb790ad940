#include "wrenchfield/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace wrenchfield {

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

double pct(double num, double den) { return den > 0 ? 100.0 * num / den : 0.0; }

/// Force and torque components of a wrench row segment.
struct Split {
  int force = 0;
  int torque = 0;
};

Split split_of(int w) {
  if (w == 3) return {2, 1};
  if (w == 6) return {3, 3};
  return {w, 0};
}

Eigen::VectorXd region_wrench(const MatF& wrench, int frame, int region, int w) {
  return wrench.row(frame).segment(region * w, w).transpose().cast<double>();
}

std::vector<DetectedEvent> runs(const MatF& mask, const MatF& wrench, int w, double delta, int min_len,
                                bool strict_zero) {
  std::vector<DetectedEvent> out;
  const int H = static_cast<int>(mask.rows());
  for (int r = 0; r < mask.cols(); ++r) {
    int f = 0;
    while (f < H) {
      const auto active = [&](int k) { return strict_zero ? mask(k, r) > 0.0f : mask(k, r) > delta; };
      if (!active(f)) {
        ++f;
        continue;
      }
      int end = f;
      while (end + 1 < H && active(end + 1)) ++end;
      if (end - f + 1 >= min_len) {
        DetectedEvent e;
        e.region = r;
        e.onset = f;
        e.offset = end;
        double best = -1.0;
        for (int k = f; k <= end; ++k) {
          const double n = region_wrench(wrench, k, r, w).norm();
          if (n > best) {
            best = n;
            e.peak_frame = k;
          }
          e.peak_prob = std::max(e.peak_prob, static_cast<double>(mask(k, r)));
        }
        e.wrench = region_wrench(wrench, e.peak_frame, r, w);
        out.push_back(std::move(e));
      }
      f = end + 1;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const DetectedEvent& a, const DetectedEvent& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.region < b.region;
  });
  return out;
}

struct Match {
  int det = 0;
  int truth = 0;
};

/// Greedy one-to-one assignment by onset gap, then hop distance.
std::vector<Match> match_events(const std::vector<DetectedEvent>& det, const std::vector<DetectedEvent>& truth,
                                const Eigen::MatrixXi& hops) {
  struct Cand {
    int dt, hop, d, t;
  };
  std::vector<Cand> cands;
  for (int d = 0; d < static_cast<int>(det.size()); ++d)
    for (int t = 0; t < static_cast<int>(truth.size()); ++t)
      cands.push_back({std::abs(det[d].onset - truth[t].onset), hops(det[d].region, truth[t].region), d, t});
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return std::tie(a.dt, a.hop, a.d, a.t) < std::tie(b.dt, b.hop, b.d, b.t);
  });
  std::vector<bool> used_d(det.size(), false), used_t(truth.size(), false);
  std::vector<Match> out;
  for (const auto& c : cands) {
    if (used_d[c.d] || used_t[c.t]) continue;
    used_d[c.d] = used_t[c.t] = true;
    out.push_back({c.d, c.t});
  }
  return out;
}

double angle_deg(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double cross = 0.0;
  if (a.size() == 2) {
    cross = std::abs(a(0) * b(1) - a(1) * b(0));
  } else if (a.size() == 3) {
    cross = a.head<3>().cross(b.head<3>()).norm();
  } else {
    const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
    return std::acos(c) * kRadToDeg;
  }
  return std::atan2(cross, a.dot(b)) * kRadToDeg;
}

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double get() const { return n ? sum / n : 0.0; }
};

}  // namespace

void validate(const PredictionRecord& p, int h_win, int n_regions, int wrench_dim) {
  if (p.mask.rows() != h_win || p.mask.cols() != n_regions)
    throw EvalError("prediction mask must be " + std::to_string(h_win) + "x" + std::to_string(n_regions) +
                    ", got " + std::to_string(p.mask.rows()) + "x" + std::to_string(p.mask.cols()));
  if (p.wrench.rows() != h_win || p.wrench.cols() != n_regions * wrench_dim)
    throw EvalError("prediction wrench must be " + std::to_string(h_win) + "x" +
                    std::to_string(n_regions * wrench_dim) + ", got " + std::to_string(p.wrench.rows()) + "x" +
                    std::to_string(p.wrench.cols()));
  if (!p.mask.allFinite() || !p.wrench.allFinite()) throw EvalError("prediction holds non-finite values");
}

std::vector<DetectedEvent> extract_events(const MatF& mask, const MatF& wrench, int wrench_dim, double delta,
                                          int min_duration) {
  if (min_duration < 1) throw EvalError("min_duration must be >= 1");
  return runs(mask, wrench, wrench_dim, delta, min_duration, false);
}

std::vector<DetectedEvent> true_events(const MatF& mask, const MatF& wrench, int wrench_dim) {
  return runs(mask, wrench, wrench_dim, 0.0, 1, true);
}

Eigen::MatrixXi region_hop_matrix(const RobotModel& model) {
  const int n = model.region_count();
  Eigen::MatrixXi h(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) h(a, b) = model.region_hops(a, b);
  return h;
}

MetricsReport score(const std::vector<PredictionRecord>& predictions, const Dataset& truth,
                    const Eigen::MatrixXi& hops, const ScoreOptions& opts) {
  const auto& hd = truth.header;
  if (static_cast<std::int64_t>(predictions.size()) != truth.size())
    throw EvalError("prediction count " + std::to_string(predictions.size()) + " does not match ground truth " +
                    std::to_string(truth.size()));
  if (hops.rows() != hd.n_regions || hops.cols() != hd.n_regions) throw EvalError("hop matrix size mismatch");
  const int w = hd.wrench_dim;
  const Split split = split_of(w);

  MetricsReport rep;
  rep.options = opts;
  if (!predictions.empty()) rep.estimator = predictions.front().estimator;

  int detected_neg = 0, strict_hits = 0, localized = 0;
  int link_hits = 0, tol_link_hits = 0, time_hits = 0, tol_time_hits = 0;
  Mean dist, interval, fmag, fdir, tmag, tdir, runtime;

  struct TopKCounts {
    int det = 0, fa = 0, exact = 0, link = 0, tlink = 0, time = 0, ttime = 0;
  };
  std::vector<TopKCounts> tk(opts.top_k.size());

  for (std::int64_t i = 0; i < truth.size(); ++i) {
    const auto& p = predictions[static_cast<std::size_t>(i)];
    validate(p, hd.h_win, hd.n_regions, w);
    runtime.add(p.runtime_ms);
    const Clip gt = truth.clip(i);
    const auto det = extract_events(p.mask, p.wrench, w, opts.delta, opts.min_duration);
    const bool pos = truth.positive(i);
    if (!pos) {
      ++rep.negatives;
      if (!det.empty()) ++detected_neg;
      for (std::size_t k = 0; k < tk.size(); ++k)
        if (!det.empty()) ++tk[k].fa;
      continue;
    }
    ++rep.positives;
    if (det.empty()) continue;
    ++rep.detected_positives;

    const auto tru = true_events(gt.mask, gt.wrench, w);
    const auto matches = match_events(det, tru, hops);
    rep.matched += static_cast<int>(matches.size());
    rep.unmatched_detections += static_cast<int>(det.size() - matches.size());

    std::set<int> det_regions, true_regions;
    for (const auto& e : det) det_regions.insert(e.region);
    for (const auto& e : tru) true_regions.insert(e.region);
    if (std::includes(det_regions.begin(), det_regions.end(), true_regions.begin(), true_regions.end()))
      ++strict_hits;

    bool exact_region = false;
    for (const auto& m : matches) {
      const auto& d = det[m.det];
      const auto& t = tru[m.truth];
      const int hop = hops(d.region, t.region);
      const int gap = std::abs(d.onset - t.onset);
      if (hop == 0) {
        ++link_hits;
        exact_region = true;
      }
      if (hop <= opts.link_tolerance) ++tol_link_hits;
      if (gap == 0) ++time_hits;
      if (gap <= opts.time_tolerance) ++tol_time_hits;
      dist.add(hop);
      interval.add(gap * opts.frame_dt * 1000.0);

      const int ref_frame = gt.mask(d.peak_frame, t.region) > 0.0f ? d.peak_frame : t.peak_frame;
      const Eigen::VectorXd truth_w = region_wrench(gt.wrench, ref_frame, t.region, w);
      const Eigen::VectorXd fp = d.wrench.head(split.force), ft = truth_w.head(split.force);
      fmag.add(std::abs(fp.norm() - ft.norm()));
      if (fp.norm() > 0 && ft.norm() > 0) fdir.add(angle_deg(fp, ft));
      if (split.torque > 0) {
        const Eigen::VectorXd tp = d.wrench.tail(split.torque), tt = truth_w.tail(split.torque);
        tmag.add(std::abs(tp.norm() - tt.norm()));
        if (tp.norm() > 0 && tt.norm() > 0) {
          if (split.torque == 1)
            tdir.add((tp(0) > 0) == (tt(0) > 0) ? 0.0 : 180.0);
          else
            tdir.add(angle_deg(tp, tt));
        }
      }
    }
    if (exact_region) ++localized;

    // Top-k: detected regions ranked by their peak probability.
    std::vector<std::pair<double, int>> ranked;
    for (int r : det_regions) {
      double best = 0.0;
      for (const auto& e : det)
        if (e.region == r) best = std::max(best, e.peak_prob);
      ranked.emplace_back(-best, r);
    }
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t k = 0; k < tk.size(); ++k) {
      const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(opts.top_k[k]), ranked.size());
      std::set<int> top;
      for (std::size_t j = 0; j < kk; ++j) top.insert(ranked[j].second);
      auto& c = tk[k];
      ++c.det;
      bool link = false, tlink = false, time = false, ttime = false, exact = false;
      for (int r : top)
        for (int s : true_regions) {
          if (r == s) link = true;
          if (hops(r, s) <= opts.link_tolerance) tlink = true;
        }
      for (const auto& e : det) {
        if (!top.count(e.region)) continue;
        for (const auto& t : tru) {
          const int gap = std::abs(e.onset - t.onset);
          if (gap == 0) time = true;
          if (gap <= opts.time_tolerance) ttime = true;
          if (gap == 0 && e.region == t.region) exact = true;
        }
      }
      c.link += link;
      c.tlink += tlink;
      c.time += time;
      c.ttime += ttime;
      c.exact += exact;
    }
  }

  const double located = rep.matched;
  rep.detection = pct(rep.detected_positives, rep.positives);
  rep.miss = rep.positives > 0 ? 100.0 - rep.detection : 0.0;
  rep.false_alarm = pct(detected_neg, rep.negatives);
  rep.strict_detection = pct(strict_hits, rep.positives);
  rep.target_link = pct(link_hits, located);
  rep.tolerant_link = pct(tol_link_hits, located);
  rep.target_time = pct(time_hits, located);
  rep.tolerant_time = pct(tol_time_hits, located);
  rep.localization = pct(localized, rep.positives);
  rep.distance_links = dist.get();
  rep.interval_ms = interval.get();
  rep.force_mag = fmag.get();
  rep.force_dir_deg = fdir.get();
  rep.torque_mag = tmag.get();
  rep.torque_dir_deg = tdir.get();
  rep.runtime_ms = runtime.get();
  for (std::size_t k = 0; k < tk.size(); ++k) {
    const auto& c = tk[k];
    TopKBlock b;
    b.k = opts.top_k[k];
    b.detection = pct(c.det, rep.positives);
    b.false_alarm = pct(c.fa, rep.negatives);
    b.any_exact_hit = pct(c.exact, rep.positives);
    b.target_link = pct(c.link, c.det);
    b.tolerant_link = pct(c.tlink, c.det);
    b.target_time = pct(c.time, c.det);
    b.tolerant_time = pct(c.ttime, c.det);
    rep.topk.push_back(b);
  }
  return rep;
}

std::string metrics_csv_header(bool with_runtime) {
  return std::string("estimator,delta,positives,negatives,detection_pct,miss_pct,false_alarm_pct,strict_detection_pct,"
         "target_link_pct,tolerant_link_pct,target_time_pct,tolerant_time_pct,localization_pct,matched,"
         "unmatched,distance_links,interval_ms,force_mag_N,force_dir_deg,torque_mag_Nm,torque_dir_deg,") +
         (with_runtime ? "runtime_ms," : "") + "topk";
}

std::string metrics_csv_row(const MetricsReport& r, bool with_runtime) {
  std::ostringstream s;
  s << std::setprecision(6) << r.estimator << ',' << r.options.delta << ',' << r.positives << ',' << r.negatives
    << ',' << r.detection << ',' << r.miss << ',' << r.false_alarm << ',' << r.strict_detection << ','
    << r.target_link << ',' << r.tolerant_link << ',' << r.target_time << ',' << r.tolerant_time << ','
    << r.localization << ',' << r.matched << ',' << r.unmatched_detections << ',' << r.distance_links << ','
    << r.interval_ms << ',' << r.force_mag << ',' << r.force_dir_deg << ',' << r.torque_mag << ','
    << r.torque_dir_deg << ',';
  if (with_runtime) s << r.runtime_ms << ',';
  for (std::size_t i = 0; i < r.topk.size(); ++i) {
    const auto& b = r.topk[i];
    if (i) s << ';';
    s << "k" << b.k << ":" << b.detection << "/" << b.false_alarm << "/" << b.any_exact_hit << "/"
      << b.target_link << "/" << b.tolerant_link << "/" << b.target_time << "/" << b.tolerant_time;
  }
  return s.str();
}

std::string metrics_csv(const std::vector<MetricsReport>& reports, bool with_runtime) {
  std::string out = metrics_csv_header(with_runtime) + "\n";
  for (const auto& r : reports) out += metrics_csv_row(r, with_runtime) + "\n";
  return out;
}

std::string metrics_markdown(const std::vector<MetricsReport>& reports, const std::string& title,
                             bool with_runtime) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1);
  s << "# " << title << "\n\n";
  if (!reports.empty()) {
    const auto& o = reports.front().options;
    s << "Events: mask > " << o.delta << " for >= " << o.min_duration << " frames. Tolerances: +/-"
      << o.time_tolerance << " frames (" << o.time_tolerance * o.frame_dt * 1000.0 << " ms), <= "
      << o.link_tolerance << " link hop. Detection and false alarm over positive and negative clips; where/when over "
         "matched detections on positive clips; errors over matched events. Percentages unless noted.\n\n";
  }
  auto header = [&](const std::string& first) {
    s << "| " << first << " |";
    for (const auto& r : reports) s << ' ' << r.estimator << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < reports.size(); ++i) s << "---|";
    s << '\n';
  };
  auto row = [&](const std::string& name, auto get) {
    s << "| " << name << " |";
    for (const auto& r : reports) s << ' ' << get(r) << " |";
    s << '\n';
  };
  header("Contact awareness");
  row("Detection (whether)", [](const MetricsReport& r) { return r.detection; });
  row("False alarm", [](const MetricsReport& r) { return r.false_alarm; });
  row("Target link (where)", [](const MetricsReport& r) { return r.target_link; });
  row("Tolerant link", [](const MetricsReport& r) { return r.tolerant_link; });
  row("Target time (when)", [](const MetricsReport& r) { return r.target_time; });
  row("Tolerant time", [](const MetricsReport& r) { return r.tolerant_time; });
  row("Strict detection (all regions)", [](const MetricsReport& r) { return r.strict_detection; });
  row("Localization accuracy", [](const MetricsReport& r) { return r.localization; });
  s << '\n';
  header("Estimation error");
  s << std::setprecision(2);
  row("Distance (links)", [](const MetricsReport& r) { return r.distance_links; });
  row("Interval (ms)", [](const MetricsReport& r) { return r.interval_ms; });
  row("Force magnitude (N)", [](const MetricsReport& r) { return r.force_mag; });
  row("Force direction (deg)", [](const MetricsReport& r) { return r.force_dir_deg; });
  row("Torque magnitude (N m)", [](const MetricsReport& r) { return r.torque_mag; });
  row("Torque direction (deg)", [](const MetricsReport& r) { return r.torque_dir_deg; });
  if (with_runtime) row("Runtime per window (ms)", [](const MetricsReport& r) { return r.runtime_ms; });
  s << '\n';
  if (!reports.empty() && !reports.front().topk.empty()) {
    s << std::setprecision(1);
    for (std::size_t k = 0; k < reports.front().topk.size(); ++k) {
      header("Top-" + std::to_string(reports.front().topk[k].k));
      auto blk = [&](const MetricsReport& r) -> const TopKBlock& { return r.topk.at(k); };
      row("Detection", [&](const MetricsReport& r) { return blk(r).detection; });
      row("False alarm", [&](const MetricsReport& r) { return blk(r).false_alarm; });
      row("Any exact hit", [&](const MetricsReport& r) { return blk(r).any_exact_hit; });
      row("Target link", [&](const MetricsReport& r) { return blk(r).target_link; });
      row("Tolerant link", [&](const MetricsReport& r) { return blk(r).tolerant_link; });
      row("Target time", [&](const MetricsReport& r) { return blk(r).target_time; });
      row("Tolerant time", [&](const MetricsReport& r) { return blk(r).tolerant_time; });
      s << '\n';
    }
  }
  return s.str();
}

Dataset predictions_to_dataset(const std::vector<PredictionRecord>& preds, const Dataset& inputs,
                               bool record_runtime) {
  if (static_cast<std::int64_t>(preds.size()) != inputs.size())
    throw EvalError("prediction count does not match input windows");
  Dataset ds;
  ds.header = inputs.header;
  ds.header.source = "prediction";
  ds.resize(inputs.size());
  ds.obs = inputs.obs;
  const auto& h = ds.header;
  double runtime = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    validate(preds[i], h.h_win, h.n_regions, h.wrench_dim);
    ds.mask.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXf>(preds[i].mask.data(), preds[i].mask.size());
    ds.wrench.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXf>(preds[i].wrench.data(), preds[i].wrench.size());
    runtime += preds[i].runtime_ms;
  }
  ds.header.positive_count = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) ds.header.positive_count += ds.positive(i);
  ds.header.meta["estimator"] = preds.empty() ? "" : preds.front().estimator;
  if (record_runtime) ds.header.meta["runtime_ms"] = std::to_string(preds.empty() ? 0.0 : runtime / preds.size());
  return ds;
}

std::vector<PredictionRecord> predictions_from_dataset(const Dataset& ds) {
  if (ds.header.source != "prediction") throw EvalError("dataset does not hold predictions");
  const auto& h = ds.header;
  std::vector<PredictionRecord> out(static_cast<std::size_t>(ds.size()));
  const auto est = h.meta.count("estimator") ? h.meta.at("estimator") : std::string("unknown");
  const double runtime = h.meta.count("runtime_ms") ? std::stod(h.meta.at("runtime_ms")) : 0.0;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    auto& p = out[static_cast<std::size_t>(i)];
    p.estimator = est;
    p.runtime_ms = runtime;
    p.mask = Eigen::Map<const MatF>(ds.mask.row(i).data(), h.h_win, h.n_regions);
    p.wrench = Eigen::Map<const MatF>(ds.wrench.row(i).data(), h.h_win, h.n_regions * h.wrench_dim);
  }
  return out;
}

}  // namespace wrenchfield
