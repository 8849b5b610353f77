// Liveness-score evaluation: ROC/AUC, EER threshold selection, HTER,
// APCER/BPCER/ACER, recall at fixed FPR, plus the CSV/JSON artifact formats.
//
// Conventions (fixed for every function in this header):
//   - a record is classified "live" when score >= threshold;
//   - spoof (liveness == 0) is the negative / attack class;
//   - FPR = FAR = fraction of spoof records at or above the threshold;
//   - rates are reported in percent.
#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dtda/common.hpp"
#include "json.hpp"

namespace dtda {

struct ScoreRecord {
  std::string sample_id;
  double score = 0.0;
  int liveness = 0;  // 1 = live, 0 = spoof
  int domain_id = 0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct EerPoint {
  double threshold = 0.0;
  double far = 0.0;  // fractions, not percent
  double frr = 0.0;
};

struct RecallAtFpr {
  double fpr_target = 0.0;                 // fraction, e.g. 0.01
  std::optional<double> recall_percent;    // null when not resolvable
};

struct MetricsReport {
  double hter_percent = 0.0;
  double auc_percent = 0.0;
  double apcer_percent = 0.0;
  double bpcer_percent = 0.0;
  double acer_percent = 0.0;
  std::vector<RecallAtFpr> recall_at_fpr;
  double threshold_used = 0.0;
  long live_count = 0;
  long spoof_count = 0;
};

namespace detail {

inline void validate_scores(std::span<const ScoreRecord> recs) {
  if (recs.empty()) throw InputError("score set is empty");
  long live = 0, spoof = 0;
  for (const auto& r : recs) {
    if (r.liveness != 0 && r.liveness != 1)
      throw InputError("liveness label must be 0 or 1, got " + std::to_string(r.liveness) +
                       " for sample " + r.sample_id);
    if (!std::isfinite(r.score))
      throw InputError("non-finite score for sample " + r.sample_id);
    (r.liveness ? live : spoof)++;
  }
  if (live == 0 || spoof == 0)
    throw InputError("score set must contain both live and spoof records");
}

// Distinct scores in descending order plus cumulative counts at or above each.
struct SweepTable {
  std::vector<double> score;      // descending, unique
  std::vector<long> live_ge;      // live records with score >= score[i]
  std::vector<long> spoof_ge;
  long live_total = 0;
  long spoof_total = 0;
};

inline SweepTable build_sweep(std::span<const ScoreRecord> recs) {
  std::vector<std::pair<double, int>> sl;
  sl.reserve(recs.size());
  for (const auto& r : recs) sl.emplace_back(r.score, r.liveness);
  std::sort(sl.begin(), sl.end(), [](auto& a, auto& b) { return a.first > b.first; });
  SweepTable t;
  long live = 0, spoof = 0;
  for (size_t i = 0; i < sl.size();) {
    size_t j = i;
    while (j < sl.size() && sl[j].first == sl[i].first) {
      (sl[j].second ? live : spoof)++;
      ++j;
    }
    t.score.push_back(sl[i].first);
    t.live_ge.push_back(live);
    t.spoof_ge.push_back(spoof);
    i = j;
  }
  t.live_total = live;
  t.spoof_total = spoof;
  return t;
}

}  // namespace detail

// One point per distinct score value (threshold sweep, descending), with a
// leading (0, 0) anchor above the maximum score. Ends at (1, 1).
inline std::vector<RocPoint> roc_curve(std::span<const ScoreRecord> recs) {
  detail::validate_scores(recs);
  auto t = detail::build_sweep(recs);
  std::vector<RocPoint> pts;
  pts.reserve(t.score.size() + 1);
  pts.push_back({0.0, 0.0, t.score.front() + 1.0});
  for (size_t i = 0; i < t.score.size(); ++i) {
    pts.push_back({double(t.spoof_ge[i]) / double(t.spoof_total),
                   double(t.live_ge[i]) / double(t.live_total), t.score[i]});
  }
  return pts;
}

// Trapezoidal area under the ROC, in percent. Ties contribute half credit
// through the diagonal tie segments of the curve.
inline double auc_percent(std::span<const ScoreRecord> recs) {
  auto pts = roc_curve(recs);
  double area = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  }
  return area * 100.0;
}

inline EerPoint rates_at_threshold(std::span<const ScoreRecord> recs, double threshold) {
  detail::validate_scores(recs);
  long live = 0, spoof = 0, live_ge = 0, spoof_ge = 0;
  for (const auto& r : recs) {
    if (r.liveness) {
      ++live;
      if (r.score >= threshold) ++live_ge;
    } else {
      ++spoof;
      if (r.score >= threshold) ++spoof_ge;
    }
  }
  EerPoint p;
  p.threshold = threshold;
  p.far = double(spoof_ge) / double(spoof);
  p.frr = double(live - live_ge) / double(live);
  return p;
}

// Candidate thresholds are the midpoints between adjacent distinct scores plus
// one candidate below the minimum and one above the maximum. The candidate
// minimizing |FAR - FRR| wins; ties resolve toward the lower threshold.
inline EerPoint eer_threshold(std::span<const ScoreRecord> recs) {
  detail::validate_scores(recs);
  auto t = detail::build_sweep(recs);
  std::vector<double> cands;
  cands.push_back(t.score.back() - 1.0);
  for (size_t i = t.score.size(); i-- > 1;) {
    cands.push_back((t.score[i] + t.score[i - 1]) / 2.0);
  }
  cands.push_back(t.score.front() + 1.0);
  EerPoint best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double c : cands) {  // ascending; strict improvement keeps the lowest
    EerPoint p = rates_at_threshold(recs, c);
    double gap = std::abs(p.far - p.frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = p;
    }
  }
  return best;
}

inline double hter_percent(std::span<const ScoreRecord> recs, double threshold) {
  EerPoint p = rates_at_threshold(recs, threshold);
  return (p.far + p.frr) / 2.0 * 100.0;
}

struct PadRates {
  double apcer_percent = 0.0;
  double bpcer_percent = 0.0;
  double acer_percent = 0.0;
};

inline PadRates apcer_bpcer_acer(std::span<const ScoreRecord> recs, double threshold) {
  EerPoint p = rates_at_threshold(recs, threshold);
  PadRates r;
  r.apcer_percent = p.far * 100.0;
  r.bpcer_percent = p.frr * 100.0;
  r.acer_percent = (r.apcer_percent + r.bpcer_percent) / 2.0;
  return r;
}

inline double acer_from_rates(double apcer_percent, double bpcer_percent) {
  return (apcer_percent + bpcer_percent) / 2.0;
}

// Best TPR over thresholds whose FPR stays at or below the target. A target
// finer than the spoof count can resolve (spoof_count * target < 1) yields
// null rather than a fabricated number.
inline std::vector<RecallAtFpr> recall_at_fpr(std::span<const ScoreRecord> recs,
                                              std::span<const double> fpr_targets) {
  detail::validate_scores(recs);
  auto t = detail::build_sweep(recs);
  std::vector<RecallAtFpr> out;
  out.reserve(fpr_targets.size());
  for (double target : fpr_targets) {
    if (!(target > 0.0 && target < 1.0))
      throw ConfigError("fpr target must be in (0, 1), got " + format_double(target));
    RecallAtFpr r;
    r.fpr_target = target;
    if (double(t.spoof_total) * target < 1.0 - 1e-9) {
      out.push_back(r);  // unresolvable: null
      continue;
    }
    double best_tpr = 0.0;
    for (size_t i = 0; i < t.score.size(); ++i) {
      double fpr = double(t.spoof_ge[i]) / double(t.spoof_total);
      if (fpr <= target + 1e-12) {
        best_tpr = std::max(best_tpr, double(t.live_ge[i]) / double(t.live_total));
      }
    }
    r.recall_percent = best_tpr * 100.0;
    out.push_back(r);
  }
  return out;
}

struct ReportOptions {
  std::optional<double> fixed_threshold;  // default: EER threshold of the set
  std::vector<double> fpr_targets{0.01, 0.005, 0.001};
};

inline MetricsReport compute_report(std::span<const ScoreRecord> recs,
                                    const ReportOptions& opts = {}) {
  detail::validate_scores(recs);
  MetricsReport rep;
  double thr = opts.fixed_threshold ? *opts.fixed_threshold : eer_threshold(recs).threshold;
  rep.threshold_used = thr;
  rep.hter_percent = hter_percent(recs, thr);
  PadRates pad = apcer_bpcer_acer(recs, thr);
  rep.apcer_percent = pad.apcer_percent;
  rep.bpcer_percent = pad.bpcer_percent;
  rep.acer_percent = pad.acer_percent;
  rep.auc_percent = auc_percent(recs);
  rep.recall_at_fpr = recall_at_fpr(recs, opts.fpr_targets);
  for (const auto& r : recs) (r.liveness ? rep.live_count : rep.spoof_count)++;
  return rep;
}

// ---- artifact formats ----

inline nlohmann::json report_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["hter"] = rep.hter_percent;
  j["auc"] = rep.auc_percent;
  j["apcer"] = rep.apcer_percent;
  j["bpcer"] = rep.bpcer_percent;
  j["acer"] = rep.acer_percent;
  nlohmann::json rj = nlohmann::json::object();
  for (const auto& r : rep.recall_at_fpr) {
    if (r.recall_percent)
      rj[format_double(r.fpr_target)] = *r.recall_percent;
    else
      rj[format_double(r.fpr_target)] = nullptr;
  }
  j["recall_at_fpr"] = rj;
  j["threshold_used"] = rep.threshold_used;
  j["counts"] = {{"live", rep.live_count}, {"spoof", rep.spoof_count}};
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport rep;
  try {
    rep.hter_percent = j.at("hter").get<double>();
    rep.auc_percent = j.at("auc").get<double>();
    rep.apcer_percent = j.at("apcer").get<double>();
    rep.bpcer_percent = j.at("bpcer").get<double>();
    rep.acer_percent = j.at("acer").get<double>();
    rep.threshold_used = j.at("threshold_used").get<double>();
    rep.live_count = j.at("counts").at("live").get<long>();
    rep.spoof_count = j.at("counts").at("spoof").get<long>();
    for (auto& [k, v] : j.at("recall_at_fpr").items()) {
      RecallAtFpr r;
      r.fpr_target = std::stod(k);
      if (!v.is_null()) r.recall_percent = v.get<double>();
      rep.recall_at_fpr.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics json: ") + e.what());
  }
  std::sort(rep.recall_at_fpr.begin(), rep.recall_at_fpr.end(),
            [](auto& a, auto& b) { return a.fpr_target > b.fpr_target; });
  return rep;
}

inline void write_metrics_json(const MetricsReport& rep, const std::filesystem::path& p) {
  write_text_file(p, report_to_json(rep).dump(2) + "\n");
}

inline std::string scores_to_csv(std::span<const ScoreRecord> recs) {
  std::string out = "sample_id,score,liveness,domain_id\n";
  for (const auto& r : recs) {
    out += r.sample_id;
    out += ',';
    out += format_double(r.score);
    out += ',';
    out += std::to_string(r.liveness);
    out += ',';
    out += std::to_string(r.domain_id);
    out += '\n';
  }
  return out;
}

inline void write_scores_csv(std::span<const ScoreRecord> recs, const std::filesystem::path& p) {
  write_text_file(p, scores_to_csv(recs));
}

inline std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& p) {
  std::string text = read_text_file(p);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("scores csv is empty: " + p.string());
  if (line != "sample_id,score,liveness,domain_id")
    throw FormatError("scores csv has unexpected header: " + line);
  std::vector<ScoreRecord> recs;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<std::string, 4> f;
    size_t start = 0;
    for (int i = 0; i < 4; ++i) {
      size_t comma = line.find(',', start);
      if (i < 3 && comma == std::string::npos)
        throw FormatError("scores csv line " + std::to_string(lineno) + ": expected 4 fields");
      f[size_t(i)] = line.substr(start, comma == std::string::npos ? comma : comma - start);
      start = comma + 1;
    }
    ScoreRecord r;
    r.sample_id = f[0];
    try {
      r.score = std::stod(f[1]);
      r.liveness = std::stoi(f[2]);
      r.domain_id = std::stoi(f[3]);
    } catch (const std::exception&) {
      throw FormatError("scores csv line " + std::to_string(lineno) + ": bad numeric field");
    }
    recs.push_back(std::move(r));
  }
  return recs;
}

inline void write_roc_csv(std::span<const RocPoint> pts, const std::filesystem::path& p) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& pt : pts) {
    out += format_double(pt.fpr);
    out += ',';
    out += format_double(pt.tpr);
    out += ',';
    out += format_double(pt.threshold);
    out += '\n';
  }
  write_text_file(p, out);
}

// Minimal dependency-free ROC rendering (optional output next to the CSV).
inline void write_roc_svg(std::span<const RocPoint> pts, const std::filesystem::path& p) {
  const int w = 420, h = 420, m = 40;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                  "\" height=\"" + std::to_string(h) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto X = [&](double f) { return m + f * (w - 2 * m); };
  auto Y = [&](double t) { return h - m - t * (h - 2 * m); };
  s += "<line x1=\"" + format_double(X(0)) + "\" y1=\"" + format_double(Y(0)) + "\" x2=\"" +
       format_double(X(1)) + "\" y2=\"" + format_double(Y(1)) +
       "\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n";
  s += "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"";
  for (const auto& pt : pts) s += format_double(X(pt.fpr)) + "," + format_double(Y(pt.tpr)) + " ";
  s += "\"/>\n";
  s += "<rect x=\"" + std::to_string(m) + "\" y=\"" + std::to_string(m) + "\" width=\"" +
       std::to_string(w - 2 * m) + "\" height=\"" + std::to_string(h - 2 * m) +
       "\" fill=\"none\" stroke=\"#333\"/>\n";
  s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"" + std::to_string(h - 8) +
       "\" text-anchor=\"middle\" font-size=\"13\">false positive rate</text>\n";
  s += "<text x=\"14\" y=\"" + std::to_string(h / 2) +
       "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 " +
       std::to_string(h / 2) + ")\">true positive rate</text>\n";
  s += "</svg>\n";
  write_text_file(p, s);
}

}  // namespace dtda
