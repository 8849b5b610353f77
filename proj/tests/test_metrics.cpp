#include "catch2/catch_amalgamated.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "dtda/metrics.hpp"

using namespace dtda;

// ---- independent oracles (naive counting, no shared code with the library) ----

namespace oracle {

// Pairwise concordance: P(live > spoof) + 0.5 P(tie), in percent.
double auc(const std::vector<ScoreRecord>& recs) {
  double num = 0.0;
  long pairs = 0;
  for (const auto& a : recs) {
    if (!a.liveness) continue;
    for (const auto& b : recs) {
      if (b.liveness) continue;
      ++pairs;
      if (a.score > b.score)
        num += 1.0;
      else if (a.score == b.score)
        num += 0.5;
    }
  }
  return num / double(pairs) * 100.0;
}

struct Rates {
  double far, frr;
};

Rates rates_at(const std::vector<ScoreRecord>& recs, double thr) {
  long spoof = 0, live = 0, spoof_acc = 0, live_rej = 0;
  for (const auto& r : recs) {
    if (r.liveness) {
      ++live;
      if (r.score < thr) ++live_rej;
    } else {
      ++spoof;
      if (r.score >= thr) ++spoof_acc;
    }
  }
  return {double(spoof_acc) / double(spoof), double(live_rej) / double(live)};
}

double hter(const std::vector<ScoreRecord>& recs, double thr) {
  Rates r = rates_at(recs, thr);
  return (r.far + r.frr) / 2.0 * 100.0;
}

// Exhaustive candidate scan: midpoints between adjacent distinct scores plus
// one candidate below the minimum and one above the maximum; lowest wins ties.
EerPoint eer(const std::vector<ScoreRecord>& recs) {
  std::vector<double> s;
  for (const auto& r : recs) s.push_back(r.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> cands;
  cands.push_back(s.front() - 1.0);
  for (size_t i = 0; i + 1 < s.size(); ++i) cands.push_back((s[i] + s[i + 1]) / 2.0);
  cands.push_back(s.back() + 1.0);
  EerPoint best;
  double best_gap = 1e300;
  for (double c : cands) {
    Rates r = rates_at(recs, c);
    if (std::abs(r.far - r.frr) < best_gap) {
      best_gap = std::abs(r.far - r.frr);
      best = {c, r.far, r.frr};
    }
  }
  return best;
}

// Exhaustive threshold scan for best TPR subject to FPR <= target.
// TPR and FPR are count ratios (records at or above the threshold / class size).
std::optional<double> recall_at(const std::vector<ScoreRecord>& recs, double target) {
  long spoof = 0, live = 0;
  for (const auto& r : recs) (r.liveness ? live : spoof)++;
  if (double(spoof) * target < 1.0 - 1e-9) return std::nullopt;
  std::vector<double> s;
  for (const auto& r : recs) s.push_back(r.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  s.push_back(s.back() + 1.0);
  double best = 0.0;
  for (double thr : s) {
    long live_ge = 0, spoof_ge = 0;
    for (const auto& r : recs) {
      if (r.score >= thr) (r.liveness ? live_ge : spoof_ge)++;
    }
    if (double(spoof_ge) / double(spoof) <= target + 1e-12)
      best = std::max(best, double(live_ge) / double(live));
  }
  return best * 100.0;
}

}  // namespace oracle

static std::vector<ScoreRecord> random_scores(std::mt19937& gen, int n, bool quantized) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoreRecord> recs;
  int live = 1 + int(gen() % uint32_t(n - 1));
  for (int i = 0; i < n; ++i) {
    ScoreRecord r;
    r.sample_id = "s" + std::to_string(i);
    double sc = u(gen);
    if (quantized) sc = std::round(sc * 8.0) / 8.0;  // force ties
    r.score = sc;
    r.liveness = i < live ? 1 : 0;
    r.domain_id = int(gen() % 3);
    recs.push_back(r);
  }
  return recs;
}

TEST_CASE("roc curve endpoints and separated case", "[metrics]") {
  std::vector<ScoreRecord> recs = {
      {"a", 0.9, 1, 0}, {"b", 0.8, 1, 0}, {"c", 0.2, 0, 0}, {"d", 0.1, 0, 0}};
  auto pts = roc_curve(recs);
  REQUIRE(pts.front().fpr == 0.0);
  REQUIRE(pts.front().tpr == 0.0);
  REQUIRE(pts.back().fpr == 1.0);
  REQUIRE(pts.back().tpr == 1.0);
  bool hit = false;
  for (auto& p : pts)
    if (p.fpr == 0.0 && p.tpr == 1.0) hit = true;
  REQUIRE(hit);
  REQUIRE(auc_percent(recs) == 100.0);
}

TEST_CASE("all-equal scores give AUC 50", "[metrics]") {
  std::vector<ScoreRecord> recs = {
      {"a", 0.5, 1, 0}, {"b", 0.5, 1, 0}, {"c", 0.5, 0, 0}, {"d", 0.5, 0, 0}};
  auto pts = roc_curve(recs);
  REQUIRE(pts.size() == 2);  // anchor plus the single tie step
  REQUIRE(auc_percent(recs) == 50.0);
}

TEST_CASE("auc matches pairwise concordance oracle", "[metrics]") {
  std::mt19937 gen(1234);
  for (int rep = 0; rep < 60; ++rep) {
    auto recs = random_scores(gen, 4 + int(gen() % 30), rep % 2 == 0);
    REQUIRE_THAT(auc_percent(recs),
                 Catch::Matchers::WithinAbs(oracle::auc(recs), 1e-12));
  }
}

TEST_CASE("auc of reversed scorer complements to 100", "[metrics]") {
  std::mt19937 gen(99);
  for (int rep = 0; rep < 20; ++rep) {
    auto recs = random_scores(gen, 20, rep % 2 == 0);
    auto flipped = recs;
    for (auto& r : flipped) r.score = 1.0 - r.score;
    REQUIRE_THAT(auc_percent(recs) + auc_percent(flipped),
                 Catch::Matchers::WithinAbs(100.0, 1e-9));
  }
}

TEST_CASE("auc invariant under strictly monotone score transform", "[metrics]") {
  std::mt19937 gen(7);
  auto recs = random_scores(gen, 40, true);
  auto cubed = recs;
  for (auto& r : cubed) r.score = r.score * r.score * r.score;
  REQUIRE(auc_percent(recs) == auc_percent(cubed));  // identical fpr/tpr grid
}

TEST_CASE("eer threshold on separated and overlapping sets", "[metrics]") {
  std::vector<ScoreRecord> sep = {
      {"a", 0.9, 1, 0}, {"b", 0.8, 1, 0}, {"c", 0.2, 0, 0}, {"d", 0.1, 0, 0}};
  auto e = eer_threshold(sep);
  REQUIRE(e.far == 0.0);
  REQUIRE(e.frr == 0.0);
  REQUIRE(hter_percent(sep, e.threshold) == 0.0);

  // symmetric overlap: best candidate sits at the crossing with FAR = FRR = 0.5
  std::vector<ScoreRecord> ovl = {
      {"a", 0.6, 1, 0}, {"b", 0.4, 1, 0}, {"c", 0.6, 0, 0}, {"d", 0.4, 0, 0}};
  auto e2 = eer_threshold(ovl);
  REQUIRE(e2.far == 0.5);
  REQUIRE(e2.frr == 0.5);
  REQUIRE(e2.threshold == 0.5);
}

TEST_CASE("eer matches exhaustive candidate oracle", "[metrics]") {
  std::mt19937 gen(555);
  for (int rep = 0; rep < 40; ++rep) {
    auto recs = random_scores(gen, 4 + int(gen() % 40), rep % 2 == 0);
    auto e = eer_threshold(recs);
    auto eo = oracle::eer(recs);
    REQUIRE(e.threshold == eo.threshold);
    REQUIRE(e.far == eo.far);
    REQUIRE(e.frr == eo.frr);
    // no candidate does strictly better
    REQUIRE(std::abs(e.far - e.frr) <= std::abs(eo.far - eo.frr));
  }
}

TEST_CASE("hter from known rates and counting oracle", "[metrics]") {
  // 10 spoof of which 1 accepted (FAR 10%), 25 live of which 1 rejected (FRR 4%)
  std::vector<ScoreRecord> recs;
  for (int i = 0; i < 9; ++i) recs.push_back({"sp" + std::to_string(i), 0.1, 0, 0});
  recs.push_back({"sp9", 0.9, 0, 0});
  for (int i = 0; i < 24; ++i) recs.push_back({"lv" + std::to_string(i), 0.8, 1, 0});
  recs.push_back({"lv24", 0.2, 1, 0});
  REQUIRE_THAT(hter_percent(recs, 0.5), Catch::Matchers::WithinAbs(7.0, 1e-12));
  REQUIRE(hter_percent(recs, 0.5) == (1.0 / 10 + 1.0 / 25) / 2.0 * 100.0);

  std::mt19937 gen(31);
  for (int rep = 0; rep < 30; ++rep) {
    auto rnd = random_scores(gen, 4 + int(gen() % 30), true);
    double thr = double(gen() % 100) / 100.0;
    REQUIRE(hter_percent(rnd, thr) == oracle::hter(rnd, thr));
  }
}

TEST_CASE("apcer bpcer acer arithmetic", "[metrics]") {
  REQUIRE(acer_from_rates(2.43, 2.40) == Catch::Approx(2.415).margin(1e-12));
  REQUIRE_THAT(acer_from_rates(4.09, 2.09), Catch::Matchers::WithinAbs(3.09, 1e-12));

  std::vector<ScoreRecord> sep = {
      {"a", 0.9, 1, 0}, {"b", 0.8, 1, 0}, {"c", 0.2, 0, 0}, {"d", 0.1, 0, 0}};
  auto pad = apcer_bpcer_acer(sep, 0.5);
  REQUIRE(pad.apcer_percent == 0.0);
  REQUIRE(pad.bpcer_percent == 0.0);
  REQUIRE(pad.acer_percent == 0.0);

  std::mt19937 gen(77);
  for (int rep = 0; rep < 30; ++rep) {
    auto rnd = random_scores(gen, 4 + int(gen() % 30), true);
    double thr = double(gen() % 100) / 100.0;
    auto p = apcer_bpcer_acer(rnd, thr);
    auto r = oracle::rates_at(rnd, thr);
    REQUIRE(p.apcer_percent == r.far * 100.0);
    REQUIRE(p.bpcer_percent == r.frr * 100.0);
    REQUIRE(p.acer_percent == (p.apcer_percent + p.bpcer_percent) / 2.0);
  }
}

TEST_CASE("recall at fpr on separated set and unresolvable target", "[metrics]") {
  std::vector<ScoreRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back({"sp" + std::to_string(i), 0.1, 0, 0});
  for (int i = 0; i < 10; ++i) recs.push_back({"lv" + std::to_string(i), 0.9, 1, 0});
  std::vector<double> targets = {0.01, 0.005, 0.001};
  auto rs = recall_at_fpr(recs, targets);
  REQUIRE(rs.size() == 3);
  for (auto& r : rs) REQUIRE_FALSE(r.recall_percent.has_value());  // 10 spoof can't resolve <= 1%

  std::vector<double> coarse = {0.5, 0.2, 0.1};
  auto rs2 = recall_at_fpr(recs, coarse);
  for (auto& r : rs2) {
    REQUIRE(r.recall_percent.has_value());
    REQUIRE(*r.recall_percent == 100.0);
  }
}

TEST_CASE("recall at fpr matches exhaustive scan oracle", "[metrics]") {
  std::mt19937 gen(4242);
  std::vector<double> targets = {0.5, 0.25, 0.1, 0.05, 0.01};
  for (int rep = 0; rep < 40; ++rep) {
    auto recs = random_scores(gen, 6 + int(gen() % 44), rep % 2 == 0);
    auto rs = recall_at_fpr(recs, targets);
    for (size_t i = 0; i < targets.size(); ++i) {
      auto expect = oracle::recall_at(recs, targets[i]);
      REQUIRE(rs[i].recall_percent.has_value() == expect.has_value());
      if (expect) REQUIRE(*rs[i].recall_percent == *expect);
    }
  }
}

TEST_CASE("report is order independent and threshold is recorded", "[metrics]") {
  std::mt19937 gen(2024);
  auto recs = random_scores(gen, 40, true);
  auto rep1 = compute_report(recs);
  auto shuffled = recs;
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  auto rep2 = compute_report(shuffled);
  REQUIRE(report_to_json(rep1).dump() == report_to_json(rep2).dump());
  auto e = eer_threshold(recs);
  REQUIRE(rep1.threshold_used == e.threshold);

  auto rep3 = compute_report(recs, {.fixed_threshold = 0.5});
  REQUIRE(rep3.threshold_used == 0.5);
  REQUIRE(rep3.hter_percent == hter_percent(recs, 0.5));
}

TEST_CASE("degenerate score sets are rejected", "[metrics]") {
  std::vector<ScoreRecord> one_class = {{"a", 0.9, 1, 0}, {"b", 0.8, 1, 0}};
  REQUIRE_THROWS_AS(auc_percent(one_class), InputError);
  REQUIRE_THROWS_AS(eer_threshold(one_class), InputError);
  REQUIRE_THROWS_AS(compute_report(one_class), InputError);
  std::vector<ScoreRecord> empty;
  REQUIRE_THROWS_AS(auc_percent(empty), InputError);
  std::vector<ScoreRecord> bad_label = {{"a", 0.9, 2, 0}, {"b", 0.8, 0, 0}};
  REQUIRE_THROWS_AS(auc_percent(bad_label), InputError);
  std::vector<ScoreRecord> bad_score = {{"a", std::nan(""), 1, 0}, {"b", 0.8, 0, 0}};
  REQUIRE_THROWS_AS(auc_percent(bad_score), InputError);
}

TEST_CASE("scores csv round trip preserves metrics exactly", "[metrics]") {
  std::mt19937 gen(808);
  auto recs = random_scores(gen, 50, false);
  auto dir = std::filesystem::temp_directory_path() / "dtda_metrics_test";
  std::filesystem::create_directories(dir);
  auto csv = dir / "scores.csv";
  write_scores_csv(recs, csv);
  auto back = read_scores_csv(csv);
  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    REQUIRE(back[i].sample_id == recs[i].sample_id);
    REQUIRE(back[i].score == recs[i].score);  // shortest round-trip formatting
    REQUIRE(back[i].liveness == recs[i].liveness);
    REQUIRE(back[i].domain_id == recs[i].domain_id);
  }
  REQUIRE(report_to_json(compute_report(back)).dump() ==
          report_to_json(compute_report(recs)).dump());

  write_text_file(csv, "wrong,header\n1,2\n");
  REQUIRE_THROWS_AS(read_scores_csv(csv), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics json round trip", "[metrics]") {
  std::mt19937 gen(606);
  auto recs = random_scores(gen, 30, true);
  auto rep = compute_report(recs);
  auto j = report_to_json(rep);
  auto rep2 = report_from_json(j);
  REQUIRE(report_to_json(rep2).dump() == j.dump());
  REQUIRE_THROWS_AS(report_from_json(nlohmann::json{{"hter", 1.0}}), FormatError);
}
