// Experiment orchestration: cross-domain evaluation cells, the ablation
// matrix over training variants, aggregation, and the results directory
// layout.
//
// A cell is one (target, variant, seed) experiment: train the enabled
// auxiliary models and the student on source domains only, score the held-out
// target, compute metrics. Cells are independent, so a run fans them out over
// a small thread pool; every cell writes its own directory and the fold over
// cell metrics happens after the pool drains.
//
// Leakage instrumentation: every sample id consumed by any training step is
// recorded, and each cell audits the intersection of that set with its
// evaluation ids. A non-empty intersection aborts the run; the audit result
// is written beside the metrics either way.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <thread>
#include <unordered_set>

#include "dtda/config.hpp"
#include "dtda/metrics.hpp"

namespace dtda {

// Training data contaminated the evaluation set. Always a bug in the
// experiment wiring, never recoverable within the run.
class LeakageError : public InputError {
 public:
  using InputError::InputError;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population convention: a single value has stddev 0
};

// Mean and population standard deviation, computed over sorted values so the
// result is bit-identical under any input permutation.
inline Aggregate aggregate_values(std::vector<double> values) {
  if (values.empty()) throw InputError("aggregate needs at least one value");
  for (double v : values)
    if (!std::isfinite(v)) throw InputError("aggregate values must be finite");
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  Aggregate a;
  a.mean = sum / double(values.size());
  double ss = 0.0;
  for (double v : values) {
    double d = v - a.mean;
    ss += d * d;
  }
  a.stddev = std::sqrt(ss / double(values.size()));
  return a;
}

struct CellResult {
  int target = -1;  // -1 means the intra held-out split
  std::string variant;
  uint64_t seed = 0;
  std::vector<int> source_domains;
  MetricsReport report;
  std::string cell_hash;
  // paths relative to the protocol output root, for provenance
  std::string dir;
  std::string scores_path;
  std::string metrics_path;
  std::string checkpoint_path;
  size_t train_seen_unique = 0;
  size_t eval_count = 0;
};

struct TargetAggregate {
  int target = -1;
  Aggregate hter;
  Aggregate auc;
};

struct VariantSummary {
  std::string variant;
  std::vector<TargetAggregate> per_target;  // across seeds
  Aggregate hter;                           // across targets and seeds
  Aggregate auc;
};

struct ProtocolResult {
  ProtocolKind kind = ProtocolKind::leave_one_out;
  std::string config_hash;
  std::vector<CellResult> cells;         // target-major, then variant, then seed
  std::vector<VariantSummary> variants;  // one per executed variant
  bool leakage_clean = true;
  std::filesystem::path output_root;
  std::filesystem::path summary_path;
  std::filesystem::path table_path;
};

// Train/test halves of one domain pool for the intra protocol.
struct IntraSplit {
  Dataset train;
  Dataset test;
};

// Stratified train/test split of one domain pool, with the additional demand
// that both sides keep both liveness classes (metrics need them).
inline IntraSplit intra_split(const Dataset& pool, double fraction, uint64_t seed) {
  if (pool.samples.empty()) throw InputError("intra split needs a non-empty pool");
  auto [train, test] = split(pool, fraction, seed);
  auto has_both = [](const Dataset& d) {
    bool live = false, spoof = false;
    for (const auto& s : d.samples) (s.liveness ? live : spoof) = true;
    return live && spoof;
  };
  if (test.samples.empty() || !has_both(test) || !has_both(train))
    throw InputError("intra split left a side without both liveness classes; "
                     "the pool is too small for the requested fraction");
  return {std::move(train), std::move(test)};
}

namespace detail {

inline std::string target_dir_name(int target) {
  return target < 0 ? std::string("target_self") : "target_" + std::to_string(target);
}

// Evaluation targets the config asks for, in execution order.
inline std::vector<int> protocol_targets(const RunConfig& cfg) {
  std::vector<int> targets;
  switch (cfg.protocol) {
    case ProtocolKind::leave_one_out:
      if (cfg.target_domain >= 0) {
        targets.push_back(cfg.target_domain);
      } else {
        for (int d = 0; d < cfg.data.num_domains; ++d) targets.push_back(d);
      }
      break;
    case ProtocolKind::limited_source:
      if (cfg.target_domain >= 0) {
        targets.push_back(cfg.target_domain);
      } else {
        for (int d = 0; d < cfg.data.num_domains; ++d)
          if (std::find(cfg.source_domains.begin(), cfg.source_domains.end(), d) ==
              cfg.source_domains.end())
            targets.push_back(d);
      }
      break;
    case ProtocolKind::intra:
      targets.push_back(-1);
      break;
  }
  return targets;
}

inline std::vector<int> cell_sources(const RunConfig& cfg, int target) {
  std::vector<int> sources;
  switch (cfg.protocol) {
    case ProtocolKind::leave_one_out:
      for (int d = 0; d < cfg.data.num_domains; ++d)
        if (d != target) sources.push_back(d);
      break;
    case ProtocolKind::limited_source:
      sources = cfg.source_domains;
      std::sort(sources.begin(), sources.end());
      break;
    case ProtocolKind::intra:
      if (cfg.source_domains.empty()) {
        for (int d = 0; d < cfg.data.num_domains; ++d) sources.push_back(d);
      } else {
        sources = cfg.source_domains;
        std::sort(sources.begin(), sources.end());
      }
      break;
  }
  return sources;
}

// Auxiliary models for one (sources, seed) pair. Their training seeds derive
// from independent streams, so the same bundle serves every variant that
// shares sources and seed, and skipping a component never shifts another.
struct AuxBundle {
  std::optional<AuxTrainResult> domain_clf;
  std::optional<AuxTrainResult> identity_teacher;
  std::optional<AuxTrainResult> attribute_teacher;
  std::vector<std::string> seen_ids;
};

inline AuxBundle build_aux_bundle(const Dataset& train_data, const RunConfig& cfg,
                                  uint64_t seed, const VariantFlags& need) {
  AuxBundle b;
  if (need.use_domain_attack)
    b.domain_clf = train_domain_classifier(train_data, cfg.arch, cfg.aux_optim,
                                           derive_seed(seed, "domain_clf"), &b.seen_ids);
  if (need.use_identity_teacher)
    b.identity_teacher = train_identity_teacher(train_data, cfg.arch, cfg.aux_optim,
                                                derive_seed(seed, "identity_teacher"),
                                                &b.seen_ids);
  if (need.use_attribute_teacher)
    b.attribute_teacher = train_attribute_teacher(train_data, cfg.arch, cfg.aux_optim,
                                                  derive_seed(seed, "attribute_teacher"),
                                                  &b.seen_ids);
  return b;
}

inline nlohmann::json cell_config_json(const RunConfig& cfg, int target,
                                       const std::string& variant, uint64_t seed,
                                       const std::vector<int>& sources) {
  nlohmann::json j;
  j["run"] = cfg;
  j["cell"] = {{"target", target},
               {"variant", variant},
               {"seed", seed},
               {"source_domains", sources}};
  return j;
}

// One experiment cell. train_data/eval_data are already partitioned; aux
// holds whatever auxiliary models this cell's variant needs (extra entries
// are ignored). Writes the cell directory and returns its metrics.
inline CellResult run_cell(const RunConfig& cfg, int target, const std::string& variant,
                           uint64_t seed, const Dataset& train_data, const Dataset& eval_data,
                           const AuxBundle& aux, const std::filesystem::path& out_root) {
  VariantFlags flags = variant_flags(variant);
  if (flags.use_identity_teacher && !aux.identity_teacher)
    throw ConfigError("variant " + variant + " needs an identity teacher in the bundle");
  if (flags.use_attribute_teacher && !aux.attribute_teacher)
    throw ConfigError("variant " + variant + " needs an attribute teacher in the bundle");
  if (flags.use_domain_attack && !aux.domain_clf)
    throw ConfigError("variant " + variant + " needs a domain classifier in the bundle");
  const std::filesystem::path rel = std::filesystem::path(target_dir_name(target)) / variant /
                                    ("seed_" + std::to_string(seed));
  const std::filesystem::path dir = out_root / rel;
  std::filesystem::create_directories(dir / "checkpoints");

  nlohmann::json echo = cell_config_json(cfg, target, variant, seed,
                                         train_data.domain_ids());
  // cell identity = experiment identity + cell coordinates, so runs that
  // differ only in scheduling knobs agree on every hash
  nlohmann::json identity = {{"config", config_hash(cfg)}, {"cell", echo["cell"]}};
  std::string cell_hash = to_hex(fnv1a64(identity.dump()));
  echo["config_hash"] = config_hash(cfg);
  echo["cell_hash"] = cell_hash;
  write_text_file(dir / "config.json", echo.dump(2) + "\n");

  Model student = init_student(cfg.arch, train_data.spec.num_attributes,
                               train_data.spec.num_identities, derive_seed(seed, "student"));
  StudentTrainConfig strain =
      student_train_config(cfg, flags, derive_seed(seed, "student_train"));

  std::vector<std::string> seen = aux.seen_ids;
  StudentTrainResult trained = train_student(
      student, flags.use_identity_teacher ? &aux.identity_teacher->model : nullptr,
      flags.use_attribute_teacher ? &aux.attribute_teacher->model : nullptr,
      flags.use_domain_attack ? &aux.domain_clf->model : nullptr, train_data, strain,
      dir / "checkpoints", &seen);

  write_text_file(dir / "loss.csv", loss_history_csv(trained.history));
  save_checkpoint(student, dir / "checkpoints" / "student.ckpt");

  std::vector<ScoreRecord> scores;
  scores.reserve(eval_data.samples.size());
  for (const auto& s : eval_data.samples)
    scores.push_back({s.id, live_score(student, s.image), s.liveness, s.domain_id});
  write_scores_csv(scores, dir / "scores.csv");

  auto roc = roc_curve(scores);
  write_roc_csv(roc, dir / "roc.csv");

  ReportOptions opts;
  opts.fpr_targets = cfg.fpr_targets;
  MetricsReport report = compute_report(scores, opts);
  write_metrics_json(report, dir / "metrics.json");

  // leakage audit: no evaluation id may have fed any training step
  std::unordered_set<std::string> seen_unique(seen.begin(), seen.end());
  std::vector<std::string> leaked;
  for (const auto& s : eval_data.samples)
    if (seen_unique.count(s.id)) leaked.push_back(s.id);
  std::sort(leaked.begin(), leaked.end());
  nlohmann::json audit = {{"train_seen_unique", seen_unique.size()},
                          {"eval_count", eval_data.samples.size()},
                          {"intersection", leaked},
                          {"clean", leaked.empty()}};
  write_text_file(dir / "leakage.json", audit.dump(2) + "\n");
  if (!leaked.empty())
    throw LeakageError("evaluation samples leaked into training (target " +
                       std::to_string(target) + ", variant " + variant + ", seed " +
                       std::to_string(seed) + "): " + std::to_string(leaked.size()) +
                       " ids, first " + leaked.front());

  CellResult r;
  r.target = target;
  r.variant = variant;
  r.seed = seed;
  r.source_domains = train_data.domain_ids();
  r.report = report;
  r.cell_hash = cell_hash;
  r.dir = rel.generic_string();
  r.scores_path = (rel / "scores.csv").generic_string();
  r.metrics_path = (rel / "metrics.json").generic_string();
  r.checkpoint_path = (rel / "checkpoints" / "student.ckpt").generic_string();
  r.train_seen_unique = seen_unique.size();
  r.eval_count = eval_data.samples.size();
  return r;
}

// The dataset partition one (target, seed) item trains and evaluates on.
struct ItemData {
  Dataset train;
  Dataset eval;
};

inline ItemData make_item_data(const Dataset& data, const RunConfig& cfg, int target,
                               uint64_t seed) {
  ItemData d;
  if (cfg.protocol == ProtocolKind::intra) {
    Dataset pool = data.filter_domains(cell_sources(cfg, target));
    IntraSplit split = intra_split(pool, cfg.intra_train_fraction, derive_seed(seed, "intra"));
    d.train = std::move(split.train);
    d.eval = std::move(split.test);
  } else {
    d.train = data.filter_domains(cell_sources(cfg, target));
    d.eval = data.filter_domains({target});
    if (d.eval.samples.empty())
      throw InputError("dataset has no samples for target domain " + std::to_string(target));
  }
  if (d.train.samples.empty()) throw InputError("dataset has no samples for the source domains");
  return d;
}

// Checks that the dataset can serve the config: every referenced domain id
// is present and the image geometry matches the arch.
inline void check_dataset(const Dataset& data, const RunConfig& cfg) {
  if (data.spec.image_size != cfg.arch.image_size ||
      data.spec.channels != cfg.arch.in_channels)
    throw InputError("dataset geometry " + std::to_string(data.spec.image_size) + "x" +
                     std::to_string(data.spec.image_size) + "x" +
                     std::to_string(data.spec.channels) + " does not match the configured " +
                     std::to_string(cfg.arch.image_size) + "x" +
                     std::to_string(cfg.arch.image_size) + "x" +
                     std::to_string(cfg.arch.in_channels));
  auto present = data.domain_ids();
  auto need_domain = [&](int d) {
    if (std::find(present.begin(), present.end(), d) == present.end())
      throw InputError("dataset is missing domain " + std::to_string(d) +
                       " referenced by the protocol");
  };
  for (int t : protocol_targets(cfg)) {
    if (t >= 0) need_domain(t);
    for (int s : cell_sources(cfg, t)) need_domain(s);
  }
}

// Runs `body(i)` for i in [0, n) on `jobs` workers. Exceptions are captured
// and the lowest-index one is rethrown after the pool drains, so failures are
// deterministic regardless of scheduling.
inline void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& body) {
  int workers = int(std::min<size_t>(size_t(std::max(jobs, 1)), n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline nlohmann::json aggregate_to_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"stddev", a.stddev}};
}

inline nlohmann::json cell_to_json(const CellResult& c) {
  nlohmann::json j;
  j["target"] = c.target;
  j["variant"] = c.variant;
  j["seed"] = c.seed;
  j["source_domains"] = c.source_domains;
  j["hter_percent"] = c.report.hter_percent;
  j["auc_percent"] = c.report.auc_percent;
  j["acer_percent"] = c.report.acer_percent;
  j["cell_hash"] = c.cell_hash;
  j["dir"] = c.dir;
  j["scores"] = c.scores_path;
  j["metrics"] = c.metrics_path;
  j["checkpoint"] = c.checkpoint_path;
  j["train_seen_unique"] = c.train_seen_unique;
  j["eval_count"] = c.eval_count;
  return j;
}

}  // namespace detail

// Per-variant aggregates over a cell list: per-target stats across seeds,
// plus the overall mean/std across targets and seeds. Pure fold, so it can be
// recomputed from the persisted per-cell metrics at any time.
inline std::vector<VariantSummary> summarize_cells(const std::vector<CellResult>& cells,
                                                   const std::vector<std::string>& variants) {
  std::vector<VariantSummary> out;
  for (const auto& variant : variants) {
    VariantSummary vs;
    vs.variant = variant;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_target;
    std::vector<double> hters, aucs;
    for (const auto& c : cells) {
      if (c.variant != variant) continue;
      by_target[c.target].first.push_back(c.report.hter_percent);
      by_target[c.target].second.push_back(c.report.auc_percent);
      hters.push_back(c.report.hter_percent);
      aucs.push_back(c.report.auc_percent);
    }
    if (hters.empty()) throw InputError("no cells for variant " + variant);
    for (auto& [target, vals] : by_target) {
      TargetAggregate ta;
      ta.target = target;
      ta.hter = aggregate_values(vals.first);
      ta.auc = aggregate_values(vals.second);
      vs.per_target.push_back(ta);
    }
    vs.hter = aggregate_values(hters);
    vs.auc = aggregate_values(aucs);
    out.push_back(std::move(vs));
  }
  return out;
}

// Fixed-width text rendering of the summary, one row per (variant, target)
// plus a mean row per variant.
inline std::string summary_table(const ProtocolResult& res) {
  auto fmt = [](double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%6.2f +/- %-5.2f", mean, stddev);
    return std::string(buf);
  };
  std::string out;
  out += "protocol: ";
  out += protocol_kind_name(res.kind);
  out += "   config: ";
  out += res.config_hash;
  out += "\n\n";
  char head[128];
  std::snprintf(head, sizeof head, "%-14s %-12s %-18s %-18s\n", "variant", "target",
                "HTER%  (mean+/-sd)", "AUC%   (mean+/-sd)");
  out += head;
  out += std::string(64, '-');
  out += "\n";
  for (const auto& vs : res.variants) {
    for (const auto& ta : vs.per_target) {
      std::string tname = ta.target < 0 ? std::string("self") : std::to_string(ta.target);
      char row[160];
      std::snprintf(row, sizeof row, "%-14s %-12s %-18s %-18s\n", vs.variant.c_str(),
                    tname.c_str(), fmt(ta.hter.mean, ta.hter.stddev).c_str(),
                    fmt(ta.auc.mean, ta.auc.stddev).c_str());
      out += row;
    }
    char mean_row[160];
    std::snprintf(mean_row, sizeof mean_row, "%-14s %-12s %-18s %-18s\n", vs.variant.c_str(),
                  "mean", fmt(vs.hter.mean, vs.hter.stddev).c_str(),
                  fmt(vs.auc.mean, vs.auc.stddev).c_str());
    out += mean_row;
    out += std::string(64, '-');
    out += "\n";
  }
  return out;
}

namespace detail {

inline ProtocolResult run_cells(const Dataset& data, const RunConfig& cfg,
                                const std::filesystem::path& output_root,
                                const std::vector<std::string>& variants) {
  check_dataset(data, cfg);
  const std::vector<int> targets = protocol_targets(cfg);
  const std::filesystem::path out_root =
      output_root / "runs" / std::string(protocol_kind_name(cfg.protocol));
  std::filesystem::create_directories(out_root);

  // union of components any executed variant needs, trained once per item
  VariantFlags need{false, false, false};
  for (const auto& v : variants) {
    VariantFlags f = variant_flags(v);
    need.use_identity_teacher |= f.use_identity_teacher;
    need.use_attribute_teacher |= f.use_attribute_teacher;
    need.use_domain_attack |= f.use_domain_attack;
  }

  struct Item {
    int target;
    uint64_t seed;
  };
  std::vector<Item> items;
  for (int t : targets)
    for (uint64_t s : cfg.seeds) items.push_back({t, s});

  std::vector<std::vector<CellResult>> per_item(items.size());
  int jobs = cfg.deterministic ? 1 : cfg.jobs;
  parallel_for(items.size(), jobs, [&](size_t i) {
    const Item& it = items[i];
    ItemData d = make_item_data(data, cfg, it.target, it.seed);
    AuxBundle aux = build_aux_bundle(d.train, cfg, it.seed, need);
    for (const auto& v : variants)
      per_item[i].push_back(
          run_cell(cfg, it.target, v, it.seed, d.train, d.eval, aux, out_root));
  });

  ProtocolResult res;
  res.kind = cfg.protocol;
  res.config_hash = config_hash(cfg);
  res.output_root = out_root;
  // target-major, variant, seed ordering: regroup the per-item results
  for (int t : targets) {
    for (const auto& v : variants) {
      for (size_t i = 0; i < items.size(); ++i) {
        if (items[i].target != t) continue;
        for (const auto& c : per_item[i])
          if (c.variant == v) res.cells.push_back(c);
      }
    }
  }
  res.variants = summarize_cells(res.cells, variants);
  res.leakage_clean = true;  // a leak would have thrown inside run_cell

  nlohmann::json summary;
  summary["protocol"] = std::string(protocol_kind_name(cfg.protocol));
  summary["config_hash"] = res.config_hash;
  summary["leakage_clean"] = res.leakage_clean;
  summary["variants"] = nlohmann::json::array();
  for (const auto& vs : res.variants) {
    nlohmann::json vj;
    vj["variant"] = vs.variant;
    vj["overall"] = {{"hter", aggregate_to_json(vs.hter)}, {"auc", aggregate_to_json(vs.auc)}};
    vj["per_target"] = nlohmann::json::array();
    for (const auto& ta : vs.per_target)
      vj["per_target"].push_back({{"target", ta.target},
                                  {"hter", aggregate_to_json(ta.hter)},
                                  {"auc", aggregate_to_json(ta.auc)}});
    summary["variants"].push_back(vj);
  }
  summary["cells"] = nlohmann::json::array();
  for (const auto& c : res.cells) summary["cells"].push_back(cell_to_json(c));

  res.summary_path = out_root / "summary.json";
  res.table_path = out_root / "summary.txt";
  write_text_file(res.summary_path, summary.dump(2) + "\n");
  write_text_file(res.table_path, summary_table(res));
  return res;
}

}  // namespace detail

// Runs the configured protocol for its single variant: every eligible target
// crossed with every seed. Outputs land under
// <output_root>/runs/<protocol>/target_<t>/<variant>/seed_<s>/.
inline ProtocolResult run_protocol(const Dataset& data, const RunConfig& cfg,
                                   const std::filesystem::path& output_root) {
  cfg.validate();
  return detail::run_cells(data, cfg, output_root, {cfg.variant});
}

// Runs all five training variants with shared seeds and partitions: the
// supervised baseline, each single-teacher distillation, dual-teacher, and
// dual-teacher plus the domain attack. The intra protocol cannot host the
// attack variant, so the matrix is restricted to cross-domain protocols.
inline ProtocolResult run_ablation_matrix(const Dataset& data, const RunConfig& cfg,
                                          const std::filesystem::path& output_root) {
  if (cfg.protocol == ProtocolKind::intra)
    throw ConfigError("the ablation matrix includes an attack variant, which the intra "
                      "protocol does not support; run variants individually instead");
  RunConfig strict = cfg;
  strict.variant = "full";  // the most demanding variant must be expressible
  strict.validate();
  return detail::run_cells(data, strict, output_root, variant_names());
}

}  // namespace dtda
