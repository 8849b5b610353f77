// Command-line driver: dataset synthesis, single training runs, checkpoint
// evaluation, cross-domain protocols, the ablation matrix, and score-file
// reporting. Thin orchestration only; all behavior lives in the headers.
//
// Exit codes: 0 success, 2 configuration error, 3 input/format error,
// 4 training divergence.
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dtda/protocol.hpp"

namespace fs = std::filesystem;
using namespace dtda;

namespace {

struct Opts {
  std::string config_path;
  std::string output = "out";
  std::string data_dir;
  std::string checkpoint;
  std::string scores;
  std::string variant = "full";
  std::optional<uint64_t> seed;
  std::optional<int> jobs;
  bool deterministic = false;
  bool resume = false;
  bool render = false;
};

RunConfig resolve_config(const Opts& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) {
    cfg.seeds = {*o.seed};
    cfg.data.seed = *o.seed;
  }
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.deterministic) {
    cfg.deterministic = true;
    cfg.jobs = 1;
  }
  cfg.validate();
  return cfg;
}

// Every command persists the fully resolved configuration next to what it
// produced, so any output directory is self-describing.
void echo_config(const RunConfig& cfg, const fs::path& dir,
                 const nlohmann::json& extra = nlohmann::json::object()) {
  fs::create_directories(dir);
  nlohmann::json j = cfg;
  j["config_hash"] = config_hash(cfg);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text_file(dir / "config.json", j.dump(2) + "\n");
}

void write_report_files(const std::vector<ScoreRecord>& recs, const RunConfig& cfg,
                        const fs::path& dir, bool render) {
  fs::create_directories(dir);
  write_scores_csv(recs, dir / "scores.csv");
  ReportOptions opts;
  opts.fpr_targets = cfg.fpr_targets;
  MetricsReport rep = compute_report(recs, opts);
  write_metrics_json(rep, dir / "metrics.json");
  auto curve = roc_curve(recs);
  write_roc_csv(curve, dir / "roc.csv");
  if (render) write_roc_svg(curve, dir / "roc.svg");
  std::printf("  hter %.2f%%  auc %.2f%%  (%ld live / %ld spoof)\n", rep.hter_percent,
              rep.auc_percent, rep.live_count, rep.spoof_count);
  std::printf("  wrote %s\n", (dir / "metrics.json").string().c_str());
}

int cmd_synth(const Opts& o) {
  RunConfig cfg = resolve_config(o);
  fs::path dir = fs::path(o.output) / "dataset";
  Dataset data = synthesize(cfg.data);
  save_dataset(data, dir);
  echo_config(cfg, o.output);
  std::printf("synth: %zu samples, %d domains -> %s\n", data.samples.size(),
              cfg.data.num_domains, dir.string().c_str());
  return 0;
}

int cmd_train(const Opts& o) {
  RunConfig cfg = resolve_config(o);
  VariantFlags flags = variant_flags(o.variant);
  Dataset data = load_dataset(o.data_dir);
  detail::check_dataset(data, cfg);
  uint64_t seed = cfg.seeds.front();
  fs::path dir = fs::path(o.output) / "train" / o.variant;
  fs::create_directories(dir);
  echo_config(cfg, dir, {{"variant", o.variant}, {"seed", seed}});

  std::printf("train: variant %s, seed %llu, %zu samples\n", o.variant.c_str(),
              static_cast<unsigned long long>(seed), data.samples.size());
  auto aux = detail::build_aux_bundle(data, cfg, seed, flags);
  if (aux.domain_clf)
    std::printf("  domain classifier holdout accuracy %.3f\n", aux.domain_clf->holdout_accuracy);
  if (aux.identity_teacher)
    std::printf("  identity teacher holdout accuracy %.3f\n",
                aux.identity_teacher->holdout_accuracy);
  if (aux.attribute_teacher)
    std::printf("  attribute teacher holdout accuracy %.3f\n",
                aux.attribute_teacher->holdout_accuracy);

  Model student = init_student(cfg.arch, data.spec.num_attributes, data.spec.num_identities,
                               derive_seed(seed, "student"));
  StudentTrainConfig strain = student_train_config(cfg, flags, derive_seed(seed, "student_train"));
  if (strain.checkpoint_every_epochs == 0) strain.checkpoint_every_epochs = 1;
  auto res = train_student(student, aux.identity_teacher ? &aux.identity_teacher->model : nullptr,
                           aux.attribute_teacher ? &aux.attribute_teacher->model : nullptr,
                           aux.domain_clf ? &aux.domain_clf->model : nullptr, data, strain,
                           dir / "checkpoints", nullptr, o.resume);

  write_text_file(dir / "loss.csv", loss_history_csv(res.history));
  save_checkpoint(student, dir / "checkpoints" / "student.ckpt");
  if (aux.domain_clf)
    save_checkpoint(aux.domain_clf->model, dir / "checkpoints" / "domain_classifier.ckpt");
  if (aux.identity_teacher)
    save_checkpoint(aux.identity_teacher->model, dir / "checkpoints" / "identity_teacher.ckpt");
  if (aux.attribute_teacher)
    save_checkpoint(aux.attribute_teacher->model, dir / "checkpoints" / "attribute_teacher.ckpt");
  double tail = res.history.empty() ? 0.0 : res.history.back().l_sum;
  std::printf("  %ld steps%s, final loss %.4f\n  wrote %s\n", res.steps,
              res.resumed ? " (resumed)" : "", tail, (dir / "checkpoints").string().c_str());
  return 0;
}

int cmd_eval(const Opts& o, std::optional<int> target) {
  RunConfig cfg = resolve_config(o);
  Model m = load_checkpoint(o.checkpoint);
  Dataset data = load_dataset(o.data_dir);
  if (m.net.arch().image_size != data.spec.image_size ||
      m.net.arch().in_channels != data.spec.channels)
    throw InputError("checkpoint geometry (" + std::to_string(m.net.arch().image_size) +
                     "px) does not match dataset (" + std::to_string(data.spec.image_size) +
                     "px)");
  if (target) {
    data = data.filter_domains({*target});
    if (data.samples.empty())
      throw InputError("dataset has no samples for domain " + std::to_string(*target));
  }
  std::vector<ScoreRecord> recs;
  recs.reserve(data.samples.size());
  for (const auto& s : data.samples)
    recs.push_back({s.id, live_score(m, s.image), s.liveness, s.domain_id});
  fs::path dir = fs::path(o.output) / "eval";
  std::printf("eval: %zu samples%s\n", recs.size(),
              target ? (" from domain " + std::to_string(*target)).c_str() : "");
  write_report_files(recs, cfg, dir, o.render);
  echo_config(cfg, dir, {{"checkpoint", o.checkpoint}});
  return 0;
}

int cmd_protocol(const Opts& o, bool ablate) {
  RunConfig cfg = resolve_config(o);
  Dataset data = o.data_dir.empty() ? synthesize(cfg.data) : load_dataset(o.data_dir);
  echo_config(cfg, o.output);
  ProtocolResult result = ablate ? run_ablation_matrix(data, cfg, o.output)
                                 : run_protocol(data, cfg, o.output);
  std::fputs(read_text_file(result.table_path).c_str(), stdout);
  std::printf("leakage audit: %s\n", result.leakage_clean ? "clean" : "CONTAMINATED");
  std::printf("summary: %s\n", result.summary_path.string().c_str());
  return result.leakage_clean ? 0 : 3;
}

int cmd_report(const Opts& o) {
  RunConfig cfg = resolve_config(o);
  auto recs = read_scores_csv(o.scores);
  fs::path dir = fs::path(o.output) / "report";
  std::printf("report: %zu scores from %s\n", recs.size(), o.scores.c_str());
  write_report_files(recs, cfg, dir, o.render);
  echo_config(cfg, dir, {{"scores", o.scores}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain face liveness benchmark: synthetic data, adversarial "
               "domain confusion, dual-teacher distillation, and evaluation protocols"};
  app.require_subcommand(1);

  Opts o;
  app.add_option("--config", o.config_path, "Run configuration file (JSON with comments)");
  app.add_option("--seed", o.seed, "Override the seed list with a single seed");
  app.add_flag("--deterministic", o.deterministic,
               "Fully deterministic single-job mode (forces --jobs 1)");
  app.add_option("--jobs", o.jobs, "Parallel workers for protocol cells");
  app.add_option("--output", o.output, "Output directory (default: out)");

  auto* synth = app.add_subcommand("synth", "Generate and persist a synthetic dataset");

  auto* train = app.add_subcommand("train", "Train auxiliary models and a student");
  train->add_option("--data", o.data_dir, "Dataset directory (from synth)")->required();
  train->add_option("--variant", o.variant,
                    "Training variant: baseline, identity_kd, attribute_kd, dual_kd, full");
  train->add_flag("--resume", o.resume, "Resume from the newest epoch checkpoint");

  auto* eval = app.add_subcommand("eval", "Score a dataset with a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "Student checkpoint file")->required();
  eval->add_option("--data", o.data_dir, "Dataset directory")->required();
  std::optional<int> eval_target;
  eval->add_option("--target", eval_target, "Restrict scoring to one domain id");
  eval->add_flag("--render", o.render, "Also render the ROC curve as SVG");

  auto* protocol = app.add_subcommand("protocol", "Run the configured cross-domain protocol");
  protocol->add_option("--data", o.data_dir, "Dataset directory (default: synthesize)");

  auto* ablate = app.add_subcommand("ablate", "Run all five ablation variants");
  ablate->add_option("--data", o.data_dir, "Dataset directory (default: synthesize)");

  auto* report = app.add_subcommand("report", "Recompute metrics from a score file");
  report->add_option("--scores", o.scores, "scores.csv produced by eval or a protocol")
      ->required();
  report->add_flag("--render", o.render, "Also render the ROC curve as SVG");

  for (auto* sub : {synth, train, eval, protocol, ablate, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o, eval_target);
    if (protocol->parsed()) return cmd_protocol(o, false);
    if (ablate->parsed()) return cmd_protocol(o, true);
    if (report->parsed()) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  }
  return 0;
}
