// Resolved run configuration: one struct that nests every module's knobs,
// loadable from a commented JSON file with defaults filled in for anything
// the file leaves out. The fully-resolved form is echoed beside every run
// output so results stay self-describing.
#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "dtda/datagen.hpp"
#include "dtda/train.hpp"

namespace dtda {

enum class ProtocolKind { leave_one_out, limited_source, intra };

inline std::string_view protocol_kind_name(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::leave_one_out: return "leave_one_out";
    case ProtocolKind::limited_source: return "limited_source";
    case ProtocolKind::intra: return "intra";
  }
  return "unknown";
}

inline ProtocolKind protocol_kind_from_name(std::string_view s) {
  if (s == "leave_one_out") return ProtocolKind::leave_one_out;
  if (s == "limited_source") return ProtocolKind::limited_source;
  if (s == "intra") return ProtocolKind::intra;
  throw ConfigError("unknown protocol kind: " + std::string(s) +
                    " (expected leave_one_out, limited_source, or intra)");
}

// Which training components a run enables. Variants map one-to-one onto the
// student loss terms: identity/attribute distillation toggle their KL terms,
// the domain attack toggles input perturbation.
struct VariantFlags {
  bool use_identity_teacher = true;
  bool use_attribute_teacher = true;
  bool use_domain_attack = true;

  bool operator==(const VariantFlags&) const = default;
};

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"baseline", "identity_kd", "attribute_kd",
                                             "dual_kd", "full"};
  return names;
}

inline VariantFlags variant_flags(std::string_view variant) {
  if (variant == "baseline") return {false, false, false};
  if (variant == "identity_kd") return {true, false, false};
  if (variant == "attribute_kd") return {false, true, false};
  if (variant == "dual_kd") return {true, true, false};
  if (variant == "full") return {true, true, true};
  throw ConfigError("unknown variant: " + std::string(variant) +
                    " (expected baseline, identity_kd, attribute_kd, dual_kd, or full)");
}

struct RunConfig {
  SynthSpec data;
  ArchConfig arch;
  OptimConfig student_optim;
  OptimConfig aux_optim;  // domain classifier and both teachers
  AttackConfig attack;
  KDConfig kd;

  ProtocolKind protocol = ProtocolKind::leave_one_out;
  // Cross-domain kinds: empty source list means "every domain except the
  // target". limited_source requires exactly two explicit sources.
  std::vector<int> source_domains;
  // -1 runs every eligible target in turn; otherwise a single domain id.
  int target_domain = -1;
  double intra_train_fraction = 0.7;

  std::string variant = "full";
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  int jobs = 1;
  bool deterministic = false;
  std::vector<double> fpr_targets{0.01, 0.005, 0.001};
  int checkpoint_every_epochs = 0;  // protocol cells skip mid-run snapshots by default

  RunConfig() {
    // Desk-scale benchmark defaults: small enough that a full ablation matrix
    // finishes on a laptop CPU, hard enough that the domain gap is visible.
    // The texture cue is deliberately faint so the per-domain spoof cast is
    // the easier signal to latch onto; distillation stays at unit weights but
    // without the temperature-squared boost, which at this model size would
    // let the teachers drown out the liveness term.
    arch.image_size = data.image_size;
    arch.conv_channels = {12, 24, 48};
    data.spoof_texture_amplitude = 0.06;
    kd.tau_squared_scaling = false;
    student_optim.lr = 0.05;
    student_optim.batch_size = 32;
    student_optim.epochs = 12;
    aux_optim.lr = 0.05;
    aux_optim.batch_size = 32;
    aux_optim.epochs = 30;
    aux_optim.holdout_fraction = 0.15;
  }

  void validate() const {
    data.validate();
    arch.validate();
    student_optim.validate();
    aux_optim.validate();
    attack.validate();
    kd.validate();
    variant_flags(variant);
    if (arch.image_size != data.image_size)
      throw ConfigError("arch image_size " + std::to_string(arch.image_size) +
                        " does not match data image_size " + std::to_string(data.image_size));
    if (arch.in_channels != data.channels)
      throw ConfigError("arch in_channels must match data channels");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    {
      std::set<uint64_t> uniq(seeds.begin(), seeds.end());
      if (uniq.size() != seeds.size()) throw ConfigError("seeds must be distinct");
    }
    if (jobs < 1) throw ConfigError("jobs must be at least 1, got " + std::to_string(jobs));
    if (!(intra_train_fraction > 0.0 && intra_train_fraction < 1.0))
      throw ConfigError("intra_train_fraction must be in (0, 1), got " +
                        format_double(intra_train_fraction));
    if (checkpoint_every_epochs < 0)
      throw ConfigError("checkpoint_every_epochs must be >= 0");
    for (double f : fpr_targets)
      if (!(f > 0.0 && f < 1.0))
        throw ConfigError("fpr_targets entries must be in (0, 1), got " + format_double(f));

    for (int s : source_domains)
      if (s < 0 || s >= data.num_domains)
        throw ConfigError("source domain " + std::to_string(s) + " is outside [0, " +
                          std::to_string(data.num_domains - 1) + "]");
    {
      std::set<int> uniq(source_domains.begin(), source_domains.end());
      if (uniq.size() != source_domains.size())
        throw ConfigError("source_domains must be distinct");
    }
    if (target_domain != -1 && (target_domain < 0 || target_domain >= data.num_domains))
      throw ConfigError("target_domain " + std::to_string(target_domain) +
                        " is outside [0, " + std::to_string(data.num_domains - 1) + "]");

    VariantFlags flags = variant_flags(variant);
    switch (protocol) {
      case ProtocolKind::leave_one_out:
        if (!source_domains.empty())
          throw ConfigError(
              "leave_one_out derives sources from the held-out target; "
              "leave source_domains empty");
        if (data.num_domains < 2)
          throw ConfigError("leave_one_out needs at least 2 domains");
        if (flags.use_domain_attack && data.num_domains < 3)
          throw ConfigError(
              "the domain attack needs at least 2 source domains; "
              "leave_one_out with use_domain_attack requires num_domains >= 3");
        break;
      case ProtocolKind::limited_source:
        if (source_domains.size() != 2)
          throw ConfigError("limited_source requires exactly 2 source_domains, got " +
                            std::to_string(source_domains.size()));
        if (target_domain != -1 &&
            std::find(source_domains.begin(), source_domains.end(), target_domain) !=
                source_domains.end())
          throw ConfigError("target_domain must not appear in source_domains");
        if (size_t(data.num_domains) <= source_domains.size())
          throw ConfigError("limited_source needs at least one non-source domain as target");
        break;
      case ProtocolKind::intra:
        if (flags.use_domain_attack)
          throw ConfigError(
              "variant '" + variant +
              "' enables the domain attack, which the intra protocol does not support; "
              "use dual_kd or another attack-free variant");
        if (target_domain != -1)
          throw ConfigError("intra evaluates a held-out split, not a target domain; "
                            "leave target_domain at -1");
        break;
    }
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"data", c.data},
                     {"arch", c.arch},
                     {"student_optim", c.student_optim},
                     {"aux_optim", c.aux_optim},
                     {"attack", c.attack},
                     {"kd", c.kd},
                     {"protocol", std::string(protocol_kind_name(c.protocol))},
                     {"source_domains", c.source_domains},
                     {"target_domain", c.target_domain},
                     {"intra_train_fraction", c.intra_train_fraction},
                     {"variant", c.variant},
                     {"seeds", c.seeds},
                     {"jobs", c.jobs},
                     {"deterministic", c.deterministic},
                     {"fpr_targets", c.fpr_targets},
                     {"checkpoint_every_epochs", c.checkpoint_every_epochs}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  // Partial sections overlay the benchmark defaults rather than the raw field
  // defaults, so {"student_optim": {"epochs": 20}} keeps the tuned lr.
  auto section = [&j](const char* key, auto& field, const auto& def) {
    nlohmann::json base = def;
    if (j.contains(key)) base.merge_patch(j.at(key));
    field = base.template get<std::decay_t<decltype(def)>>();
  };
  section("data", c.data, d.data);
  section("arch", c.arch, d.arch);
  // Unless the file pins an input geometry explicitly, the network follows the
  // dataset geometry.
  if (!j.contains("arch") || !j.at("arch").contains("image_size"))
    c.arch.image_size = c.data.image_size;
  section("student_optim", c.student_optim, d.student_optim);
  section("aux_optim", c.aux_optim, d.aux_optim);
  section("attack", c.attack, d.attack);
  section("kd", c.kd, d.kd);
  c.protocol = protocol_kind_from_name(
      j.value("protocol", std::string(protocol_kind_name(d.protocol))));
  c.source_domains = j.value("source_domains", d.source_domains);
  c.target_domain = j.value("target_domain", d.target_domain);
  c.intra_train_fraction = j.value("intra_train_fraction", d.intra_train_fraction);
  c.variant = j.value("variant", d.variant);
  c.seeds = j.value("seeds", d.seeds);
  c.jobs = j.value("jobs", d.jobs);
  c.deterministic = j.value("deterministic", d.deterministic);
  c.fpr_targets = j.value("fpr_targets", d.fpr_targets);
  c.checkpoint_every_epochs = j.value("checkpoint_every_epochs", d.checkpoint_every_epochs);
}

// Loads a config file, tolerating // and /* */ comments so the shipped
// examples can be annotated. Unknown keys are ignored; missing keys keep
// their defaults.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object())
    throw FormatError("config " + path.string() + " must contain a JSON object");
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path.string() + " has a malformed field: " + e.what());
  }
}

// Stable fingerprint of the fully-resolved config, used to tag run outputs.
// Identifies the experiment, not the execution: worker count and the
// determinism switch change how cells are scheduled, never what they compute,
// so they are normalized out before hashing.
inline std::string config_hash(const RunConfig& c) {
  RunConfig n = c;
  n.jobs = 1;
  n.deterministic = false;
  nlohmann::json j = n;
  return to_hex(fnv1a64(j.dump()));
}

// The student-training view of a run config for one experiment cell.
inline StudentTrainConfig student_train_config(const RunConfig& c, const VariantFlags& flags,
                                               uint64_t seed) {
  StudentTrainConfig cfg;
  cfg.optim = c.student_optim;
  cfg.attack = c.attack;
  cfg.kd = c.kd;
  cfg.use_identity_teacher = flags.use_identity_teacher;
  cfg.use_attribute_teacher = flags.use_attribute_teacher;
  cfg.use_domain_attack = flags.use_domain_attack;
  cfg.seed = seed;
  cfg.checkpoint_every_epochs = c.checkpoint_every_epochs;
  return cfg;
}

}  // namespace dtda
