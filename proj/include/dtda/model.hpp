// Model roles on top of Net<float>, plus the checkpoint file format.
//
// Roles: a domain classifier (one head over domain ids), two frozen teachers
// (identity classification and attribute prediction), and the student with
// three heads off one shared encoder feature: attribute logits, identity
// logits, and the two-way liveness head that produces the score.
//
// Checkpoint format: 4-byte magic "DTCP", u32 header length, JSON header
// (kind, architecture, head widths, step counter, init seed, frozen flag,
// optional RNG states / loss history / momentum marker), then the parameters
// as a little-endian float32 blob in flat buffer order, then the optimizer
// momentum blob when present.
#pragma once

#include <filesystem>
#include <optional>

#include "dtda/net.hpp"

namespace dtda {

enum class ModelKind { domain_classifier, student, identity_teacher, attribute_teacher };

inline std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::domain_classifier: return "domain_classifier";
    case ModelKind::student: return "student";
    case ModelKind::identity_teacher: return "identity_teacher";
    case ModelKind::attribute_teacher: return "attribute_teacher";
  }
  return "unknown";
}

inline ModelKind model_kind_from_name(std::string_view s) {
  if (s == "domain_classifier") return ModelKind::domain_classifier;
  if (s == "student") return ModelKind::student;
  if (s == "identity_teacher") return ModelKind::identity_teacher;
  if (s == "attribute_teacher") return ModelKind::attribute_teacher;
  throw FormatError("unknown model kind: " + std::string(s));
}

struct Model {
  ModelKind kind = ModelKind::student;
  uint64_t init_seed = 0;
  bool frozen = false;
  long step = 0;
  Net<float> net;

  Model(ModelKind k, const ArchConfig& arch, std::vector<int> head_widths, uint64_t seed)
      : kind(k), init_seed(seed), net(arch, std::move(head_widths)) {
    Rng rng(derive_seed(seed, model_kind_name(k)));
    net.init_params(rng);
  }
};

// Student heads share one encoder pass: 0 = attributes, 1 = identity,
// 2 = liveness (two-way).
inline constexpr size_t kStudentAttributeHead = 0;
inline constexpr size_t kStudentIdentityHead = 1;
inline constexpr size_t kStudentLivenessHead = 2;

inline Model init_student(const ArchConfig& arch, int num_attributes, int num_identities,
                          uint64_t seed) {
  return Model(ModelKind::student, arch, {num_attributes, num_identities, 2}, seed);
}

inline Model init_domain_classifier(const ArchConfig& arch, int num_domains, uint64_t seed) {
  if (num_domains < 2)
    throw ConfigError("domain classifier needs at least 2 domains, got " +
                      std::to_string(num_domains));
  return Model(ModelKind::domain_classifier, arch, {num_domains}, seed);
}

inline Model init_identity_teacher(const ArchConfig& arch, int num_identities, uint64_t seed) {
  return Model(ModelKind::identity_teacher, arch, {num_identities}, seed);
}

inline Model init_attribute_teacher(const ArchConfig& arch, int num_attributes, uint64_t seed) {
  return Model(ModelKind::attribute_teacher, arch, {num_attributes}, seed);
}

struct StudentOutput {
  std::vector<float> feature;
  std::vector<float> attribute_logits;
  std::vector<float> identity_logits;
  std::vector<float> liveness_logits;
};

inline StudentOutput forward_student(const Model& m, std::span<const float> image) {
  if (m.kind != ModelKind::student) throw ConfigError("forward_student needs a student model");
  std::vector<std::vector<float>> logits;
  StudentOutput out;
  m.net.forward(image, logits, &out.feature);
  out.attribute_logits = std::move(logits[kStudentAttributeHead]);
  out.identity_logits = std::move(logits[kStudentIdentityHead]);
  out.liveness_logits = std::move(logits[kStudentLivenessHead]);
  return out;
}

// Single-head models (classifier / teachers).
inline std::vector<float> forward_logits(const Model& m, std::span<const float> image) {
  std::vector<std::vector<float>> logits;
  m.net.forward(image, logits);
  return std::move(logits[0]);
}

// Liveness score: softmax probability of the live class (index 1).
inline double live_score(const Model& student, std::span<const float> image) {
  auto out = forward_student(student, image);
  double z0 = out.liveness_logits[0], z1 = out.liveness_logits[1];
  double m = std::max(z0, z1);
  double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  return e1 / (e0 + e1);
}

inline uint64_t param_hash(const Model& m) {
  return fnv1a64(m.net.params().data(), m.net.params().size() * sizeof(float));
}

struct StepLosses {
  double l_f = 0.0;   // liveness cross-entropy
  double l_fr = 0.0;  // identity-teacher distillation
  double l_fa = 0.0;  // attribute-teacher distillation
  double l_sum = 0.0;
};

// Optional training-state payload stored alongside model parameters so an
// interrupted run can resume with an identical continuation.
struct CheckpointExtras {
  std::vector<float> momentum;
  std::vector<StepLosses> history;
  bool has_rng = false;
  std::array<uint64_t, 4> data_rng_state{};
  std::array<uint64_t, 4> attack_rng_state{};
};

inline void save_checkpoint(const Model& m, const std::filesystem::path& path,
                            const CheckpointExtras* extras = nullptr) {
  nlohmann::json hdr;
  hdr["kind"] = std::string(model_kind_name(m.kind));
  hdr["arch"] = m.net.arch();
  hdr["head_widths"] = m.net.head_widths();
  hdr["step"] = m.step;
  hdr["init_seed"] = m.init_seed;
  hdr["frozen"] = m.frozen;
  hdr["has_momentum"] = extras != nullptr && !extras->momentum.empty();
  if (extras && extras->has_rng) {
    hdr["rng"] = {{"data", extras->data_rng_state}, {"attack", extras->attack_rng_state}};
  }
  if (extras && !extras->history.empty()) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : extras->history)
      hist.push_back({h.l_f, h.l_fr, h.l_fa, h.l_sum});
    hdr["history"] = std::move(hist);
  }
  std::string header = hdr.dump();

  std::string blob = "DTCP";
  detail::put_u32(blob, uint32_t(header.size()));
  blob += header;
  blob.append(reinterpret_cast<const char*>(m.net.params().data()),
              m.net.params().size() * sizeof(float));
  if (extras && !extras->momentum.empty()) {
    if (extras->momentum.size() != m.net.params().size())
      throw InputError("momentum buffer size does not match parameter count");
    blob.append(reinterpret_cast<const char*>(extras->momentum.data()),
                extras->momentum.size() * sizeof(float));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path.string());
  out.write(blob.data(), std::streamsize(blob.size()));
}

inline Model load_checkpoint(const std::filesystem::path& path,
                             std::optional<ModelKind> expected_kind = std::nullopt,
                             CheckpointExtras* extras = nullptr) {
  if (!std::filesystem::exists(path))
    throw InputError("checkpoint not found: " + path.string());
  auto bytes = read_binary_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "DTCP", 4) != 0)
    throw FormatError("checkpoint has bad magic: " + path.string());
  uint32_t hlen = detail::get_u32(bytes.data() + 4);
  if (bytes.size() < 8 + size_t(hlen))
    throw FormatError("checkpoint header truncated: " + path.string());
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(std::string_view(
        reinterpret_cast<const char*>(bytes.data()) + 8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header: " + std::string(e.what()));
  }
  ModelKind kind;
  ArchConfig arch;
  std::vector<int> widths;
  uint64_t init_seed;
  try {
    kind = model_kind_from_name(hdr.at("kind").get<std::string>());
    arch = hdr.at("arch").get<ArchConfig>();
    widths = hdr.at("head_widths").get<std::vector<int>>();
    init_seed = hdr.at("init_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header field: " + std::string(e.what()));
  }
  if (expected_kind && kind != *expected_kind)
    throw FormatError("checkpoint holds a " + std::string(model_kind_name(kind)) +
                      ", expected a " + std::string(model_kind_name(*expected_kind)) + ": " +
                      path.string());

  Model m(kind, arch, widths, init_seed);
  m.step = hdr.value("step", 0l);
  m.frozen = hdr.value("frozen", false);
  size_t nparams = m.net.param_count();
  bool has_momentum = hdr.value("has_momentum", false);
  size_t expect = 8 + size_t(hlen) + nparams * 4 * (has_momentum ? 2 : 1);
  if (bytes.size() != expect)
    throw FormatError("checkpoint parameter blob truncated or padded: expected " +
                      std::to_string(expect) + " bytes, found " +
                      std::to_string(bytes.size()));
  std::memcpy(m.net.params().data(), bytes.data() + 8 + hlen, nparams * 4);
  if (extras) {
    *extras = CheckpointExtras{};
    if (has_momentum) {
      extras->momentum.resize(nparams);
      std::memcpy(extras->momentum.data(), bytes.data() + 8 + hlen + nparams * 4, nparams * 4);
    }
    if (hdr.contains("rng")) {
      extras->has_rng = true;
      auto d = hdr["rng"].at("data").get<std::array<uint64_t, 4>>();
      auto a = hdr["rng"].at("attack").get<std::array<uint64_t, 4>>();
      extras->data_rng_state = d;
      extras->attack_rng_state = a;
    }
    if (hdr.contains("history")) {
      for (const auto& row : hdr["history"]) {
        StepLosses h;
        h.l_f = row.at(0).get<double>();
        h.l_fr = row.at(1).get<double>();
        h.l_fa = row.at(2).get<double>();
        h.l_sum = row.at(3).get<double>();
        extras->history.push_back(h);
      }
    }
  }
  return m;
}

}  // namespace dtda
