// Training loops.
//
// Three auxiliary models are trained first on source-domain data only: a
// domain classifier (multi-class CE over capture domains), an identity teacher
// (multi-class CE over subject ids) and an attribute teacher (per-attribute
// sigmoid CE). All three come back frozen. The student then trains with the
// combined objective: per batch, inputs are optionally perturbed to confuse
// the frozen domain classifier, the frozen teachers score the perturbed
// inputs, and the student minimizes liveness CE plus the two distillation
// terms in a single SGD step.
//
// Every trainer draws from its own derived RNG stream and appends the ids of
// samples it actually steps on to an optional audit list, so a protocol run
// can prove after the fact that no evaluation sample ever reached a training
// update.
#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "dtda/attack.hpp"
#include "dtda/common.hpp"
#include "dtda/datagen.hpp"
#include "dtda/distill.hpp"
#include "dtda/model.hpp"
#include "json.hpp"

namespace dtda {

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 96;
  int epochs = 10;
  bool cosine_decay = true;
  double holdout_fraction = 0.15;  // auxiliary trainers report accuracy on this slice

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr))
      throw ConfigError("optimizer lr must be positive, got " + format_double(lr));
    if (!(momentum >= 0.0) || !(momentum < 1.0))
      throw ConfigError("optimizer momentum must be in [0, 1), got " + format_double(momentum));
    if (!(weight_decay >= 0.0))
      throw ConfigError("optimizer weight_decay must be non-negative, got " +
                        format_double(weight_decay));
    if (batch_size < 1)
      throw ConfigError("optimizer batch_size must be >= 1, got " + std::to_string(batch_size));
    if (epochs < 1)
      throw ConfigError("optimizer epochs must be >= 1, got " + std::to_string(epochs));
    if (!(holdout_fraction >= 0.0) || !(holdout_fraction <= 0.5))
      throw ConfigError("holdout_fraction must be in [0, 0.5], got " +
                        format_double(holdout_fraction));
  }
};

inline void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"cosine_decay", c.cosine_decay},
                     {"holdout_fraction", c.holdout_fraction}};
}

inline void from_json(const nlohmann::json& j, OptimConfig& c) {
  OptimConfig d;
  c.lr = j.value("lr", d.lr);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.cosine_decay = j.value("cosine_decay", d.cosine_decay);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
}

// Half-cosine decay from base_lr to 0 across total_steps.
inline double cosine_lr(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  double t = double(std::min(step, total_steps)) / double(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// SGD with classical momentum and decoupled-from-nothing L2 weight decay:
//   v <- mu*v + g + wd*theta ; theta <- theta - lr*v
// All arithmetic stays in float so repeat runs match bit for bit.
class SgdMomentum {
 public:
  SgdMomentum(size_t n, double momentum, double weight_decay)
      : mu_(float(momentum)), wd_(float(weight_decay)), velocity_(n, 0.0f) {}

  void step(std::span<float> params, std::span<const float> grads, double lr) {
    if (params.size() != velocity_.size() || grads.size() != velocity_.size())
      throw InputError("optimizer buffer size mismatch");
    const float lr_f = float(lr);
    for (size_t i = 0; i < velocity_.size(); ++i) {
      float v = mu_ * velocity_[i] + grads[i] + wd_ * params[i];
      velocity_[i] = v;
      params[i] -= lr_f * v;
    }
  }

  std::vector<float>& velocity() { return velocity_; }
  const std::vector<float>& velocity() const { return velocity_; }

 private:
  float mu_, wd_;
  std::vector<float> velocity_;
};

namespace detail {

inline void record_seen(std::vector<std::string>* seen, const std::vector<const Sample*>& batch) {
  if (!seen) return;
  for (const Sample* s : batch) seen->push_back(s->id);
}

inline std::vector<const Sample*> gather_batch(const Dataset& data,
                                               const std::vector<size_t>& order, size_t begin,
                                               size_t end) {
  std::vector<const Sample*> batch;
  batch.reserve(end - begin);
  for (size_t k = begin; k < end; ++k) batch.push_back(&data.samples[order[k]]);
  return batch;
}

}  // namespace detail

// Sorted distinct domain ids -> contiguous class labels. Head k of a domain
// classifier corresponds to the k-th smallest domain id in its training data.
inline std::map<int, int> domain_label_map(const Dataset& data) {
  std::map<int, int> m;
  for (int d : data.domain_ids()) m.emplace(d, int(m.size()));
  return m;
}

struct AuxTrainResult {
  Model model;
  double holdout_accuracy = 0.0;
  std::vector<double> per_attribute_accuracy;  // attribute teacher only
  double final_loss = 0.0;
  long steps = 0;
};

namespace detail {

enum class AuxTask { domain, identity, attribute };

inline AuxTrainResult train_aux(AuxTask task, const Dataset& data, const ArchConfig& arch,
                                const OptimConfig& optim, uint64_t seed,
                                std::vector<std::string>* seen_ids) {
  optim.validate();
  if (data.samples.empty()) throw InputError("auxiliary training set is empty");

  std::map<int, int> dom_map;
  Model model = [&] {
    switch (task) {
      case AuxTask::domain: {
        dom_map = domain_label_map(data);
        if (dom_map.size() < 2)
          throw ConfigError("domain classifier needs at least 2 domains, got " +
                            std::to_string(dom_map.size()));
        return init_domain_classifier(arch, int(dom_map.size()), derive_seed(seed, "init"));
      }
      case AuxTask::identity:
        return init_identity_teacher(arch, data.spec.num_identities, derive_seed(seed, "init"));
      case AuxTask::attribute:
      default:
        return init_attribute_teacher(arch, data.spec.num_attributes, derive_seed(seed, "init"));
    }
  }();
  const int width = model.net.head_widths()[0];

  auto label_of = [&](const Sample& s) -> int {
    if (task == AuxTask::domain) return dom_map.at(s.domain_id);
    return s.identity_id;
  };
  if (task != AuxTask::attribute) {
    for (const Sample& s : data.samples)
      if (label_of(s) < 0 || label_of(s) >= width)
        throw InputError("sample " + s.id + " carries label " + std::to_string(label_of(s)) +
                         " outside the classifier's " + std::to_string(width) + " classes");
  }

  Dataset train = data, holdout;
  if (optim.holdout_fraction > 0.0) {
    auto parts = split(data, 1.0 - optim.holdout_fraction, derive_seed(seed, "holdout"));
    train = std::move(parts.first);
    holdout = std::move(parts.second);
  }
  if (train.samples.empty()) throw InputError("auxiliary training split is empty");

  const size_t n = train.samples.size();
  const long steps_per_epoch = long((n + size_t(optim.batch_size) - 1) / size_t(optim.batch_size));
  const long total_steps = steps_per_epoch * optim.epochs;
  SgdMomentum opt(model.net.params().size(), optim.momentum, optim.weight_decay);
  Rng order_rng(derive_seed(seed, "order"));
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<float> grads(model.net.params().size());

  AuxTrainResult res{std::move(model)};
  long step = 0;
  for (int epoch = 0; epoch < optim.epochs; ++epoch) {
    shuffle(order, order_rng);
    for (size_t begin = 0; begin < n; begin += size_t(optim.batch_size)) {
      size_t end = std::min(n, begin + size_t(optim.batch_size));
      auto batch = detail::gather_batch(train, order, begin, end);
      const int rows = int(batch.size());

      LogitRows logits(rows, width);
      std::vector<typename Net<float>::Cache> caches(static_cast<size_t>(rows));
      for (int i = 0; i < rows; ++i) {
        std::vector<std::vector<float>> heads;
        res.model.net.forward(batch[size_t(i)]->image, heads, nullptr, &caches[size_t(i)]);
        for (int j = 0; j < width; ++j) logits.v[size_t(i) * width + size_t(j)] = heads[0][size_t(j)];
      }

      LogitRows dlogits;
      double loss;
      if (task == AuxTask::attribute) {
        std::vector<std::vector<uint8_t>> bits;
        bits.reserve(size_t(rows));
        for (const Sample* s : batch) bits.push_back(s->attributes);
        loss = multilabel_bce(logits, bits, &dlogits);
      } else {
        std::vector<int> labels;
        labels.reserve(size_t(rows));
        for (const Sample* s : batch) labels.push_back(label_of(*s));
        loss = multiclass_ce(logits, labels, &dlogits);
      }
      if (!std::isfinite(loss)) throw DivergenceError("auxiliary training loss became non-finite", step);

      std::fill(grads.begin(), grads.end(), 0.0f);
      std::vector<std::vector<float>> drow(1, std::vector<float>(size_t(width)));
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < width; ++j)
          drow[0][size_t(j)] = float(dlogits.v[size_t(i) * width + size_t(j)]);
        res.model.net.backward(caches[size_t(i)], drow, grads);
      }
      double lr = optim.cosine_decay ? cosine_lr(optim.lr, step, total_steps) : optim.lr;
      opt.step(res.model.net.params(), grads, lr);
      detail::record_seen(seen_ids, batch);
      res.final_loss = loss;
      ++step;
    }
  }
  res.steps = step;
  res.model.step = step;
  res.model.frozen = true;

  const Dataset& eval = holdout.samples.empty() ? train : holdout;
  if (task == AuxTask::attribute) {
    res.per_attribute_accuracy.assign(size_t(width), 0.0);
    for (const Sample& s : eval.samples) {
      auto z = forward_logits(res.model, s.image);
      for (int j = 0; j < width; ++j)
        res.per_attribute_accuracy[size_t(j)] +=
            (z[size_t(j)] > 0.0f) == bool(s.attributes[size_t(j)]);
    }
    double mean = 0.0;
    for (double& a : res.per_attribute_accuracy) {
      a /= double(eval.samples.size());
      mean += a;
    }
    res.holdout_accuracy = mean / double(width);
  } else {
    long hits = 0;
    for (const Sample& s : eval.samples) {
      auto z = forward_logits(res.model, s.image);
      hits += detail::argmax_index(z) == label_of(s);
    }
    res.holdout_accuracy = double(hits) / double(eval.samples.size());
  }
  return res;
}

}  // namespace detail

inline AuxTrainResult train_domain_classifier(const Dataset& data, const ArchConfig& arch,
                                              const OptimConfig& optim, uint64_t seed,
                                              std::vector<std::string>* seen_ids = nullptr) {
  return detail::train_aux(detail::AuxTask::domain, data, arch, optim, seed, seen_ids);
}

inline AuxTrainResult train_identity_teacher(const Dataset& data, const ArchConfig& arch,
                                             const OptimConfig& optim, uint64_t seed,
                                             std::vector<std::string>* seen_ids = nullptr) {
  return detail::train_aux(detail::AuxTask::identity, data, arch, optim, seed, seen_ids);
}

inline AuxTrainResult train_attribute_teacher(const Dataset& data, const ArchConfig& arch,
                                              const OptimConfig& optim, uint64_t seed,
                                              std::vector<std::string>* seen_ids = nullptr) {
  return detail::train_aux(detail::AuxTask::attribute, data, arch, optim, seed, seen_ids);
}

struct StudentTrainConfig {
  OptimConfig optim;
  AttackConfig attack;
  KDConfig kd;
  bool use_identity_teacher = true;
  bool use_attribute_teacher = true;
  bool use_domain_attack = true;
  uint64_t seed = 0;
  int checkpoint_every_epochs = 1;  // 0 disables periodic checkpoints

  void validate() const {
    optim.validate();
    attack.validate();
    kd.validate();
    if (checkpoint_every_epochs < 0)
      throw ConfigError("checkpoint_every_epochs must be >= 0");
  }
};

struct StudentTrainResult {
  long steps = 0;
  std::vector<StepLosses> history;  // one entry per optimizer step, whole run
  bool resumed = false;
};

inline std::string loss_history_csv(const std::vector<StepLosses>& history) {
  std::string out = "step,l_f,l_fr,l_fa,l_sum\n";
  for (size_t i = 0; i < history.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += format_double(history[i].l_f);
    out += ',';
    out += format_double(history[i].l_fr);
    out += ',';
    out += format_double(history[i].l_fa);
    out += ',';
    out += format_double(history[i].l_sum);
    out += '\n';
  }
  return out;
}

// One optimizer step over a batch: perturb, forward, three losses, backward,
// update. Teachers and the domain classifier are read-only throughout.
class StudentTrainer {
 public:
  StudentTrainer(Model& student, const Model* identity_teacher, const Model* attribute_teacher,
                 const Model* domain_classifier, const std::map<int, int>& domain_labels,
                 const StudentTrainConfig& cfg, long total_steps)
      : student_(student),
        identity_teacher_(identity_teacher),
        attribute_teacher_(attribute_teacher),
        domain_classifier_(domain_classifier),
        domain_labels_(domain_labels),
        cfg_(cfg),
        total_steps_(total_steps),
        opt_(student.net.params().size(), cfg.optim.momentum, cfg.optim.weight_decay),
        attack_rng_(derive_seed(cfg.seed, "attack")),
        grads_(student.net.params().size()) {
    cfg_.validate();
    if (student_.kind != ModelKind::student)
      throw ConfigError("trainer needs a student model");
    use_fr_ = cfg_.use_identity_teacher && cfg_.kd.lambda1 != 0.0;
    use_fa_ = cfg_.use_attribute_teacher && cfg_.kd.lambda2 != 0.0;
    use_attack_ = cfg_.use_domain_attack && cfg_.attack.epsilon > 0.0;
    if (use_fr_) require_frozen(identity_teacher_, ModelKind::identity_teacher);
    if (use_fa_) require_frozen(attribute_teacher_, ModelKind::attribute_teacher);
    if (use_attack_) {
      require_frozen(domain_classifier_, ModelKind::domain_classifier);
      if (domain_labels_.size() < 2)
        throw ConfigError("domain-adversarial training needs at least 2 source domains, got " +
                          std::to_string(domain_labels_.size()));
      if (int(domain_labels_.size()) != domain_classifier_->net.head_widths()[0])
        throw ConfigError("domain label map has " + std::to_string(domain_labels_.size()) +
                          " domains but the classifier has " +
                          std::to_string(domain_classifier_->net.head_widths()[0]) + " classes");
    }
  }

  StepLosses step(const std::vector<const Sample*>& batch,
                  std::vector<std::string>* seen_ids = nullptr) {
    if (batch.empty()) throw InputError("student batch is empty");
    const int rows = int(batch.size());

    // 1. perturb inputs against the frozen domain classifier
    std::vector<std::vector<float>> inputs;
    inputs.reserve(size_t(rows));
    for (const Sample* s : batch) inputs.push_back(s->image);
    bool mixed = false;
    for (int i = 1; i < rows; ++i)
      mixed = mixed || batch[size_t(i)]->domain_id != batch[0]->domain_id;
    if (use_attack_ && mixed) {
      std::vector<int> labels;
      labels.reserve(size_t(rows));
      for (const Sample* s : batch) labels.push_back(domain_labels_.at(s->domain_id));
      inputs = pgd_attack(domain_view(*domain_classifier_), inputs, labels, cfg_.attack,
                          attack_rng_);
    }

    // 2. student forward on the (possibly perturbed) inputs
    std::vector<typename Net<float>::Cache> caches(static_cast<size_t>(rows));
    LogitRows attr_rows(rows, student_.net.head_widths()[kStudentAttributeHead]);
    LogitRows ident_rows(rows, student_.net.head_widths()[kStudentIdentityHead]);
    LogitRows live_rows(rows, 2);
    for (int i = 0; i < rows; ++i) {
      std::vector<std::vector<float>> heads;
      student_.net.forward(inputs[size_t(i)], heads, nullptr, &caches[size_t(i)]);
      for (int j = 0; j < attr_rows.width; ++j)
        attr_rows.v[size_t(i) * attr_rows.width + size_t(j)] =
            heads[size_t(kStudentAttributeHead)][size_t(j)];
      for (int j = 0; j < ident_rows.width; ++j)
        ident_rows.v[size_t(i) * ident_rows.width + size_t(j)] =
            heads[size_t(kStudentIdentityHead)][size_t(j)];
      for (int j = 0; j < 2; ++j)
        live_rows.v[size_t(i) * 2 + size_t(j)] = heads[size_t(kStudentLivenessHead)][size_t(j)];
    }

    // 3. losses
    std::vector<int> liveness;
    liveness.reserve(size_t(rows));
    for (const Sample* s : batch) liveness.push_back(s->liveness);
    StepLosses losses;
    LogitRows d_live, d_ident, d_attr;
    losses.l_f = fas_loss(live_rows, liveness, &d_live);
    if (use_fr_) {
      LogitRows teacher(rows, ident_rows.width);
      for (int i = 0; i < rows; ++i) {
        auto z = forward_logits(*identity_teacher_, inputs[size_t(i)]);
        for (int j = 0; j < ident_rows.width; ++j)
          teacher.v[size_t(i) * ident_rows.width + size_t(j)] = z[size_t(j)];
      }
      losses.l_fr = kd_loss(teacher, ident_rows, cfg_.kd, &d_ident);
    }
    if (use_fa_) {
      LogitRows teacher(rows, attr_rows.width);
      for (int i = 0; i < rows; ++i) {
        auto z = forward_logits(*attribute_teacher_, inputs[size_t(i)]);
        for (int j = 0; j < attr_rows.width; ++j)
          teacher.v[size_t(i) * attr_rows.width + size_t(j)] = z[size_t(j)];
      }
      losses.l_fa = kd_loss(teacher, attr_rows, cfg_.kd, &d_attr);
    }
    losses.l_sum = total_loss(losses.l_f, losses.l_fr, losses.l_fa, cfg_.kd);
    if (!std::isfinite(losses.l_sum)) throw DivergenceError("student training loss became non-finite", step_);

    // 4. backward through all active heads at once, then one SGD step
    std::fill(grads_.begin(), grads_.end(), 0.0f);
    std::vector<std::vector<float>> drows(3);
    for (int i = 0; i < rows; ++i) {
      drows[size_t(kStudentAttributeHead)].clear();
      drows[size_t(kStudentIdentityHead)].clear();
      if (use_fa_) {
        drows[size_t(kStudentAttributeHead)].resize(size_t(attr_rows.width));
        for (int j = 0; j < attr_rows.width; ++j)
          drows[size_t(kStudentAttributeHead)][size_t(j)] =
              float(cfg_.kd.lambda2 * d_attr.v[size_t(i) * attr_rows.width + size_t(j)]);
      }
      if (use_fr_) {
        drows[size_t(kStudentIdentityHead)].resize(size_t(ident_rows.width));
        for (int j = 0; j < ident_rows.width; ++j)
          drows[size_t(kStudentIdentityHead)][size_t(j)] =
              float(cfg_.kd.lambda1 * d_ident.v[size_t(i) * ident_rows.width + size_t(j)]);
      }
      drows[size_t(kStudentLivenessHead)].assign(
          {float(d_live.v[size_t(i) * 2]), float(d_live.v[size_t(i) * 2 + 1])});
      student_.net.backward(caches[size_t(i)], drows, grads_);
    }
    double lr = cfg_.optim.cosine_decay ? cosine_lr(cfg_.optim.lr, step_, total_steps_)
                                        : cfg_.optim.lr;
    opt_.step(student_.net.params(), grads_, lr);
    detail::record_seen(seen_ids, batch);
    ++step_;
    student_.step = step_;
    return losses;
  }

  long current_step() const { return step_; }
  SgdMomentum& optimizer() { return opt_; }
  Rng& attack_rng() { return attack_rng_; }
  void restore(long step, const std::vector<float>& velocity, const Rng::State& attack_state) {
    if (velocity.size() != opt_.velocity().size())
      throw FormatError("checkpoint momentum size does not match the student");
    step_ = step;
    opt_.velocity() = velocity;
    attack_rng_.set_state(attack_state);
  }

 private:
  static void require_frozen(const Model* m, ModelKind kind) {
    if (!m)
      throw ConfigError("student training needs a " + std::string(model_kind_name(kind)) +
                        " for the enabled component");
    if (m->kind != kind)
      throw ConfigError("expected a " + std::string(model_kind_name(kind)) + ", got a " +
                        std::string(model_kind_name(m->kind)));
    if (!m->frozen)
      throw ConfigError(std::string(model_kind_name(kind)) +
                        " must be frozen before student training");
  }

  Model& student_;
  const Model* identity_teacher_;
  const Model* attribute_teacher_;
  const Model* domain_classifier_;
  std::map<int, int> domain_labels_;
  StudentTrainConfig cfg_;
  long total_steps_;
  SgdMomentum opt_;
  Rng attack_rng_;
  std::vector<float> grads_;
  long step_ = 0;
  bool use_fr_ = false, use_fa_ = false, use_attack_ = false;
};

namespace detail {

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
  return dir / name;
}

// Highest-numbered epoch_NNNN.ckpt in the directory, or -1 when none exists.
inline int latest_epoch_checkpoint(const std::filesystem::path& dir) {
  int best = -1;
  if (dir.empty() || !std::filesystem::exists(dir)) return best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    int epoch = 0;
    if (std::sscanf(name.c_str(), "epoch_%d.ckpt", &epoch) == 1 && name.size() == 15)
      best = std::max(best, epoch);
  }
  return best;
}

}  // namespace detail

// Full student run: epoch loop, per-epoch shuffling, periodic checkpoints,
// exact resume. Each checkpoint is a self-contained epoch_NNNN.ckpt snapshot
// (parameters, momentum, both RNG streams, loss history); resuming picks the
// newest snapshot, re-enters the loop at the next epoch and reproduces the
// uninterrupted run bit for bit.
inline StudentTrainResult train_student(Model& student, const Model* identity_teacher,
                                        const Model* attribute_teacher,
                                        const Model* domain_classifier, const Dataset& data,
                                        const StudentTrainConfig& cfg,
                                        const std::filesystem::path& checkpoint_dir = {},
                                        std::vector<std::string>* seen_ids = nullptr,
                                        bool resume = false) {
  cfg.validate();
  if (data.samples.empty()) throw InputError("student training set is empty");
  auto dom_map = domain_label_map(data);

  const size_t n = data.samples.size();
  const long steps_per_epoch =
      long((n + size_t(cfg.optim.batch_size) - 1) / size_t(cfg.optim.batch_size));
  const long total_steps = steps_per_epoch * cfg.optim.epochs;

  StudentTrainer trainer(student, identity_teacher, attribute_teacher, domain_classifier,
                         dom_map, cfg, total_steps);
  Rng data_rng(derive_seed(cfg.seed, "order"));
  StudentTrainResult result;

  int start_epoch = 0;
  if (resume) {
    if (checkpoint_dir.empty())
      throw ConfigError("resume requested without a checkpoint directory");
    int latest = detail::latest_epoch_checkpoint(checkpoint_dir);
    if (latest > cfg.optim.epochs)
      throw ConfigError("checkpoint is from epoch " + std::to_string(latest) +
                        " but the run is configured for " + std::to_string(cfg.optim.epochs));
    if (latest >= 0) {
      CheckpointExtras extras;
      Model loaded = load_checkpoint(detail::epoch_checkpoint_path(checkpoint_dir, latest),
                                     ModelKind::student, &extras);
      if (loaded.net.params().size() != student.net.params().size())
        throw FormatError("checkpoint parameter count does not match the student");
      if (!extras.has_rng)
        throw FormatError("checkpoint lacks trainer state and cannot be resumed");
      if (loaded.step != long(latest) * steps_per_epoch)
        throw FormatError("checkpoint step count does not match its epoch");
      student.net.params() = loaded.net.params();
      student.init_seed = loaded.init_seed;
      student.step = loaded.step;
      trainer.restore(loaded.step, extras.momentum, extras.attack_rng_state);
      data_rng.set_state(extras.data_rng_state);
      result.history = extras.history;
      result.resumed = true;
      start_epoch = latest;
    }
  }

  auto save_state = [&](int finished_epochs) {
    std::filesystem::create_directories(checkpoint_dir);
    CheckpointExtras extras;
    extras.momentum = trainer.optimizer().velocity();
    extras.history = result.history;
    extras.has_rng = true;
    extras.data_rng_state = data_rng.state();
    extras.attack_rng_state = trainer.attack_rng().state();
    save_checkpoint(student, detail::epoch_checkpoint_path(checkpoint_dir, finished_epochs),
                    &extras);
  };

  std::vector<size_t> order(n);
  for (int epoch = start_epoch; epoch < cfg.optim.epochs; ++epoch) {
    // rebuild from identity so the epoch order depends only on the rng state,
    // which the snapshot carries; in-place reshuffles would compose across
    // epochs and break bitwise resume
    for (size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, data_rng);
    for (size_t begin = 0; begin < n; begin += size_t(cfg.optim.batch_size)) {
      size_t end = std::min(n, begin + size_t(cfg.optim.batch_size));
      auto batch = detail::gather_batch(data, order, begin, end);
      result.history.push_back(trainer.step(batch, seen_ids));
    }
    bool last = epoch + 1 == cfg.optim.epochs;
    if (!checkpoint_dir.empty() && cfg.checkpoint_every_epochs > 0 &&
        ((epoch + 1) % cfg.checkpoint_every_epochs == 0 || last))
      save_state(epoch + 1);
  }
  result.steps = trainer.current_step();
  return result;
}

}  // namespace dtda
