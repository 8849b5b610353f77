// Domain-adversarial input perturbation.
//
// Training does not try to fool the liveness head; it perturbs each input so a
// frozen domain classifier can no longer tell which capture domain the image
// came from, then feeds the perturbed image to the student. The perturbation
// is the standard sign-gradient family: a single FGSM step, or projected
// gradient descent inside an L-infinity ball intersected with the valid pixel
// range. With steps=1, step_size=epsilon and no random start, PGD reduces to
// FGSM bit for bit; with epsilon=0 the input is returned unchanged.
#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "dtda/common.hpp"
#include "dtda/datagen.hpp"
#include "dtda/distill.hpp"
#include "dtda/model.hpp"
#include "json.hpp"

namespace dtda {

struct AttackConfig {
  double epsilon = 8.0 / 255.0;    // L-infinity radius; 0 disables the attack
  double step_size = 8.0 / 255.0 / 4.0;
  int steps = 10;
  bool random_start = true;
  double clamp_min = 0.0;
  double clamp_max = 1.0;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
      throw ConfigError("attack epsilon must be finite and non-negative, got " +
                        format_double(epsilon));
    if (!(step_size > 0.0) || !std::isfinite(step_size))
      throw ConfigError("attack step_size must be positive, got " + format_double(step_size));
    if (steps < 1) throw ConfigError("attack steps must be >= 1, got " + std::to_string(steps));
    if (!(clamp_min < clamp_max))
      throw ConfigError("attack clamp range is empty: [" + format_double(clamp_min) + ", " +
                        format_double(clamp_max) + "]");
  }
};

inline void to_json(nlohmann::json& j, const AttackConfig& a) {
  j = nlohmann::json{{"epsilon", a.epsilon},       {"step_size", a.step_size},
                     {"steps", a.steps},           {"random_start", a.random_start},
                     {"clamp_min", a.clamp_min},   {"clamp_max", a.clamp_max}};
}

inline void from_json(const nlohmann::json& j, AttackConfig& a) {
  AttackConfig d;
  a.epsilon = j.value("epsilon", d.epsilon);
  a.step_size = j.value("step_size", d.step_size);
  a.steps = j.value("steps", d.steps);
  a.random_start = j.value("random_start", d.random_start);
  a.clamp_min = j.value("clamp_min", d.clamp_min);
  a.clamp_max = j.value("clamp_max", d.clamp_max);
}

// Anything that scores an image over domain classes and can push a
// cross-entropy gradient back to the pixels.
template <class M, typename S>
concept DomainScorer = requires(const M& m, std::span<const S> x, int label, std::span<S> dx) {
  { m.num_classes() } -> std::convertible_to<int>;
  { m.input_size() } -> std::convertible_to<size_t>;
  { m.logits(x) } -> std::convertible_to<std::vector<S>>;
  { m.ce_and_input_gradient(x, label, dx) } -> std::convertible_to<double>;
};

// Adapter exposing a single-head Net as a DomainScorer.
template <typename S>
struct NetDomainView {
  const Net<S>* net = nullptr;

  int num_classes() const { return net->head_widths()[0]; }
  size_t input_size() const { return net->input_size(); }

  std::vector<S> logits(std::span<const S> x) const {
    std::vector<std::vector<S>> heads;
    net->forward(x, heads);
    return heads[0];
  }

  // Per-sample softmax CE against `label`; overwrites dx with d(ce)/dx.
  double ce_and_input_gradient(std::span<const S> x, int label, std::span<S> dx) const {
    typename Net<S>::Cache cache;
    std::vector<std::vector<S>> heads;
    net->forward(x, heads, nullptr, &cache);
    const auto& z = heads[0];
    const int k = int(z.size());
    if (label < 0 || label >= k)
      throw InputError("domain label " + std::to_string(label) + " outside [0, " +
                       std::to_string(k) + ")");
    double m = double(z[0]);
    for (S v : z) m = std::max(m, double(v));
    double sum = 0.0;
    for (S v : z) sum += std::exp(double(v) - m);
    double lse = m + std::log(sum);
    std::vector<std::vector<S>> dlogits(1, std::vector<S>(size_t(k)));
    for (int j = 0; j < k; ++j) {
      double p = std::exp(double(z[size_t(j)]) - m) / sum;
      dlogits[0][size_t(j)] = S(p - (j == label ? 1.0 : 0.0));
    }
    std::fill(dx.begin(), dx.end(), S(0));
    net->backward(cache, dlogits, {}, dx);
    return lse - double(z[size_t(label)]);
  }
};

inline NetDomainView<float> domain_view(const Model& m) {
  if (m.kind != ModelKind::domain_classifier)
    throw ConfigError("domain_view expects a domain classifier, got a " +
                      std::string(model_kind_name(m.kind)));
  return NetDomainView<float>{&m.net};
}

namespace detail {

template <typename S>
inline S sign_of(S v) {
  return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
}

template <typename S>
inline void check_attack_batch(const std::vector<std::vector<S>>& images,
                               std::span<const int> labels, size_t input_size, int num_classes) {
  if (images.empty()) throw InputError("attack batch is empty");
  if (images.size() != labels.size())
    throw InputError("attack batch has " + std::to_string(images.size()) + " images but " +
                     std::to_string(labels.size()) + " labels");
  for (const auto& img : images) {
    if (img.size() != input_size)
      throw InputError("attack image has " + std::to_string(img.size()) +
                       " values, classifier expects " + std::to_string(input_size));
    for (S v : img)
      if (!std::isfinite(double(v))) throw InputError("attack image contains non-finite values");
  }
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw InputError("domain label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
}

}  // namespace detail

// Mean softmax cross-entropy of the scorer against domain labels. This is the
// quantity the attack maximizes.
template <typename S, class M>
  requires DomainScorer<M, S>
double domain_loss(const M& m, const std::vector<std::vector<S>>& images,
                   std::span<const int> labels) {
  detail::check_attack_batch(images, labels, m.input_size(), m.num_classes());
  double total = 0.0;
  for (size_t i = 0; i < images.size(); ++i) {
    auto z = m.logits(std::span<const S>(images[i]));
    double mx = double(z[0]);
    for (S v : z) mx = std::max(mx, double(v));
    double sum = 0.0;
    for (S v : z) sum += std::exp(double(v) - mx);
    total += mx + std::log(sum) - double(z[size_t(labels[i])]);
  }
  return total / double(images.size());
}

// One ascent step on the domain loss: x + epsilon * sign(grad), clamped to the
// valid pixel range. sign(0) is 0, so zero-gradient pixels stay put.
template <typename S>
std::vector<S> fgsm_step(std::span<const S> x, std::span<const S> grad, double epsilon,
                         double clamp_min = 0.0, double clamp_max = 1.0) {
  if (x.size() != grad.size()) throw InputError("fgsm_step: image/gradient size mismatch");
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm_step: epsilon must be non-negative");
  const S eps = S(epsilon), lo = S(clamp_min), hi = S(clamp_max);
  std::vector<S> out(x.size());
  for (size_t j = 0; j < x.size(); ++j)
    out[j] = std::min(hi, std::max(lo, S(x[j] + eps * detail::sign_of(grad[j]))));
  return out;
}

// Projected gradient ascent on the domain loss, per sample, inside
// [x0 - eps, x0 + eps] intersected with [clamp_min, clamp_max]. The batch must
// span at least two domains; an attack that "confuses" a single-domain batch
// is vacuous and almost certainly a protocol wiring bug upstream.
template <typename S, class M>
  requires DomainScorer<M, S>
std::vector<std::vector<S>> pgd_attack(const M& m, const std::vector<std::vector<S>>& images,
                                       std::span<const int> labels, const AttackConfig& cfg,
                                       Rng& rng) {
  cfg.validate();
  detail::check_attack_batch(images, labels, m.input_size(), m.num_classes());
  bool mixed = false;
  for (size_t i = 1; i < labels.size(); ++i) mixed = mixed || labels[i] != labels[0];
  if (!mixed)
    throw ConfigError("attack batch spans a single domain; domain confusion is undefined");

  if (cfg.epsilon == 0.0) return images;  // disabled: hand back the inputs untouched

  const S eps = S(cfg.epsilon), step = S(cfg.step_size);
  const S lo = S(cfg.clamp_min), hi = S(cfg.clamp_max);
  std::vector<std::vector<S>> out;
  out.reserve(images.size());
  std::vector<S> grad(m.input_size());
  for (size_t i = 0; i < images.size(); ++i) {
    const std::vector<S>& x0 = images[i];
    std::vector<S> x = x0;
    if (cfg.random_start) {
      for (size_t j = 0; j < x.size(); ++j) {
        S v = S(x0[j] + S(rng.uniform(-cfg.epsilon, cfg.epsilon)));
        x[j] = std::min(hi, std::max(lo, v));
      }
    }
    for (int s = 0; s < cfg.steps; ++s) {
      m.ce_and_input_gradient(std::span<const S>(x), labels[i], std::span<S>(grad));
      for (size_t j = 0; j < x.size(); ++j) {
        S v = S(x[j] + step * detail::sign_of(grad[j]));
        v = std::min(S(x0[j] + eps), std::max(S(x0[j] - eps), v));  // ball projection
        x[j] = std::min(hi, std::max(lo, v));
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

// How well the classifier identifies domains before and after the attack.
// Accuracy is argmax agreement with the sample's domain (ties resolve to the
// lowest index). Batches interleave domains round-robin so every attacked
// batch is mixed by construction.
struct ConfusionReport {
  double clean_accuracy = 0.0;
  double attacked_accuracy = 0.0;
  long count = 0;
};

inline void to_json(nlohmann::json& j, const ConfusionReport& r) {
  j = nlohmann::json{{"clean_accuracy", r.clean_accuracy},
                     {"attacked_accuracy", r.attacked_accuracy},
                     {"count", r.count}};
}

namespace detail {

template <typename S>
int argmax_index(const std::vector<S>& z) {
  int best = 0;
  for (int j = 1; j < int(z.size()); ++j)
    if (z[size_t(j)] > z[size_t(best)]) best = j;
  return best;
}

}  // namespace detail

template <class M>
  requires DomainScorer<M, float>
ConfusionReport domain_confusion_report(const M& m, const Dataset& data,
                                        const AttackConfig& cfg, uint64_t seed,
                                        int batch_size = 64) {
  cfg.validate();
  if (batch_size < 2) throw ConfigError("confusion report batch_size must be >= 2");
  auto domains = data.domain_ids();
  if (int(domains.size()) < 2)
    throw ConfigError("confusion report needs at least 2 domains, got " +
                      std::to_string(domains.size()));
  if (int(domains.size()) > m.num_classes())
    throw InputError("dataset has more domains than the classifier has classes");
  std::unordered_map<int, int> label_of;
  for (size_t k = 0; k < domains.size(); ++k) label_of[domains[k]] = int(k);

  // Shuffle within each domain, then interleave across domains.
  std::vector<std::vector<size_t>> per_domain(domains.size());
  for (size_t i = 0; i < data.samples.size(); ++i)
    per_domain[size_t(label_of.at(data.samples[i].domain_id))].push_back(i);
  Rng rng(derive_seed(seed, "confusion"));
  for (auto& idx : per_domain) shuffle(idx, rng);
  std::vector<size_t> order;
  order.reserve(data.samples.size());
  size_t longest = 0;
  for (const auto& idx : per_domain) longest = std::max(longest, idx.size());
  for (size_t r = 0; r < longest; ++r)
    for (const auto& idx : per_domain)
      if (r < idx.size()) order.push_back(idx[r]);

  Rng attack_rng(derive_seed(seed, "confusion_attack"));
  long clean_hits = 0, attacked_hits = 0, total = 0;
  for (size_t begin = 0; begin < order.size(); begin += size_t(batch_size)) {
    size_t end = std::min(order.size(), begin + size_t(batch_size));
    std::vector<std::vector<float>> images;
    std::vector<int> labels;
    for (size_t k = begin; k < end; ++k) {
      const Sample& s = data.samples[order[k]];
      images.push_back(s.image);
      labels.push_back(label_of.at(s.domain_id));
    }
    bool mixed = false;
    for (size_t i = 1; i < labels.size(); ++i) mixed = mixed || labels[i] != labels[0];
    for (size_t i = 0; i < images.size(); ++i)
      clean_hits += detail::argmax_index(m.logits(std::span<const float>(images[i]))) == labels[i];
    if (mixed && cfg.epsilon > 0.0) {
      auto adv = pgd_attack(m, images, labels, cfg, attack_rng);
      for (size_t i = 0; i < adv.size(); ++i)
        attacked_hits +=
            detail::argmax_index(m.logits(std::span<const float>(adv[i]))) == labels[i];
    } else {
      // trailing single-domain remainder or disabled attack: score the clean image
      for (size_t i = 0; i < images.size(); ++i)
        attacked_hits +=
            detail::argmax_index(m.logits(std::span<const float>(images[i]))) == labels[i];
    }
    total += long(end - begin);
  }
  ConfusionReport rep;
  rep.count = total;
  rep.clean_accuracy = double(clean_hits) / double(total);
  rep.attacked_accuracy = double(attacked_hits) / double(total);
  return rep;
}

}  // namespace dtda
