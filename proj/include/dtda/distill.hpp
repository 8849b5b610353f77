// Distillation and liveness losses, computed in double precision with
// analytic logit gradients.
//
// The distillation term is KL(teacher || student) between temperature-softened
// softmax distributions, averaged over the batch and by default scaled by
// tau^2 so the gradient magnitude stays comparable across temperatures. The
// liveness term is two-way softmax cross-entropy. The combined objective is
//   l_sum = l_f + lambda1 * l_fr + lambda2 * l_fa
// where l_fr distills the identity teacher and l_fa the attribute teacher.
#pragma once

#include <span>
#include <vector>

#include "dtda/common.hpp"
#include "json.hpp"

namespace dtda {

struct KDConfig {
  double tau = 4.0;
  double lambda1 = 1.0;  // identity-teacher weight
  double lambda2 = 1.0;  // attribute-teacher weight
  bool tau_squared_scaling = true;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("kd tau must be positive, got " + format_double(tau));
    if (!(lambda1 >= 0.0))
      throw ConfigError("kd lambda1 must be non-negative, got " + format_double(lambda1));
    if (!(lambda2 >= 0.0))
      throw ConfigError("kd lambda2 must be non-negative, got " + format_double(lambda2));
  }
};

inline void to_json(nlohmann::json& j, const KDConfig& k) {
  j = nlohmann::json{{"tau", k.tau},
                     {"lambda1", k.lambda1},
                     {"lambda2", k.lambda2},
                     {"tau_squared_scaling", k.tau_squared_scaling}};
}

inline void from_json(const nlohmann::json& j, KDConfig& k) {
  KDConfig d;
  k.tau = j.value("tau", d.tau);
  k.lambda1 = j.value("lambda1", d.lambda1);
  k.lambda2 = j.value("lambda2", d.lambda2);
  k.tau_squared_scaling = j.value("tau_squared_scaling", d.tau_squared_scaling);
}

// Dense batch of logit rows in double precision.
struct LogitRows {
  int rows = 0;
  int width = 0;
  std::vector<double> v;

  LogitRows() = default;
  LogitRows(int r, int w) : rows(r), width(w), v(size_t(r) * size_t(w), 0.0) {}

  std::span<double> row(int i) { return {v.data() + size_t(i) * width, size_t(width)}; }
  std::span<const double> row(int i) const {
    return {v.data() + size_t(i) * width, size_t(width)};
  }

  template <typename T>
  static LogitRows from(const std::vector<std::vector<T>>& src) {
    if (src.empty()) throw InputError("logit batch is empty");
    LogitRows out(int(src.size()), int(src[0].size()));
    for (size_t i = 0; i < src.size(); ++i) {
      if (src[i].size() != size_t(out.width))
        throw InputError("ragged logit batch");
      for (size_t j = 0; j < src[i].size(); ++j)
        out.v[i * size_t(out.width) + j] = double(src[i][j]);
    }
    return out;
  }
};

namespace detail {

inline void check_finite(const LogitRows& r, const char* what) {
  for (double x : r.v)
    if (!std::isfinite(x)) throw InputError(std::string(what) + " contains non-finite values");
}

inline double log_sum_exp(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

// KL(softmax(teacher/tau) || softmax(student/tau)), mean over rows, times
// tau^2 when tau_squared_scaling is set. dstudent (optional) receives the
// gradient with respect to the raw student logits.
inline double kd_loss(const LogitRows& teacher, const LogitRows& student, double tau,
                      bool tau_squared_scaling = true, LogitRows* dstudent = nullptr) {
  if (!(tau > 0.0)) throw ConfigError("kd tau must be positive, got " + format_double(tau));
  if (teacher.rows != student.rows)
    throw InputError("kd_loss: teacher has " + std::to_string(teacher.rows) +
                     " rows, student has " + std::to_string(student.rows));
  if (teacher.width != student.width)
    throw InputError("kd_loss: teacher logit width " + std::to_string(teacher.width) +
                     " does not match student width " + std::to_string(student.width));
  if (teacher.rows == 0) throw InputError("kd_loss: empty batch");
  detail::check_finite(teacher, "kd_loss teacher logits");
  detail::check_finite(student, "kd_loss student logits");

  const double scale = tau_squared_scaling ? tau * tau : 1.0;
  const int n = teacher.rows, k = teacher.width;
  if (dstudent) *dstudent = LogitRows(n, k);
  std::vector<double> a(static_cast<size_t>(k)), b(static_cast<size_t>(k));
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    auto trow = teacher.row(i);
    auto srow = student.row(i);
    for (int j = 0; j < k; ++j) {
      a[size_t(j)] = trow[size_t(j)] / tau;
      b[size_t(j)] = srow[size_t(j)] / tau;
    }
    double lse_a = detail::log_sum_exp(a);
    double lse_b = detail::log_sum_exp(b);
    double row_kl = 0.0;
    for (int j = 0; j < k; ++j) {
      double log_q = a[size_t(j)] - lse_a;
      double log_p = b[size_t(j)] - lse_b;
      double q = std::exp(log_q);
      row_kl += q * (log_q - log_p);
      if (dstudent) {
        double p = std::exp(log_p);
        dstudent->v[size_t(i) * k + size_t(j)] = scale * (p - q) / (tau * double(n));
      }
    }
    loss += row_kl;
  }
  return scale * loss / double(n);
}

inline double kd_loss(const LogitRows& teacher, const LogitRows& student, const KDConfig& kd,
                      LogitRows* dstudent = nullptr) {
  return kd_loss(teacher, student, kd.tau, kd.tau_squared_scaling, dstudent);
}

// Two-way softmax cross-entropy against liveness labels (1 = live, 0 = spoof),
// mean over rows. dlogits (optional) receives the gradient.
inline double fas_loss(const LogitRows& logits, std::span<const int> liveness,
                       LogitRows* dlogits = nullptr) {
  if (logits.width != 2)
    throw InputError("fas_loss expects two-way logits, got width " +
                     std::to_string(logits.width));
  if (logits.rows == 0) throw InputError("fas_loss: empty batch");
  if (size_t(logits.rows) != liveness.size())
    throw InputError("fas_loss: " + std::to_string(logits.rows) + " logit rows but " +
                     std::to_string(liveness.size()) + " labels");
  detail::check_finite(logits, "fas_loss logits");
  for (int y : liveness)
    if (y != 0 && y != 1)
      throw InputError("fas_loss: liveness label must be 0 or 1, got " + std::to_string(y));

  const int n = logits.rows;
  if (dlogits) *dlogits = LogitRows(n, 2);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    auto row = logits.row(i);
    double lse = detail::log_sum_exp(row);
    loss += lse - row[size_t(liveness[size_t(i)])];
    if (dlogits) {
      for (int j = 0; j < 2; ++j) {
        double p = std::exp(row[size_t(j)] - lse);
        dlogits->v[size_t(i) * 2 + size_t(j)] =
            (p - (j == liveness[size_t(i)] ? 1.0 : 0.0)) / double(n);
      }
    }
  }
  return loss / double(n);
}

inline double total_loss(double l_f, double l_fr, double l_fa, const KDConfig& kd) {
  return l_f + kd.lambda1 * l_fr + kd.lambda2 * l_fa;
}

// Multi-class softmax cross-entropy, mean over rows; shared by the domain
// classifier objective and the teacher pre-training objectives.
inline double multiclass_ce(const LogitRows& logits, std::span<const int> labels,
                            LogitRows* dlogits = nullptr) {
  if (logits.rows == 0) throw InputError("multiclass_ce: empty batch");
  if (size_t(logits.rows) != labels.size())
    throw InputError("multiclass_ce: row/label count mismatch");
  detail::check_finite(logits, "multiclass_ce logits");
  for (int y : labels)
    if (y < 0 || y >= logits.width)
      throw InputError("multiclass_ce: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(logits.width) + ")");
  const int n = logits.rows, k = logits.width;
  if (dlogits) *dlogits = LogitRows(n, k);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    auto row = logits.row(i);
    double lse = detail::log_sum_exp(row);
    loss += lse - row[size_t(labels[size_t(i)])];
    if (dlogits) {
      for (int j = 0; j < k; ++j) {
        double p = std::exp(row[size_t(j)] - lse);
        dlogits->v[size_t(i) * k + size_t(j)] =
            (p - (j == labels[size_t(i)] ? 1.0 : 0.0)) / double(n);
      }
    }
  }
  return loss / double(n);
}

// Independent per-logit sigmoid cross-entropy against attribute bits, summed
// over attributes and averaged over rows; the attribute teacher pre-trains
// with this. Chance level is width * ln(2).
inline double multilabel_bce(const LogitRows& logits,
                             const std::vector<std::vector<uint8_t>>& bits,
                             LogitRows* dlogits = nullptr) {
  if (logits.rows == 0) throw InputError("multilabel_bce: empty batch");
  if (size_t(logits.rows) != bits.size())
    throw InputError("multilabel_bce: row/label count mismatch");
  detail::check_finite(logits, "multilabel_bce logits");
  const int n = logits.rows, k = logits.width;
  if (dlogits) *dlogits = LogitRows(n, k);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (bits[size_t(i)].size() != size_t(k))
      throw InputError("multilabel_bce: attribute width mismatch");
    auto row = logits.row(i);
    for (int j = 0; j < k; ++j) {
      double z = row[size_t(j)];
      double y = bits[size_t(i)][size_t(j)] ? 1.0 : 0.0;
      // softplus(z) - y*z, stable for either sign of z
      double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      loss += sp - y * z;
      if (dlogits) {
        double sig = 1.0 / (1.0 + std::exp(-z));
        dlogits->v[size_t(i) * k + size_t(j)] = (sig - y) / double(n);
      }
    }
  }
  return loss / double(n);
}

}  // namespace dtda
