#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "insight/core/ops.hpp"

namespace insight {

struct PpoConfig {
  std::size_t total_steps = 200000;
  double lr = 2.5e-4;
  std::size_t batch = 1024;
  std::size_t envs = 8;
  /// Small on purpose: the EQL actor only learns in the last iteration, so
  /// this sets how many distillation steps it gets per batch.
  std::size_t minibatch = 64;
  /// Inner iterations per batch; the last one optimises the full objective.
  std::size_t iterations = 4;
  double lambda_reg = 1e-3;
  double lambda_cnn = 2.0;
  std::size_t symbol_batch = 32;
  double clip = 0.1;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  double prune_threshold = 0.01;

  void validate() const {
    if (total_steps == 0 || batch == 0 || envs == 0 || minibatch == 0 || iterations == 0 || symbol_batch == 0) {
      throw ConfigError("PPO sizes and iteration counts must be positive");
    }
    if (batch % envs != 0) throw ConfigError("PPO batch must be a multiple of the number of environments");
    if (!(lr > 0) || !(clip > 0) || !(gamma > 0) || gamma > 1 || !(gae_lambda >= 0) || gae_lambda > 1) {
      throw ConfigError("PPO lr, clip, gamma and GAE lambda must be positive (gamma, lambda <= 1)");
    }
    if (lambda_reg < 0 || lambda_cnn < 0 || value_coef < 0 || entropy_coef < 0 || max_grad_norm < 0) {
      throw ConfigError("PPO coefficients must be non-negative");
    }
  }
  std::size_t updates() const { return std::max<std::size_t>(1, total_steps / batch); }
  friend bool operator==(const PpoConfig&, const PpoConfig&) = default;
};

/// λ_reg for update `update` (1-based) of `total`: λ·(update−1)/total.
inline double anneal(double lambda_init, std::size_t update, std::size_t total) {
  if (update == 0 || total == 0) throw ContractError("anneal: update index and total are 1-based and positive");
  return lambda_init * static_cast<double>(update - 1) / static_cast<double>(total);
}

struct Advantages {
  std::vector<double> advantages, returns;
};

/// Generalised advantage estimation over a time-ordered stream.
/// next_values[t] is V(s_{t+1}), zero when t terminated the episode;
/// segment_end[t] marks the last step before a reset or the rollout cut.
inline Advantages gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<double>& next_values, const std::vector<std::uint8_t>& segment_end, double gamma,
                      double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || segment_end.size() != n) {
    throw DimensionError("gae: rewards, values, next values and segment flags must align");
  }
  Advantages out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0;
  for (std::size_t k = n; k-- > 0;) {
    if (segment_end[k]) running = 0;
    const double delta = rewards[k] + gamma * next_values[k] - values[k];
    running = delta + gamma * lambda * running;
    out.advantages[k] = running;
    out.returns[k] = running + values[k];
  }
  return out;
}

/// Single-episode convenience: the last step is terminal.
inline Advantages gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                      double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n) throw DimensionError("gae: rewards and values must align");
  std::vector<double> next(n, 0.0);
  for (std::size_t t = 0; t + 1 < n; ++t) next[t] = values[t + 1];
  std::vector<std::uint8_t> end(n, 0);
  if (n) end[n - 1] = 1;
  return gae(rewards, values, next, end, gamma, lambda);
}

inline void normalize(std::vector<double>& v) {
  if (v.size() < 2) return;
  double mean = 0, var = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = (x - mean) / (sd + 1e-8);
}

namespace ad {

/// -(1/B) Σ min(r·A, clip(r, 1−ε, 1+ε)·A) with r = exp(logp − logp_old).
/// Where the clipped branch is the minimum and r lies outside the band the
/// sample passes no gradient.
template <typename S>
Var<S> ppo_clip_objective(const Var<S>& logp, const std::vector<double>& logp_old, const std::vector<double>& adv,
                          double eps) {
  const std::size_t n = logp.size();
  if (logp_old.size() != n || adv.size() != n) throw DimensionError("PPO objective: batch sizes differ");
  auto& tape = logp.tape();
  const auto& lv = logp.value();
  auto active = std::make_shared<std::vector<double>>(n, 0.0);  // dL/dr per sample, before the 1/B
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::exp(static_cast<double>(lv[i]) - logp_old[i]);
    const double rc = std::clamp(r, 1 - eps, 1 + eps);
    const double unclipped = r * adv[i], clipped = rc * adv[i];
    total += std::min(unclipped, clipped);
    // Unclipped branch is the min (or r inside the band): gradient A·r wrt logp.
    if (unclipped <= clipped) (*active)[i] = adv[i] * r;
    tape.note_kink(static_cast<S>(std::min(std::abs(r - (1 - eps)), std::abs(r - (1 + eps)))));
  }
  const std::size_t li = logp.id();
  return tape.record(Tensor<S>::scalar(static_cast<S>(-total / static_cast<double>(n))), {logp},
                     [=](Tape<S>& t, std::size_t self) {
                       const double g = static_cast<double>(t.grad_buffer(self)[0]) / static_cast<double>(n);
                       auto& gl = t.grad_buffer(li);
                       for (std::size_t i = 0; i < n; ++i) gl[i] -= static_cast<S>(g * (*active)[i]);
                     });
}

}  // namespace ad

/// Mean cross-entropy H(p_teacher, q) = −(1/B) Σ_s Σ_a p(a|s) ln q(a|s);
/// the teacher distribution is a constant.
template <typename S>
Var<S> cross_entropy(const Tensor<S>& teacher_probs, const Var<S>& student_logp) {
  require_shape(teacher_probs.shape(), student_logp.shape(), "cross-entropy teacher");
  const std::size_t rows = student_logp.shape().size() > 1 ? student_logp.shape()[0] : 1;
  return ad::scale(ad::sum(ad::mul_const(student_logp, teacher_probs)), static_cast<S>(-1.0 / static_cast<double>(rows)));
}

/// Mean entropy of the distributions in the rows of `logp`.
template <typename S>
Var<S> mean_entropy(const Var<S>& logp) {
  const std::size_t rows = logp.shape().size() > 1 ? logp.shape()[0] : 1;
  return ad::scale(ad::sum(ad::mul(ad::exp(logp), logp)), static_cast<S>(-1.0 / static_cast<double>(rows)));
}

template <typename S>
Tensor<S> exp_values(const Tensor<S>& logp) {
  Tensor<S> out(logp.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(logp[i]);
  return out;
}

/// Everything PPO needs about a minibatch besides the network outputs.
struct PpoTargets {
  std::vector<std::size_t> actions;
  std::vector<double> logp_old, advantages, returns;
};

template <typename S>
struct PpoLoss {
  Var<S> surrogate, value, entropy, total;
};

/// Clipped surrogate + value_coef·0.5·mean((V − R)²) − entropy_coef·H.
template <typename S>
PpoLoss<S> ppo_loss(const Var<S>& logp_all, const Var<S>& value, const PpoTargets& t, const PpoConfig& c) {
  PpoLoss<S> l;
  const Var<S> logp = ad::gather(logp_all, t.actions);
  l.surrogate = ad::ppo_clip_objective(logp, t.logp_old, t.advantages, c.clip);
  Tensor<S> ret(value.shape());
  for (std::size_t i = 0; i < ret.size(); ++i) ret[i] = static_cast<S>(t.returns.at(i));
  auto& tape = value.tape();
  l.value = ad::scale(ad::mean(ad::square(ad::sub(value, tape.constant(ret)))), S(0.5));
  l.entropy = mean_entropy(logp_all);
  l.total = ad::add(ad::add(l.surrogate, ad::scale(l.value, static_cast<S>(c.value_coef))),
                    ad::scale(l.entropy, static_cast<S>(-c.entropy_coef)));
  return l;
}

}  // namespace insight
