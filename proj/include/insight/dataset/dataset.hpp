#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/core/rng.hpp"
#include "insight/core/tensor.hpp"
#include "insight/dataset/label_weights.hpp"
#include "insight/envs/factory.hpp"

namespace insight {

// Label layout shared by the perception heads, the EQL input and the
// prompts. With C objects and K stacked frames (frame K is the current one):
//   existence  index j*K + f
//   coordinate index (j*K + f)*2 + {0: y, 1: x}
//   size       index j*2 + {0: w, 1: h}, current frame only

inline std::size_t exist_index(std::size_t j, std::size_t f, std::size_t K) { return j * K + f; }
inline std::size_t coord_index(std::size_t j, std::size_t f, std::size_t axis, std::size_t K) {
  return (j * K + f) * 2 + axis;
}

/// "[x/y]_object_frame" names in coordinate-vector order, frames numbered 1..K.
inline std::vector<std::string> coordinate_names(const std::vector<std::string>& objects, std::size_t K) {
  std::vector<std::string> names;
  for (const auto& obj : objects)
    for (std::size_t f = 0; f < K; ++f) {
      names.push_back("y_" + obj + "_" + std::to_string(f + 1));
      names.push_back("x_" + obj + "_" + std::to_string(f + 1));
    }
  return names;
}

enum class BehaviorPolicy { Random, Scripted };

inline std::string to_string(BehaviorPolicy p) { return p == BehaviorPolicy::Random ? "random" : "scripted"; }

inline BehaviorPolicy parse_behavior_policy(const std::string& s) {
  if (s == "random") return BehaviorPolicy::Random;
  if (s == "scripted") return BehaviorPolicy::Scripted;
  throw ConfigError("unknown behavior policy '" + s + "' (expected random or scripted)");
}

struct FrameSymbolDataset {
  EnvConfig env;  // resolved: object count and step cap filled in
  std::vector<std::string> object_names;
  std::string policy;
  std::uint64_t seed = 0;
  std::vector<FrameStack> frames;
  std::vector<std::vector<SymbolRecord>> symbols;  // per sample, K records oldest first
  std::vector<std::size_t> train, test;

  std::size_t size() const noexcept { return frames.size(); }
  std::size_t objects() const noexcept { return env.max_objects; }
  std::size_t stack() const noexcept { return env.frame_stack; }

  /// C*K presence flags of one sample.
  std::vector<std::uint8_t> exist_labels(std::size_t i) const {
    std::vector<std::uint8_t> out(objects() * stack());
    for (std::size_t j = 0; j < objects(); ++j)
      for (std::size_t f = 0; f < stack(); ++f) out[exist_index(j, f, stack())] = symbols[i][f].exist[j];
    return out;
  }

  /// 2*C*K coordinates of one sample; absent entries are 0.
  std::vector<double> coord_labels(std::size_t i) const {
    std::vector<double> out(2 * objects() * stack());
    for (std::size_t j = 0; j < objects(); ++j)
      for (std::size_t f = 0; f < stack(); ++f) {
        const auto& s = symbols[i][f];
        out[coord_index(j, f, 0, stack())] = s.coords[j][1];
        out[coord_index(j, f, 1, stack())] = s.coords[j][0];
      }
    return out;
  }

  /// 2*C sizes of the current frame.
  std::vector<double> size_labels(std::size_t i) const {
    std::vector<double> out(2 * objects());
    const auto& s = symbols[i].back();
    for (std::size_t j = 0; j < objects(); ++j) {
      out[2 * j] = s.sizes[j][0];
      out[2 * j + 1] = s.sizes[j][1];
    }
    return out;
  }

  friend bool operator==(const FrameSymbolDataset&, const FrameSymbolDataset&) = default;
};

/// Throws unless train/test partition [0, size).
inline void check_split(const FrameSymbolDataset& d) {
  std::vector<std::uint8_t> seen(d.size(), 0);
  for (const auto* part : {&d.train, &d.test})
    for (std::size_t i : *part) {
      if (i >= d.size()) throw FormatError("split index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw FormatError("split index " + std::to_string(i) + " listed twice");
    }
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!seen[i]) throw FormatError("sample " + std::to_string(i) + " is in neither split");
}

/// Seeded 80:20 split: round(0.8 n) training samples.
inline void assign_split(FrameSymbolDataset& d, std::uint64_t seed) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).split(0x5e1);
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(d.size())));
  d.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.test.begin(), d.test.end());
}

/// Hand-written competent play from oracle symbols; a quarter of the
/// actions are random so the data still covers off-policy states.
inline std::size_t scripted_action(EnvId env, const Observation& obs, Rng& rng) {
  if (rng.uniform() < 0.25) return rng.below(3);
  const SymbolRecord& s = obs.symbols.back();
  if (env == EnvId::MiniPong) {
    const double ball = s.coords[0][1], paddle = s.coords[1][1];
    if (ball < paddle - 0.02) return 1;
    if (ball > paddle + 0.02) return 2;
    return 0;
  }
  // MiniCrossing: advance unless a car is about to occupy the next row.
  const double agent_x = s.coords[0][0], agent_y = s.coords[0][1], agent_h = s.sizes[0][1];
  for (std::size_t j = 1; j < s.objects(); ++j) {
    if (!s.exist[j]) continue;
    const bool next_row = std::abs(s.coords[j][1] - (agent_y - agent_h)) < 0.5 * agent_h;
    if (next_row && std::abs(s.coords[j][0] - agent_x) < 3 * s.sizes[j][0]) return 0;
  }
  return 1;
}

/// Rolls out the behaviour policy and records every observation.
inline FrameSymbolDataset generate(const EnvConfig& config, BehaviorPolicy policy, std::size_t n_frames) {
  if (n_frames < 10) throw ContractError("dataset needs at least 10 frames, got " + std::to_string(n_frames));
  auto env = make_env(config);
  FrameSymbolDataset d;
  d.env = env->config();
  d.object_names = env->object_names();
  d.policy = to_string(policy);
  d.seed = config.seed;
  Rng rng = Rng(config.seed).split(0xda7a);
  std::uint64_t episode = 0;
  Observation obs = env->reset(Rng(config.seed).split(episode).next_u64());
  while (d.size() < n_frames) {
    d.frames.push_back(obs.frames);
    d.symbols.push_back(obs.symbols);
    const std::size_t action =
        policy == BehaviorPolicy::Random ? rng.below(env->action_count()) : scripted_action(config.env_id, obs, rng);
    StepResult r = env->step(action);
    obs = std::move(r.observation);
    if (r.done()) obs = env->reset(Rng(config.seed).split(++episode).next_u64());
  }
  assign_split(d, config.seed);
  return d;
}

/// Presence matrix (samples × C*K) for a subset of samples.
inline std::vector<std::uint8_t> presence_matrix(const FrameSymbolDataset& d, const std::vector<std::size_t>& idx) {
  std::vector<std::uint8_t> out;
  out.reserve(idx.size() * d.objects() * d.stack());
  for (std::size_t i : idx) {
    const auto row = d.exist_labels(i);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

/// Existence-label weights fitted on the training split.
inline LabelWeights label_weights(const FrameSymbolDataset& d, LabelWeightOptions opt = {}) {
  if (d.train.empty()) throw DegenerateDataError("dataset has no training samples");
  return label_weights(presence_matrix(d, d.train), d.train.size(), d.objects() * d.stack(), opt);
}

}  // namespace insight
