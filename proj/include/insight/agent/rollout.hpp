#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "insight/agent/actors.hpp"
#include "insight/agent/ppo.hpp"
#include "insight/core/distributions.hpp"
#include "insight/dataset/dataset.hpp"
#include "insight/envs/factory.hpp"

namespace insight {

/// Which actor drives an environment.
enum class ActorMode { Neural, Eql };

inline std::string to_string(ActorMode m) { return m == ActorMode::Neural ? "neural" : "eql"; }

inline ActorMode parse_actor_mode(const std::string& s) {
  if (s == "neural") return ActorMode::Neural;
  if (s == "eql") return ActorMode::Eql;
  throw ConfigError("unknown actor '" + s + "' (expected neural or eql)");
}

/// Oracle labels of one frame stack in the shared layout: 2CK coordinates
/// (y, x) and CK existence flags.
inline void stack_labels(const std::vector<SymbolRecord>& stack, std::size_t objects, std::vector<double>& coords,
                         std::vector<std::uint8_t>& exist) {
  const std::size_t K = stack.size();
  for (std::size_t j = 0; j < objects; ++j)
    for (std::size_t f = 0; f < K; ++f) {
      coords.push_back(stack[f].coords[j][1]);
      coords.push_back(stack[f].coords[j][0]);
    }
  for (std::size_t j = 0; j < objects; ++j)
    for (std::size_t f = 0; f < K; ++f) exist.push_back(stack[f].exist[j]);
}

/// Time-major transitions: sample t·envs + e is step t of environment e.
struct Rollout {
  std::size_t envs = 0, steps = 0;
  std::vector<FrameStack> frames;
  std::vector<std::vector<SymbolRecord>> symbols;  // metrics and the online-label variant only
  std::vector<std::size_t> actions;
  std::vector<double> logp_old, values, rewards, next_values;
  std::vector<std::uint8_t> segment_end;
  std::vector<double> advantages, returns;
  /// Predicted (clipped) coordinates and existence probabilities at
  /// collection time, [N×2CK] and [N×CK].
  std::vector<double> pred_coords, pred_exist;
  std::vector<double> finished_returns;

  std::size_t size() const noexcept { return actions.size(); }
};

/// Forward pass without gradients; one row per stack.
template <typename S>
AgentVars<S> agent_eval(const PerceptionParams<S>& perception, const PerceptionConfig& pc, const ActorParams<S>& actors,
                        const ActorConfig& ac, Tape<S>& tape, const std::vector<const FrameStack*>& stacks,
                        bool with_eql) {
  Binding<S> pb(tape, false), ab(tape, false);
  return agent_forward(perception, pc, actors, ac, pb, ab, frames_tensor<S>(stacks), with_eql);
}

/// Vectorised environments that keep their state across rollouts.
class Collector {
 public:
  Collector(const EnvConfig& config, std::size_t n, std::uint64_t seed) : rng_(Rng(seed).split(0xc011)) {
    if (n == 0) throw ConfigError("collector needs at least one environment");
    for (std::size_t i = 0; i < n; ++i) {
      envs_.push_back(make_env(config));
      obs_.push_back(envs_.back()->reset(rng_.next_u64()));
    }
    running_.assign(n, 0.0);
  }

  std::size_t envs() const noexcept { return envs_.size(); }
  const EnvConfig& config() const { return envs_.front()->config(); }

  /// `steps` transitions per environment; actions are sampled from the
  /// `mode` actor. GAE fills advantages and returns.
  template <typename S>
  Rollout collect(const PerceptionParams<S>& perception, const PerceptionConfig& pc, const ActorParams<S>& actors,
                  const ActorConfig& ac, std::size_t steps, ActorMode mode, double gamma, double lambda) {
    if (steps == 0) throw ContractError("collect: steps must be positive (empty batch)");
    const std::size_t n = envs_.size();
    Rollout r;
    r.envs = n;
    r.steps = steps;
    const std::size_t total = n * steps;
    r.frames.reserve(total);
    r.symbols.reserve(total);
    r.next_values.assign(total, 0.0);
    r.segment_end.assign(total, 0);
    std::vector<std::size_t> pending(n, SIZE_MAX);  // sample waiting for V(next state)
    const bool eql = mode == ActorMode::Eql;
    const std::size_t L = pc.objects * pc.frame_stack;

    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<const FrameStack*> stacks;
      for (const auto& o : obs_) stacks.push_back(&o.frames);
      Tape<S> tape;
      const auto v = agent_eval(perception, pc, actors, ac, tape, stacks, eql);
      const Tensor<S>& logp = (eql ? v.eql_logp : v.neural_logp).value();
      const std::size_t A = logp.dim(1);
      const Tensor<S> coords = clip01(v.perception.coord_raw.value());
      const Tensor<S>& exist = v.perception.exist_prob.value();
      for (std::size_t e = 0; e < n; ++e) {
        const double value = static_cast<double>(v.value.value()[e]);
        if (pending[e] != SIZE_MAX) r.next_values[pending[e]] = value;
        Tensor<S> probs(Shape{A});
        for (std::size_t a = 0; a < A; ++a) probs[a] = std::exp(logp.at(e, a));
        // Renormalise away float rounding before sampling.
        S z = 0;
        for (S p : probs.data()) z += p;
        for (S& p : probs.data()) p /= z;
        const std::size_t action = categorical(probs, rng_);

        const std::size_t k = r.size();
        r.frames.push_back(obs_[e].frames);
        r.symbols.push_back(obs_[e].symbols);
        r.actions.push_back(action);
        r.logp_old.push_back(static_cast<double>(logp.at(e, action)));
        r.values.push_back(value);
        for (std::size_t i = 0; i < 2 * L; ++i) r.pred_coords.push_back(static_cast<double>(coords.at(e, i)));
        for (std::size_t i = 0; i < L; ++i) r.pred_exist.push_back(static_cast<double>(exist.at(e, i)));

        StepResult s = envs_[e]->step(action);
        r.rewards.push_back(s.reward);
        running_[e] += s.reward;
        pending[e] = k;
        if (s.done()) {
          r.segment_end[k] = 1;
          pending[e] = SIZE_MAX;
          if (s.truncated) r.next_values[k] = bootstrap(perception, pc, actors, ac, s.observation.frames);
          r.finished_returns.push_back(running_[e]);
          running_[e] = 0;
          obs_[e] = envs_[e]->reset(rng_.next_u64());
        } else {
          obs_[e] = std::move(s.observation);
        }
      }
    }
    // Rollout cut: bootstrap every unfinished segment from the current state.
    std::vector<const FrameStack*> stacks;
    for (const auto& o : obs_) stacks.push_back(&o.frames);
    Tape<S> tape;
    const auto v = agent_eval(perception, pc, actors, ac, tape, stacks, false);
    for (std::size_t e = 0; e < n; ++e) {
      if (pending[e] == SIZE_MAX) continue;
      r.next_values[pending[e]] = static_cast<double>(v.value.value()[e]);
      r.segment_end[pending[e]] = 1;
    }

    r.advantages.assign(total, 0.0);
    r.returns.assign(total, 0.0);
    for (std::size_t e = 0; e < n; ++e) {
      std::vector<double> rew, val, nxt;
      std::vector<std::uint8_t> end;
      for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t k = t * n + e;
        rew.push_back(r.rewards[k]);
        val.push_back(r.values[k]);
        nxt.push_back(r.next_values[k]);
        end.push_back(r.segment_end[k]);
      }
      const Advantages g = gae(rew, val, nxt, end, gamma, lambda);
      for (std::size_t t = 0; t < steps; ++t) {
        r.advantages[t * n + e] = g.advantages[t];
        r.returns[t * n + e] = g.returns[t];
      }
    }
    for (double x : r.advantages)
      if (!std::isfinite(x)) throw NumericError("collect: non-finite advantage");
    return r;
  }

 private:
  template <typename S>
  double bootstrap(const PerceptionParams<S>& perception, const PerceptionConfig& pc, const ActorParams<S>& actors,
                   const ActorConfig& ac, const FrameStack& frames) {
    Tape<S> tape;
    const auto v = agent_eval(perception, pc, actors, ac, tape, {&frames}, false);
    return static_cast<double>(v.value.value()[0]);
  }

  Rng rng_;
  std::vector<std::unique_ptr<Environment>> envs_;
  std::vector<Observation> obs_;
  std::vector<double> running_;
};

}  // namespace insight
