#pragma once

#include <string>
#include <vector>

#include "insight/eql/model.hpp"
#include "insight/perception/model.hpp"

namespace insight {

struct ActorConfig {
  std::size_t actions = 3;
  std::size_t neural_hidden = 64;
  std::size_t critic_hidden = 64;
  /// Feed the neural actor masked predicted coordinates instead of the
  /// perception hidden vector.
  bool coor_neural = false;
  EqlConfig eql;

  friend bool operator==(const ActorConfig&, const ActorConfig&) = default;
};

/// Defaults for a perception config: EQL reads all 2CK coordinates.
inline ActorConfig default_actor_config(const PerceptionConfig& pc, std::size_t actions) {
  ActorConfig a;
  a.actions = actions;
  a.eql.input_dim = pc.coord_dim();
  a.eql.actions = actions;
  return a;
}

template <typename S>
struct ActorParams {
  MlpHead<S> neural;  // hidden (or coordinates) -> action logits
  MlpHead<S> critic;  // hidden -> value
  EqlParams<S> eql;   // masked coordinates -> grouped logits

  ActorParams() = default;
  ActorParams(const ActorConfig& a, const PerceptionConfig& pc, Rng& rng) {
    if (a.eql.input_dim != pc.coord_dim()) throw ConfigError("EQL input width must equal 2*C*K coordinates");
    if (a.eql.actions != a.actions) throw ConfigError("EQL action count differs from the actor's");
    Rng r0 = rng.split(1), r1 = rng.split(2), r2 = rng.split(3);
    neural = MlpHead<S>(a.coor_neural ? pc.coord_dim() : pc.hidden, a.neural_hidden, a.actions, r0);
    critic = MlpHead<S>(pc.hidden, a.critic_hidden, 1, r1);
    eql = EqlParams<S>(a.eql, r2);
    // Near-uniform initial policies, as is usual for PPO policy heads.
    for (auto& v : neural.l2.w.data()) v *= S(0.01);
    neural.l2.b.fill(S(0));
  }

  template <typename F>
  void visit(F&& f) {
    neural.visit("neural", f);
    critic.visit("critic", f);
    eql.visit([&](const std::string& n, Tensor<S>& t) { f("eql." + n, t); });
  }
  template <typename F>
  void visit(F&& f) const {
    neural.visit("neural", f);
    critic.visit("critic", f);
    eql.visit([&](const std::string& n, const Tensor<S>& t) { f("eql." + n, t); });
  }
};

/// Mask from predicted existence: 1 for both axes of every (object, frame)
/// predicted present (p >= 0.5).
template <typename S>
Tensor<S> existence_mask(const Tensor<S>& exist_prob) {
  Shape shape = exist_prob.shape();
  shape.back() *= 2;
  Tensor<S> m(shape);
  for (std::size_t i = 0; i < exist_prob.size(); ++i) m[2 * i] = m[2 * i + 1] = exist_prob[i] >= S(0.5) ? S(1) : S(0);
  return m;
}

/// Everything the agent computes from one batch of frame stacks.
template <typename S>
struct AgentVars {
  PerceptionVars<S> perception;
  Var<S> eql_input;     // [B×2CK] clipped, masked coordinates
  Var<S> neural_logp;   // [B×A]
  Var<S> value;         // [B×1]
  Var<S> eql_logp;      // [B×A]; only when requested
};

/// One forward pass. `pbind` binds perception weights (frozen or not),
/// `abind` the actor weights.
template <typename S>
AgentVars<S> agent_forward(const PerceptionParams<S>& perception, const PerceptionConfig& pc, const ActorParams<S>& actors,
                           const ActorConfig& ac, Binding<S>& pbind, Binding<S>& abind, const Tensor<S>& frames,
                           bool with_eql) {
  AgentVars<S> v;
  v.perception = perception_forward(perception, pc, pbind, pbind.tape().constant(frames));
  const Tensor<S>& prob = v.perception.exist_prob.value();
  const Tensor<S> mask = existence_mask(prob);
  // The mask is a step function of the probabilities.
  for (S q : prob.data()) pbind.tape().note_kink(std::abs(q - S(0.5)));
  v.eql_input = ad::mul_const(ad::clip01(v.perception.coord_raw), mask);
  const Var<S>& actor_in = ac.coor_neural ? v.eql_input : v.perception.hidden;
  v.neural_logp = ad::log_softmax(actors.neural(abind, actor_in));
  v.value = actors.critic(abind, v.perception.hidden);
  if (with_eql) v.eql_logp = eql_log_probs(actors.eql, ac.eql, abind, v.eql_input);
  return v;
}

}  // namespace insight
