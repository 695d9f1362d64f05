#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "insight/agent/metrics.hpp"
#include "insight/agent/rollout.hpp"
#include "insight/dataset/io.hpp"
#include "insight/eql/extract.hpp"
#include "insight/perception/pretrain.hpp"

namespace insight {

/// Perception, both actors and the configs needed to rebuild them.
template <typename S>
struct Agent {
  EnvConfig env;
  PerceptionConfig pc;
  ActorConfig ac;
  PerceptionParams<S> perception;
  ActorParams<S> actors;

  Agent() = default;
  Agent(const EnvConfig& e, const PerceptionConfig& p, const ActorConfig& a, PerceptionParams<S> perc, std::uint64_t seed)
      : env(e), pc(p), ac(a), perception(std::move(perc)) {
    Rng rng = Rng(seed).split(0xac7);
    actors = ActorParams<S>(ac, pc, rng);
  }

  std::vector<std::string> variable_names() const {
    return coordinate_names(make_env(env)->object_names(), pc.frame_stack);
  }
  std::vector<std::string> action_names() const { return make_env(env)->action_names(); }

  /// Extracted policy of the pruned EQL actor.
  SymbolicPolicy symbolic_policy(double prune_threshold = kPruneThreshold) const {
    return make_symbolic_policy(prune(actors.eql, prune_threshold), ac.eql, variable_names(), action_names());
  }
};

inline nlohmann::json eql_config_json(const EqlConfig& c) {
  std::vector<std::string> fns;
  for (auto f : c.functions) fns.push_back(to_string(f));
  return {{"input_dim", c.input_dim},     {"hidden_layers", c.hidden_layers}, {"repetitions", c.repetitions},
          {"functions", fns},             {"temperature", c.temperature},     {"actions", c.actions},
          {"logits_per_action", c.logits_per_action}};
}

inline EqlConfig eql_config_from_json(const nlohmann::json& j) {
  EqlConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  c.repetitions = j.at("repetitions").get<std::size_t>();
  c.functions.clear();
  for (const auto& f : j.at("functions")) c.functions.push_back(parse_eql_fn(f.get<std::string>()));
  c.temperature = j.at("temperature").get<double>();
  c.actions = j.at("actions").get<std::size_t>();
  c.logits_per_action = j.at("logits_per_action").get<std::size_t>();
  c.validate();
  return c;
}

inline nlohmann::json actor_config_json(const ActorConfig& a) {
  return {{"actions", a.actions},
          {"neural_hidden", a.neural_hidden},
          {"critic_hidden", a.critic_hidden},
          {"coor_neural", a.coor_neural},
          {"eql", eql_config_json(a.eql)}};
}

inline ActorConfig actor_config_from_json(const nlohmann::json& j) {
  ActorConfig a;
  a.actions = j.at("actions").get<std::size_t>();
  a.neural_hidden = j.at("neural_hidden").get<std::size_t>();
  a.critic_hidden = j.at("critic_hidden").get<std::size_t>();
  a.coor_neural = j.at("coor_neural").get<bool>();
  a.eql = eql_config_from_json(j.at("eql"));
  return a;
}

inline constexpr const char* kAgentMagic = "agt-v1";

template <typename S>
void save_agent(const std::string& path, const Agent<S>& a, std::size_t update) {
  TensorArchive ar;
  ar.metadata = nlohmann::json{{"env", env_config_json(a.env)},
                               {"perception", perception_config_json(a.pc)},
                               {"actor", actor_config_json(a.ac)},
                               {"update", update}}
                    .dump();
  archive_params(ar, "perception.", a.perception);
  archive_params(ar, "actors.", a.actors);
  save_archive(path, kAgentMagic, ar);
}

template <typename S>
Agent<S> load_agent(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw ArtifactError("no agent checkpoint at " + path + "; run `insight train` first");
  }
  const auto ar = load_archive(path, kAgentMagic);
  Agent<S> a;
  try {
    const auto meta = nlohmann::json::parse(ar.metadata);
    a.env = env_config_from_json(meta.at("env"));
    a.pc = perception_config_from_json(meta.at("perception"));
    a.ac = actor_config_from_json(meta.at("actor"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad agent metadata: " + e.what());
  }
  Rng rng(0);
  a.perception = PerceptionParams<S>(a.pc, rng);
  a.actors = ActorParams<S>(a.ac, a.pc, rng);
  restore_params(ar, "perception.", a.perception);
  restore_params(ar, "actors.", a.actors);
  return a;
}

struct TrainOptions {
  bool freeze_perception = false;
  /// Off: the EQL actor collects and is trained on L_ppo directly.
  bool neural_guidance = true;
  /// L_cnn labels from the online rollout instead of D_symbol.
  bool online_labels = false;
  std::uint64_t seed = 0;
  /// Written with the last finite parameters when a loss turns non-finite.
  std::string failure_checkpoint;
  /// Window of finished episodes averaged into the logged return.
  std::size_t return_window = 20;
};

struct TrainLogRow {
  std::size_t update = 0, step = 0;
  double ret = std::numeric_limits<double>::quiet_NaN();
  double l_ppo = 0, l_ng = 0, l_reg = 0, l_cnn = 0, lambda_reg = 0;
  double mae = std::numeric_limits<double>::quiet_NaN();
  double fmae = std::numeric_limits<double>::quiet_NaN();
  /// Mean entropy of the behaviour actor in the last iteration; the floor of L_ng.
  double entropy = std::numeric_limits<double>::quiet_NaN();
};

inline std::string train_log_header() { return "update,step,return,L_ppo,L_ng,L_reg,L_cnn,lambda_reg,MAE,F-MAE"; }

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << train_log_header() << '\n';
  for (const auto& r : rows)
    os << r.update << ',' << r.step << ',' << r.ret << ',' << r.l_ppo << ',' << r.l_ng << ',' << r.l_reg << ','
       << r.l_cnn << ',' << r.lambda_reg << ',' << r.mae << ',' << r.fmae << '\n';
  return os.str();
}

/// Current-frame F-MAE of predictions gathered on `n` stacks, against the
/// objects the extracted policy actually reads. NaN when undefined.
inline double rollout_fmae(const std::vector<double>& pred, const std::vector<std::vector<SymbolRecord>>& symbols,
                           std::size_t objects, std::size_t frames, const std::vector<bool>& relevant,
                           FmaeNormalization norm = FmaeNormalization::Verbatim) {
  ImageCoords d;
  d.n = symbols.size();
  d.objects = objects;
  const std::size_t L = objects * frames;
  for (std::size_t i = 0; i < d.n; ++i) {
    const SymbolRecord& cur = symbols[i].back();
    for (std::size_t j = 0; j < objects; ++j) {
      for (std::size_t a = 0; a < 2; ++a) d.pred.push_back(pred[i * 2 * L + coord_index(j, frames - 1, a, frames)]);
      d.truth.push_back(cur.coords[j][1]);
      d.truth.push_back(cur.coords[j][0]);
      d.exist.push_back(cur.exist[j]);
    }
  }
  try {
    return f_mae(d, relevant, norm);
  } catch (const UndefinedMetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

/// Full-stack MAE of collected predictions against oracle symbols.
inline double rollout_mae(const std::vector<double>& pred, const std::vector<std::vector<SymbolRecord>>& symbols,
                          std::size_t objects) {
  if (symbols.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> truth;
  std::vector<std::uint8_t> exist;
  for (const auto& s : symbols) stack_labels(s, objects, truth, exist);
  const std::size_t w = truth.size() / symbols.size();
  return coordinate_mae(Tensor<double>(Shape{symbols.size(), w}, pred), Tensor<double>(Shape{symbols.size(), w}, truth),
                        exist);
}

/// Relevant-object flags of the agent's current pruned EQL policy; empty
/// when extraction fails.
template <typename S>
std::vector<bool> policy_relevant_objects(const Agent<S>& a, double prune_threshold) {
  try {
    const auto policy = a.symbolic_policy(prune_threshold);
    return relevant_objects(policy.used_variables(), a.pc.objects, a.pc.frame_stack);
  } catch (const ExtractionError&) {
    return {};
  }
}

/// Symbol minibatch for L_cnn, either from D_symbol or from the rollout.
template <typename S>
SymbolTargets<S> symbol_minibatch(const FrameSymbolDataset* dsym, const Rollout& r, const EnvConfig& env,
                                  const LabelWeights& w, std::size_t count, bool online, Rng& rng,
                                  std::vector<FrameStack>& frames) {
  frames.clear();
  if (!online) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < count; ++i) idx.push_back(dsym->train[rng.below(dsym->train.size())]);
    for (std::size_t i : idx) frames.push_back(dsym->frames[i]);
    return make_targets<S>(*dsym, idx, w);
  }
  FrameSymbolDataset tmp;
  tmp.env = env;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = rng.below(r.size());
    tmp.frames.push_back(r.frames[k]);
    tmp.symbols.push_back(r.symbols[k]);
    idx.push_back(i);
  }
  frames = tmp.frames;
  return make_targets<S>(tmp, idx, w);
}

/// Loss components of one minibatch.
template <typename S>
struct JointLoss {
  PpoLoss<S> ppo;
  Var<S> ng, reg, cnn, total;
};

/// L = L_ppo + L_ng + λ_reg·L_reg + λ_cnn·L_cnn on one minibatch. Without
/// neural guidance L_ppo is taken on the EQL actor and L_ng is absent.
/// `cnn` is skipped when `symbols` is null. The teacher distribution is
/// π_neural of this forward pass, detached, unless `teacher` supplies one.
template <typename S>
JointLoss<S> joint_loss(const Agent<S>& a, Binding<S>& pbind, Binding<S>& abind, const Tensor<S>& frames,
                        const PpoTargets& targets, const PpoConfig& cfg, bool full, bool neural_guidance,
                        double lambda_reg, const std::type_identity_t<SymbolTargets<S>>* symbols,
                        const std::type_identity_t<Tensor<S>>* symbol_frames,
                        const std::type_identity_t<Tensor<S>>* teacher = nullptr) {
  JointLoss<S> l;
  const auto v = agent_forward(a.perception, a.pc, a.actors, a.ac, pbind, abind, frames, full || !neural_guidance);
  l.ppo = ppo_loss(neural_guidance ? v.neural_logp : v.eql_logp, v.value, targets, cfg);
  l.total = l.ppo.total;
  if (!full) return l;
  if (neural_guidance) {
    l.ng = cross_entropy(teacher ? *teacher : exp_values(v.neural_logp.value()), v.eql_logp);
    l.total = ad::add(l.total, l.ng);
  }
  l.reg = reg_loss(a.actors.eql, a.ac.eql, abind);
  l.total = ad::add(l.total, ad::scale(l.reg, static_cast<S>(lambda_reg)));
  if (symbols) {
    const auto out = perception_forward(a.perception, a.pc, pbind, pbind.tape().constant(*symbol_frames));
    l.cnn = loss_cnn(out, *symbols).total;
    l.total = ad::add(l.total, ad::scale(l.cnn, static_cast<S>(cfg.lambda_cnn)));
  }
  return l;
}

inline PpoTargets minibatch_targets(const Rollout& r, const std::vector<std::size_t>& idx,
                                    const std::vector<double>& norm_adv) {
  PpoTargets t;
  for (std::size_t k : idx) {
    t.actions.push_back(r.actions[k]);
    t.logp_old.push_back(r.logp_old[k]);
    t.advantages.push_back(norm_adv[k]);
    t.returns.push_back(r.returns[k]);
  }
  return t;
}

/// Joint policy learning. Each update collects a batch, then runs
/// `iterations` epochs of shuffled minibatches: L_ppo in all but the last,
/// the full objective in the last. `dsym` may be null, which drops L_cnn.
template <typename S>
std::vector<TrainLogRow> train(Agent<S>& agent, const PpoConfig& cfg, const TrainOptions& opt,
                               const FrameSymbolDataset* dsym, const LabelWeights& weights,
                               const std::function<void(const TrainLogRow&)>& on_update = {}) {
  cfg.validate();
  if (dsym && !opt.online_labels) {
    if (dsym->train.empty()) throw DegenerateDataError("D_symbol has an empty training split");
    if (dsym->objects() != agent.pc.objects || dsym->stack() != agent.pc.frame_stack) {
      throw ConfigError("D_symbol does not match the perception config (objects/frames)");
    }
  }
  const bool use_cnn = !opt.freeze_perception && cfg.lambda_cnn > 0 && (dsym || opt.online_labels);
  if (use_cnn && weights.labels() != agent.pc.exist_dim()) throw ConfigError("label weights do not match C*K");

  const std::size_t updates = cfg.updates();
  const std::size_t per_env = cfg.batch / cfg.envs;
  Collector collector(agent.env, cfg.envs, Rng(opt.seed).split(0xe1).next_u64());
  Adam<S> adam({.lr = cfg.lr});
  Rng order_rng = Rng(opt.seed).split(0x5bb);
  Rng symbol_rng = Rng(opt.seed).split(0x5b1);
  const ActorMode behaviour = opt.neural_guidance ? ActorMode::Neural : ActorMode::Eql;
  std::deque<double> recent;
  std::vector<TrainLogRow> log;

  for (std::size_t u = 1; u <= updates; ++u) {
    const Agent<S> last_good = agent;
    try {
    Rollout r = collector.collect(agent.perception, agent.pc, agent.actors, agent.ac, per_env, behaviour, cfg.gamma,
                                  cfg.gae_lambda);
    std::vector<double> adv = r.advantages;
    normalize(adv);
    const double lambda_reg = anneal(cfg.lambda_reg, u, updates);

    TrainLogRow row;
    row.update = u;
    row.step = u * cfg.batch;
    row.lambda_reg = lambda_reg;
    for (double x : r.finished_returns) {
      recent.push_back(x);
      if (recent.size() > opt.return_window) recent.pop_front();
    }
    if (!recent.empty()) row.ret = std::accumulate(recent.begin(), recent.end(), 0.0) / static_cast<double>(recent.size());
    row.mae = rollout_mae(r.pred_coords, r.symbols, agent.pc.objects);

    std::vector<std::size_t> order(r.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
      const bool full = it == cfg.iterations;
      shuffle(order, order_rng);
      double sum_ppo = 0, sum_ng = 0, sum_reg = 0, sum_cnn = 0, sum_ent = 0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += cfg.minibatch) {
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), at + cfg.minibatch)));
        std::vector<const FrameStack*> stacks;
        for (std::size_t k : idx) stacks.push_back(&r.frames[k]);
        const PpoTargets targets = minibatch_targets(r, idx, adv);

        std::optional<SymbolTargets<S>> sym;
        Tensor<S> sym_frames;
        if (full && use_cnn) {
          std::vector<FrameStack> fs;
          sym = symbol_minibatch<S>(dsym, r, agent.env, weights, cfg.symbol_batch, opt.online_labels, symbol_rng, fs);
          std::vector<const FrameStack*> ptrs;
          for (const auto& f : fs) ptrs.push_back(&f);
          sym_frames = frames_tensor<S>(ptrs);
        }

        Tape<S> tape;
        Binding<S> pbind(tape, !opt.freeze_perception), abind(tape);
        const auto l = joint_loss(agent, pbind, abind, frames_tensor<S>(stacks), targets, cfg, full,
                                  opt.neural_guidance, lambda_reg, sym ? &*sym : nullptr, sym ? &sym_frames : nullptr);
        const double total = static_cast<double>(l.total.value().item());
        if (!std::isfinite(total)) {
          throw NumericError("training diverged at update " + std::to_string(u) + ", iteration " + std::to_string(it) +
                             ": loss is " + std::to_string(total));
        }
        tape.backward(l.total);
        std::vector<GradEntry<S>> grads;
        collect_grads(agent.perception, pbind, "perception.", grads);
        collect_grads(agent.actors, abind, "actors.", grads);
        clip_grad_norm(grads, cfg.max_grad_norm);
        adam.step(grads);

        if (full) {
          ++batches;
          sum_ppo += static_cast<double>(l.ppo.total.value().item());
          sum_ent += static_cast<double>(l.ppo.entropy.value().item());
          if (l.ng) sum_ng += static_cast<double>(l.ng.value().item());
          if (l.reg) sum_reg += static_cast<double>(l.reg.value().item());
          if (l.cnn) sum_cnn += static_cast<double>(l.cnn.value().item());
        }
      }
      if (full) {
        const double b = static_cast<double>(batches);
        row.l_ppo = sum_ppo / b;
        row.entropy = sum_ent / b;
        row.l_ng = opt.neural_guidance ? sum_ng / b : std::numeric_limits<double>::quiet_NaN();
        row.l_reg = sum_reg / b;
        row.l_cnn = use_cnn ? sum_cnn / b : std::numeric_limits<double>::quiet_NaN();
      }
    }
    const auto relevant = policy_relevant_objects(agent, cfg.prune_threshold);
    if (!relevant.empty()) row.fmae = rollout_fmae(r.pred_coords, r.symbols, agent.pc.objects, agent.pc.frame_stack, relevant);
    log.push_back(row);
    if (on_update) on_update(row);
    } catch (const NumericError& e) {
      if (opt.failure_checkpoint.empty()) throw;
      save_agent(opt.failure_checkpoint, last_good, u - 1);
      throw NumericError(std::string(e.what()) + "; last good parameters saved to " + opt.failure_checkpoint);
    }
  }
  return log;
}

struct EvalStats {
  std::size_t episodes = 0;
  double mean = 0, std = 0;
  std::vector<double> returns;
  double mae = std::numeric_limits<double>::quiet_NaN();
  double fmae = std::numeric_limits<double>::quiet_NaN();
};

struct EvalOptions {
  ActorMode mode = ActorMode::Neural;
  bool greedy = true;
  std::uint64_t seed = 0;
  /// Relevant objects for F-MAE; empty skips it.
  std::vector<bool> relevant;
  FmaeNormalization fmae_norm = FmaeNormalization::Verbatim;
};

/// Runs `episodes` episodes side by side and reports the mean and
/// (population) standard deviation of their returns, plus MAE and F-MAE of
/// the perception module on every visited state.
template <typename S>
EvalStats evaluate(const Agent<S>& a, std::size_t episodes, const EvalOptions& opt) {
  if (episodes == 0) throw ContractError("evaluate: episodes must be positive");
  const bool eql = opt.mode == ActorMode::Eql;
  std::vector<std::unique_ptr<Environment>> envs;
  std::vector<Observation> obs;
  std::vector<Rng> rngs;
  for (std::size_t i = 0; i < episodes; ++i) {
    Rng r = Rng(opt.seed).split(0xe7a1).split(i);
    envs.push_back(make_env(a.env));
    obs.push_back(envs.back()->reset(r.next_u64()));
    rngs.push_back(r);
  }
  EvalStats st;
  st.episodes = episodes;
  st.returns.assign(episodes, 0.0);
  std::vector<bool> done(episodes, false);
  std::vector<double> pred;
  std::vector<std::vector<SymbolRecord>> symbols;
  const std::size_t L = a.pc.objects * a.pc.frame_stack;
  for (;;) {
    std::vector<std::size_t> live;
    std::vector<const FrameStack*> stacks;
    for (std::size_t i = 0; i < episodes; ++i)
      if (!done[i]) live.push_back(i), stacks.push_back(&obs[i].frames);
    if (live.empty()) break;
    Tape<S> tape;
    const auto v = agent_eval(a.perception, a.pc, a.actors, a.ac, tape, stacks, eql);
    const Tensor<S>& logp = (eql ? v.eql_logp : v.neural_logp).value();
    const Tensor<S> coords = clip01(v.perception.coord_raw.value());
    const std::size_t A = logp.dim(1);
    for (std::size_t row = 0; row < live.size(); ++row) {
      const std::size_t i = live[row];
      for (std::size_t k = 0; k < 2 * L; ++k) pred.push_back(static_cast<double>(coords.at(row, k)));
      symbols.push_back(obs[i].symbols);
      Tensor<S> probs(Shape{A});
      for (std::size_t k = 0; k < A; ++k) probs[k] = std::exp(logp.at(row, k));
      std::size_t action;
      if (opt.greedy) {
        action = argmax(probs);
      } else {
        S z = 0;
        for (S p : probs.data()) z += p;
        for (S& p : probs.data()) p /= z;
        action = categorical(probs, rngs[i]);
      }
      StepResult s = envs[i]->step(action);
      st.returns[i] += s.reward;
      if (s.done()) done[i] = true;
      obs[i] = std::move(s.observation);
    }
  }
  st.mean = std::accumulate(st.returns.begin(), st.returns.end(), 0.0) / static_cast<double>(episodes);
  double var = 0;
  for (double x : st.returns) var += (x - st.mean) * (x - st.mean);
  st.std = std::sqrt(var / static_cast<double>(episodes));
  st.mae = rollout_mae(pred, symbols, a.pc.objects);
  if (!opt.relevant.empty()) st.fmae = rollout_fmae(pred, symbols, a.pc.objects, a.pc.frame_stack, opt.relevant, opt.fmae_norm);
  return st;
}

}  // namespace insight
