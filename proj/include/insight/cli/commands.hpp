#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "insight/agent/grad_suite.hpp"
#include "insight/agent/train.hpp"
#include "insight/cli/run_config.hpp"
#include "insight/dataset/io.hpp"
#include "insight/explain/llm.hpp"
#include "insight/explain/prompts.hpp"
#include "insight/explain/task.hpp"
#include "insight/perception/pretrain.hpp"

namespace insight {

inline constexpr const char* kInsightVersion = "0.1.0";

/// Where every subcommand reads and writes, relative to the run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path pretrain() const { return root / "pretrain"; }
  std::filesystem::path perception_ckpt() const { return pretrain() / "perception.ckpt"; }
  std::filesystem::path train() const { return root / "train"; }
  std::filesystem::path agent_ckpt() const { return train() / "agent.ckpt"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path extract() const { return root / "extract"; }
  std::filesystem::path policy_json() const { return extract() / "policy.json"; }
  std::filesystem::path explain() const { return root / "explain"; }
  std::filesystem::path grad_check() const { return root / "grad-check"; }
};

/// Switches shared by the subcommands; each reads only its own.
struct CommandFlags {
  bool no_pretrain = false;
  bool freeze_perception = false;
  bool no_neural_guidance = false;
  bool coor_neural = false;
  bool online_labels = false;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> instances;
  std::vector<std::string> losses;
  std::optional<std::string> action;  // explain: analyse one action only
  FmaeNormalization fmae_norm = FmaeNormalization::Verbatim;
  /// Progress lines; stderr when empty.
  std::function<void(const std::string&)> log;
};

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path.string());
  return std::string(bytes.begin(), bytes.end());
}

inline std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

/// Wall-clock facts live in metadata.json so every other artifact stays
/// byte-identical across reruns.
inline void write_metadata(const std::filesystem::path& dir, const std::string& command, double seconds) {
  write_json(dir / "metadata.json", {{"command", command},
                                     {"created_utc", utc_stamp()},
                                     {"wall_seconds", seconds},
                                     {"version", kInsightVersion}});
}

inline std::function<void(const std::string&)> logger(const CommandFlags& f) {
  if (f.log) return f.log;
  return [](const std::string& line) { std::cerr << line << "\n"; };
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline nlohmann::json eval_json(const EvalStats& s) {
  return {{"episodes", s.episodes},
          {"mean_return", s.mean},
          {"std_return", s.std},
          {"returns", s.returns},
          {"mae", finite_or_null(s.mae)},
          {"fmae", finite_or_null(s.fmae)}};
}

template <typename S>
Agent<S> pruned(const Agent<S>& a, double threshold) {
  Agent<S> p = a;
  p.actors.eql = prune(a.actors.eql, threshold);
  return p;
}

inline std::string render_transcript(const std::vector<ChatMessage>& messages) {
  std::string s;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) s += "\n\n";
    s += "### " + messages[i].role + "\n\n" + messages[i].content;
  }
  return s + "\n";
}

}  // namespace detail

/// gen-dataset: roll out the behaviour policy and store D_symbol.
inline nlohmann::json cmd_gen_dataset(const RunConfig& cfg, const CommandFlags& flags = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto log = detail::logger(flags);
  log("gen-dataset: " + std::to_string(cfg.dataset.frames) + " frames of " + to_string(cfg.env.env_id) + " (" +
      to_string(cfg.dataset.policy) + " policy)");
  const auto d = generate(cfg.env_config(), cfg.dataset.policy, cfg.dataset.frames);
  save_dataset(d, paths.dataset().string());

  const std::size_t C = d.objects();
  std::vector<double> presence(C, 0.0);
  for (const auto& stack : d.symbols)
    for (std::size_t j = 0; j < C; ++j) presence[j] += stack.back().exist[j];
  nlohmann::json objects = nlohmann::json::array();
  for (std::size_t j = 0; j < C; ++j)
    objects.push_back({{"name", d.object_names[j]}, {"presence", presence[j] / static_cast<double>(d.size())}});
  const nlohmann::json summary = {{"command", "gen-dataset"},   {"frames", d.size()},
                                  {"train", d.train.size()},     {"test", d.test.size()},
                                  {"env", to_string(d.env.env_id)}, {"policy", d.policy},
                                  {"seed", d.seed},              {"objects", objects}};
  detail::write_json(paths.dataset() / "summary.json", summary);

  std::string r = "# Dataset\n\n";
  r += "Environment " + to_string(d.env.env_id) + ", " + d.policy + " behaviour policy, seed " + std::to_string(d.seed) +
       ".\n\n";
  r += std::to_string(d.size()) + " frame stacks (" + std::to_string(d.train.size()) + " train, " +
       std::to_string(d.test.size()) + " test).\n\n| object | presence in current frame |\n|---|---|\n";
  for (std::size_t j = 0; j < C; ++j)
    r += "| " + d.object_names[j] + " | " + detail::fixed(presence[j] / static_cast<double>(d.size()), 3) + " |\n";
  detail::write_text(paths.dataset() / "report.md", r);
  detail::write_metadata(paths.dataset(), "gen-dataset", clock.seconds());
  return summary;
}

/// pretrain: fit the perception module on D_symbol.
inline nlohmann::json cmd_pretrain(const RunConfig& cfg, const CommandFlags& flags = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto log = detail::logger(flags);
  const auto d = load_dataset(paths.dataset().string());
  const auto pc = cfg.perception_config();
  const auto w = label_weights(d);
  Rng init = Rng(cfg.seed).split(0x9c0);
  PerceptionParams<float> p(pc, init);
  const auto curve = pretrain(p, pc, d, w, cfg.pretrain_config(), [&](const EpochStats& s) {
    log("pretrain: epoch " + std::to_string(s.epoch) + " train " + detail::fixed(s.train_loss) + " test " +
        detail::fixed(s.test_loss) + " MAE " + detail::fixed(s.test_mae) + " acc " + detail::fixed(s.test_exist_acc));
  });
  detail::ensure_dir(paths.pretrain());
  save_perception(paths.perception_ckpt().string(), pc, p);
  detail::write_text(paths.pretrain() / "curve.csv", curve_csv(curve));

  const auto& last = curve.back();
  const nlohmann::json summary = {{"command", "pretrain"},
                                  {"epochs", curve.size()},
                                  {"final_train_loss", last.train_loss},
                                  {"final_test_loss", last.test_loss},
                                  {"test_mae", last.test_mae},
                                  {"test_exist_acc", last.test_exist_acc},
                                  {"checkpoint", "perception.ckpt"}};
  detail::write_json(paths.pretrain() / "summary.json", summary);
  std::string r = "# Perception pretraining\n\n";
  r += std::to_string(curve.size()) + " epochs on " + std::to_string(d.train.size()) + " training stacks.\n\n";
  r += "| metric | value |\n|---|---|\n";
  r += "| test L_cnn | " + detail::fixed(last.test_loss) + " |\n";
  r += "| test coordinate MAE | " + detail::fixed(last.test_mae) + " |\n";
  r += "| test existence accuracy | " + detail::fixed(last.test_exist_acc) + " |\n";
  detail::write_text(paths.pretrain() / "report.md", r);
  detail::write_metadata(paths.pretrain(), "pretrain", clock.seconds());
  return summary;
}

/// train: joint policy learning from the pretrained (or fresh) perception.
inline nlohmann::json cmd_train(const RunConfig& cfg, const CommandFlags& flags = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto log = detail::logger(flags);
  const EnvConfig env = cfg.env_config();
  const PerceptionConfig pc = cfg.perception_config();
  const ActorConfig ac = cfg.actor_config(flags.coor_neural);

  PerceptionParams<float> perception;
  if (flags.no_pretrain) {
    Rng init = Rng(cfg.seed).split(0x9c0);
    perception = PerceptionParams<float>(pc, init);
  } else {
    auto [stored, params] = load_perception<float>(paths.perception_ckpt().string());
    if (!(stored == pc)) throw ConfigError("the pretrained perception does not match the perception config");
    perception = std::move(params);
  }

  std::optional<FrameSymbolDataset> dsym;
  if (std::filesystem::exists(paths.dataset() / "manifest.json")) dsym = load_dataset(paths.dataset().string());
  LabelWeights weights;
  if (dsym) {
    weights = label_weights(*dsym);
  } else if (flags.online_labels) {
    // Without D_symbol the focal weights are fitted on a short random rollout.
    weights = label_weights(generate(env, BehaviorPolicy::Random, 1000));
  } else if (cfg.ppo.ppo.lambda_cnn > 0 && !flags.freeze_perception) {
    log("train: no dataset under " + paths.dataset().string() + "; L_cnn is dropped");
  }

  Agent<float> agent(env, pc, ac, std::move(perception), cfg.seed);
  TrainOptions opt;
  opt.freeze_perception = flags.freeze_perception;
  opt.neural_guidance = !flags.no_neural_guidance;
  opt.online_labels = flags.online_labels;
  opt.seed = cfg.seed;
  opt.failure_checkpoint = (paths.train() / "failure.ckpt").string();
  detail::ensure_dir(paths.train());
  const std::size_t updates = cfg.ppo.ppo.updates();
  const std::size_t every = std::max<std::size_t>(1, updates / 50);
  const auto rows = train(agent, cfg.ppo.ppo, opt, dsym ? &*dsym : nullptr, weights, [&](const TrainLogRow& r) {
    if (r.update % every != 0 && r.update != updates) return;
    log("train: update " + std::to_string(r.update) + "/" + std::to_string(updates) + " return " +
        detail::fixed(r.ret, 3) + " L_ppo " + detail::fixed(r.l_ppo) + " L_ng " + detail::fixed(r.l_ng) + " H " +
        detail::fixed(r.entropy) + " L_reg " + detail::fixed(r.l_reg) + " MAE " + detail::fixed(r.mae) + " F-MAE " + detail::fixed(r.fmae));
  });
  save_agent(paths.agent_ckpt().string(), agent, updates);
  detail::write_text(paths.train() / "train_log.csv", train_log_csv(rows));

  const auto& last = rows.back();
  // The run directory is left out so that relocated reruns compare equal.
  nlohmann::json effective = run_config_json(cfg);
  effective.erase("out_dir");
  const nlohmann::json summary = {
      {"command", "train"},
      {"updates", rows.size()},
      {"steps", last.step},
      {"final_return", detail::finite_or_null(last.ret)},
      {"final_L_ppo", last.l_ppo},
      {"final_L_ng", detail::finite_or_null(last.l_ng)},
      {"final_L_reg", last.l_reg},
      {"final_L_cnn", detail::finite_or_null(last.l_cnn)},
      {"final_mae", detail::finite_or_null(last.mae)},
      {"final_fmae", detail::finite_or_null(last.fmae)},
      {"options",
       {{"pretrained", !flags.no_pretrain},
        {"freeze_perception", flags.freeze_perception},
        {"neural_guidance", !flags.no_neural_guidance},
        {"coor_neural", flags.coor_neural},
        {"online_labels", flags.online_labels},
        {"d_symbol", dsym.has_value()}}},
      {"config", effective},
      {"checkpoint", "agent.ckpt"}};
  detail::write_json(paths.train() / "summary.json", summary);
  std::string r = "# Policy learning\n\n";
  r += std::to_string(rows.size()) + " updates, " + std::to_string(last.step) + " environment steps on " +
       to_string(env.env_id) + ".\n\n| metric (last update) | value |\n|---|---|\n";
  r += "| mean return of recent episodes | " + detail::fixed(last.ret, 3) + " |\n";
  r += "| L_ppo | " + detail::fixed(last.l_ppo) + " |\n";
  r += "| L_ng | " + detail::fixed(last.l_ng) + " |\n";
  r += "| L_reg | " + detail::fixed(last.l_reg) + " |\n";
  r += "| L_cnn | " + detail::fixed(last.l_cnn) + " |\n";
  r += "| rollout MAE | " + detail::fixed(last.mae) + " |\n";
  r += "| rollout F-MAE | " + detail::fixed(last.fmae) + " |\n";
  detail::write_text(paths.train() / "report.md", r);
  detail::write_metadata(paths.train(), "train", clock.seconds());
  return summary;
}

/// eval: greedy episodes with the neural actor and the pruned EQL actor.
inline nlohmann::json cmd_eval(const RunConfig& cfg, const CommandFlags& flags = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto agent = load_agent<float>(paths.agent_ckpt().string());
  const double threshold = cfg.ppo.ppo.prune_threshold;
  const std::size_t episodes = flags.episodes.value_or(cfg.ppo.eval_episodes);
  if (episodes == 0) throw ConfigError("eval needs at least one episode");
  EvalOptions opt;
  opt.seed = cfg.seed;
  opt.relevant = policy_relevant_objects(agent, threshold);
  opt.fmae_norm = flags.fmae_norm;
  opt.mode = ActorMode::Neural;
  const EvalStats neural = evaluate(agent, episodes, opt);
  opt.mode = ActorMode::Eql;
  const EvalStats eql = evaluate(detail::pruned(agent, threshold), episodes, opt);

  const double ratio = neural.mean != 0 ? eql.mean / neural.mean : std::numeric_limits<double>::quiet_NaN();
  nlohmann::json relevant = nlohmann::json::array();
  const auto names = make_env(agent.env)->object_names();
  for (std::size_t j = 0; j < opt.relevant.size(); ++j)
    if (opt.relevant[j]) relevant.push_back(names[j]);
  const nlohmann::json summary = {
      {"command", "eval"},
      {"episodes", episodes},
      {"neural", detail::eval_json(neural)},
      {"eql", detail::eval_json(eql)},
      {"eql_to_neural_ratio", detail::finite_or_null(ratio)},
      {"relevant_objects", relevant},
      {"fmae_normalization", flags.fmae_norm == FmaeNormalization::Verbatim ? "verbatim" : "per-frame"}};
  detail::write_json(paths.eval() / "summary.json", summary);

  std::ostringstream csv;
  csv.precision(17);
  csv << "episode,neural_return,eql_return\n";
  for (std::size_t i = 0; i < episodes; ++i) csv << i << ',' << neural.returns[i] << ',' << eql.returns[i] << '\n';
  detail::write_text(paths.eval() / "returns.csv", csv.str());

  std::string r = "# Evaluation\n\n" + std::to_string(episodes) + " greedy episodes per actor on " +
                  to_string(agent.env.env_id) + ".\n\n| actor | mean return | std | MAE | F-MAE |\n|---|---|---|---|---|\n";
  r += "| neural | " + detail::fixed(neural.mean, 3) + " | " + detail::fixed(neural.std, 3) + " | " +
       detail::fixed(neural.mae) + " | " + detail::fixed(neural.fmae) + " |\n";
  r += "| EQL (pruned) | " + detail::fixed(eql.mean, 3) + " | " + detail::fixed(eql.std, 3) + " | " +
       detail::fixed(eql.mae) + " | " + detail::fixed(eql.fmae) + " |\n\n";
  r += "EQL / neural return ratio: " + detail::fixed(ratio, 3) + ".\n";
  detail::write_text(paths.eval() / "report.md", r);
  detail::write_metadata(paths.eval(), "eval", clock.seconds());
  return summary;
}

/// extract: the pruned EQL actor as closed-form polynomials.
inline nlohmann::json cmd_extract(const RunConfig& cfg, const CommandFlags& = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto agent = load_agent<float>(paths.agent_ckpt().string());
  const auto policy = agent.symbolic_policy(cfg.ppo.ppo.prune_threshold);
  detail::ensure_dir(paths.extract());
  detail::write_json(paths.policy_json(), policy_json(policy));
  const std::string text = policy_text(policy);
  detail::write_text(paths.extract() / "policy.txt", text);

  nlohmann::json used = nlohmann::json::array();
  for (std::size_t v : policy.used_variables()) used.push_back(policy.variables[v]);
  nlohmann::json terms = nlohmann::json::object();
  const auto names = policy.names();
  for (std::size_t i = 0; i < policy.logits.size(); ++i) terms[names[i]] = policy.logits[i].terms().size();
  const nlohmann::json summary = {{"command", "extract"},
                                  {"prune_threshold", cfg.ppo.ppo.prune_threshold},
                                  {"used_variables", used},
                                  {"terms", terms}};
  detail::write_json(paths.extract() / "summary.json", summary);
  std::string r = "# Extracted policy\n\nPruning threshold " + format_value(cfg.ppo.ppo.prune_threshold) + "; " +
                  std::to_string(used.size()) + " of " + std::to_string(policy.variables.size()) +
                  " input variables survive.\n\n" + text;
  detail::write_text(paths.extract() / "report.md", r);
  detail::write_metadata(paths.extract(), "extract", clock.seconds());
  return summary;
}

/// The EQL input and the pruned EQL actor's greedy action after `step`
/// environment steps driven by that actor.
struct DecisionState {
  std::size_t step = 0;
  std::vector<double> coords;
  std::size_t action = 0;
};

template <typename S>
DecisionState decision_state(const Agent<S>& pruned_agent, std::size_t step, std::uint64_t seed) {
  auto env = make_env(pruned_agent.env);
  Observation obs = env->reset(Rng(seed).split(0xdec).next_u64());
  DecisionState st;
  for (std::size_t t = 0;; ++t) {
    Tape<S> tape;
    const auto v = agent_eval(pruned_agent.perception, pruned_agent.pc, pruned_agent.actors, pruned_agent.ac, tape,
                              {&obs.frames}, true);
    const Tensor<S>& x = v.eql_input.value();
    const Tensor<S>& lp = v.eql_logp.value();
    st.step = t;
    st.coords.assign(x.data().begin(), x.data().end());
    st.action = 0;
    for (std::size_t a = 1; a < lp.size(); ++a)
      if (lp[a] > lp[st.action]) st.action = a;
    if (t == step) return st;
    StepResult r = env->step(st.action);
    if (r.done()) return st;
    obs = std::move(r.observation);
  }
}

/// explain: policy-interpretation and decision-explanation prompts, sent
/// to the chat endpoint or written to files when offline.
inline nlohmann::json cmd_explain(const RunConfig& cfg, const CommandFlags& flags = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto log = detail::logger(flags);
  const auto agent = load_agent<float>(paths.agent_ckpt().string());
  if (!std::filesystem::exists(paths.policy_json())) {
    throw ArtifactError("no extracted policy at " + paths.policy_json().string() + "; run `insight extract` first");
  }
  const SymbolicPolicy policy =
      policy_from_json(detail::parse_json(detail::read_text(paths.policy_json()), paths.policy_json().string()));
  const TaskDescription task = task_description(agent.env);
  const PolicyDescription desc = PolicyDescription::from(policy);

  const auto turns = render_policy_prompt(task, desc, flags.action);
  const Agent<float> pa = detail::pruned(agent, cfg.ppo.ppo.prune_threshold);
  const DecisionState st = decision_state(pa, cfg.explain.decision_step, cfg.seed);
  const DecisionContext ctx = make_decision_context(pa.actors.eql, pa.ac.eql, policy, st.coords, st.action);
  const std::string decision = render_decision_prompt(task, desc, ctx);

  const auto dir = paths.explain();
  std::vector<ChatMessage> script;
  for (const auto& t : turns) script.push_back({"user", t});
  detail::write_text(dir / "policy_prompt.md", detail::render_transcript(script));
  detail::write_text(dir / "decision_prompt.md", detail::render_transcript({{"user", decision}}));
  detail::write_json(dir / "decision_context.json", decision_context_json(ctx));

  EndpointConfig ep;
  ep.base_url = cfg.explain.base_url;
  ep.model = cfg.explain.model;
  ep.temperature = cfg.explain.temperature;
  ep.timeout_s = cfg.explain.timeout_s;
  ep.max_retries = cfg.explain.max_retries;
  ep.backoff = std::chrono::milliseconds(cfg.explain.backoff_ms);
  ep.offline = cfg.explain.offline;
  ep.offline_dir = dir / "outbox";
  ep.log = log;

  nlohmann::json outputs;
  if (ep.offline) {
    outputs["policy"] = std::filesystem::path(llm_chat(script, ep)).filename().string();
    outputs["decision"] = std::filesystem::path(llm_chat({{"user", decision}}, ep)).filename().string();
  } else {
    // One dialogue: every reply stays in the history of the next turn.
    std::vector<ChatMessage> history;
    for (const auto& t : turns) {
      history.push_back({"user", t});
      log("explain: policy turn " + std::to_string(history.size() / 2 + 1) + "/" + std::to_string(turns.size()));
      history.push_back({"assistant", llm_chat(history, ep)});
    }
    detail::write_text(dir / "policy_dialogue.md", detail::render_transcript(history));
    std::vector<ChatMessage> d{{"user", decision}};
    d.push_back({"assistant", llm_chat(d, ep)});
    detail::write_text(dir / "decision_explanation.md", detail::render_transcript(d));
    outputs["policy"] = "policy_dialogue.md";
    outputs["decision"] = "decision_explanation.md";
  }

  const nlohmann::json summary = {{"command", "explain"},
                                  {"mode", ep.offline ? "offline" : "online"},
                                  {"model", ep.model},
                                  {"policy_turns", turns.size()},
                                  {"decision_step", st.step},
                                  {"decision_action", ctx.action},
                                  {"decision_context", decision_context_json(ctx)},
                                  {"outputs", outputs}};
  // Offline outbox names carry a timestamp, so they stay out of the summary.
  nlohmann::json stable = summary;
  if (ep.offline) stable["outputs"] = {{"policy", "outbox/"}, {"decision", "outbox/"}};
  detail::write_json(dir / "summary.json", stable);
  std::string r = "# Explanations\n\n";
  r += "Task " + task.name + ", " + std::to_string(turns.size()) + " policy-dialogue turns. ";
  r += "Decision at step " + std::to_string(st.step) + ": action " + ctx.action + ".\n\n";
  r += ep.offline ? "Offline mode: prompts were written to outbox/ and no request was sent.\n"
                  : "Replies are in policy_dialogue.md and decision_explanation.md.\n";
  detail::write_text(dir / "report.md", r);
  detail::write_metadata(dir, "explain", clock.seconds());
  return summary;
}

/// grad-check: the finite-difference audit of every loss. Fails with a
/// NumericError after writing its table when any loss misses tolerance.
inline nlohmann::json cmd_grad_check(const RunConfig& cfg, const CommandFlags& flags = {}) {
  const detail::Stopwatch clock;
  const RunPaths paths{cfg.out_dir};
  const auto log = detail::logger(flags);
  GradSuiteOptions opt;
  opt.seed = cfg.seed;
  opt.instances = flags.instances.value_or(opt.instances);
  opt.only = flags.losses;
  const auto rows = run_grad_suite(opt, [&](const GradSuiteRow& r) {
    log("grad-check: " + r.loss + " max rel error " + format_gradient(r.max_rel_error) + (r.passed ? " ok" : " FAILED"));
  });

  std::ostringstream csv;
  csv.precision(6);
  csv << "loss,instances,attempts,max_rel_error,passed\n";
  nlohmann::json table = nlohmann::json::array();
  std::vector<std::string> failed;
  std::string md = "| loss | instances | attempts | max relative error | result |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    csv << r.loss << ',' << r.instances << ',' << r.attempts << ',' << r.max_rel_error << ',' << r.passed << '\n';
    table.push_back({{"loss", r.loss},
                     {"instances", r.instances},
                     {"attempts", r.attempts},
                     {"max_rel_error", r.max_rel_error},
                     {"passed", r.passed}});
    md += "| " + r.loss + " | " + std::to_string(r.instances) + " | " + std::to_string(r.attempts) + " | " +
          format_gradient(r.max_rel_error) + " | " + (r.passed ? "pass" : "FAIL") + " |\n";
    if (!r.passed) failed.push_back(r.loss);
  }
  const auto dir = paths.grad_check();
  detail::write_text(dir / "table.csv", csv.str());
  const nlohmann::json summary = {{"command", "grad-check"},
                                  {"tolerance", opt.tolerance},
                                  {"instances", opt.instances},
                                  {"passed", failed.empty()},
                                  {"losses", table}};
  detail::write_json(dir / "summary.json", summary);
  detail::write_text(dir / "report.md", "# Gradient check\n\nFive-point central differences against reverse mode, "
                                        "relative error tolerance " + format_gradient(opt.tolerance) + ".\n\n" + md);
  detail::write_metadata(dir, "grad-check", clock.seconds());
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    throw NumericError("gradient check failed for " + names);
  }
  return summary;
}

/// Process exit status for each error category.
inline int exit_code(const Error& e) {
  const std::string c = e.category();
  if (c == "config") return 3;
  if (c == "missing-artifact") return 4;
  if (c == "io") return 5;
  if (c == "format") return 6;
  if (c == "numeric") return 7;
  if (c == "extraction") return 8;
  if (c == "transport") return 9;
  if (c == "degenerate-data") return 10;
  if (c == "undefined-metric") return 11;
  if (c == "dimension" || c == "contract") return 12;
  return 1;
}

}  // namespace insight
