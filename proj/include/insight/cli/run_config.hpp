#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "insight/agent/train.hpp"
#include "insight/dataset/io.hpp"
#include "insight/explain/llm.hpp"
#include "insight/perception/pretrain.hpp"

namespace insight {

struct DatasetSection {
  std::size_t frames = 5000;
  BehaviorPolicy policy = BehaviorPolicy::Scripted;
};

struct PerceptionSection {
  std::vector<ConvSpec> convs = PerceptionConfig{}.convs;
  std::size_t hidden = PerceptionConfig{}.hidden;
  std::size_t head_hidden = PerceptionConfig{}.head_hidden;
  PretrainConfig pretrain;
};

struct EqlSection {
  std::size_t hidden_layers = EqlConfig{}.hidden_layers;
  std::size_t repetitions = EqlConfig{}.repetitions;
  std::vector<EqlFn> functions = EqlConfig{}.functions;
  double temperature = EqlConfig{}.temperature;
  std::size_t logits_per_action = EqlConfig{}.logits_per_action;
};

struct PpoSection {
  PpoConfig ppo;
  std::size_t neural_hidden = ActorConfig{}.neural_hidden;
  std::size_t critic_hidden = ActorConfig{}.critic_hidden;
  std::size_t eval_episodes = 20;
};

struct ExplainSection {
  std::string base_url = EndpointConfig{}.base_url;
  std::string model = EndpointConfig{}.model;
  double temperature = 0.0;
  double timeout_s = 120.0;
  std::size_t max_retries = 3;
  std::size_t backoff_ms = 1000;
  bool offline = false;
  /// Environment step at which the explained decision is taken.
  std::size_t decision_step = 40;
};

/// Everything a subcommand needs. Loaded from one JSON document whose
/// sections and keys are all optional; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  EnvConfig env;
  DatasetSection dataset;
  PerceptionSection perception;
  EqlSection eql;
  PpoSection ppo;
  ExplainSection explain;

  /// The environment section with the run seed applied.
  EnvConfig env_config() const {
    EnvConfig e = env;
    e.seed = seed;
    return resolve(e);
  }

  PerceptionConfig perception_config() const {
    const EnvConfig e = env_config();
    PerceptionConfig c;
    c.frame_size = e.frame_size;
    c.frame_stack = e.frame_stack;
    c.objects = e.max_objects;
    c.convs = perception.convs;
    c.hidden = perception.hidden;
    c.head_hidden = perception.head_hidden;
    c.validate();
    return c;
  }

  ActorConfig actor_config(bool coor_neural) const {
    const auto pc = perception_config();
    ActorConfig a = default_actor_config(pc, make_env(env)->action_count());
    a.neural_hidden = ppo.neural_hidden;
    a.critic_hidden = ppo.critic_hidden;
    a.coor_neural = coor_neural;
    a.eql.hidden_layers = eql.hidden_layers;
    a.eql.repetitions = eql.repetitions;
    a.eql.functions = eql.functions;
    a.eql.temperature = eql.temperature;
    a.eql.logits_per_action = eql.logits_per_action;
    a.eql.validate();
    return a;
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig p = perception.pretrain;
    p.seed = seed;
    return p;
  }
};

namespace detail {

/// Reads keys of one JSON object and remembers which were consumed.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
  }

  const std::string& path() const { return path_; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::SectionReader top(j, "");
  top.get("seed", c.seed);
  top.get("out_dir", c.out_dir);

  if (const auto* s = top.section("env")) {
    detail::SectionReader r(*s, "env");
    std::string id = to_string(c.env.env_id);
    r.get("env_id", id);
    c.env.env_id = parse_env_id(id);
    r.get("frame_size", c.env.frame_size);
    r.get("frame_stack", c.env.frame_stack);
    r.get("max_objects", c.env.max_objects);
    r.get("max_steps", c.env.max_steps);
    r.get("points_to_win", c.env.points_to_win);
    r.finish();
  }
  if (const auto* s = top.section("dataset")) {
    detail::SectionReader r(*s, "dataset");
    std::string policy = to_string(c.dataset.policy);
    r.get("frames", c.dataset.frames);
    r.get("policy", policy);
    c.dataset.policy = parse_behavior_policy(policy);
    r.finish();
  }
  if (const auto* s = top.section("perception")) {
    detail::SectionReader r(*s, "perception");
    if (const auto* convs = r.section("convs")) {
      if (!convs->is_array()) throw ConfigError("config: 'perception.convs' must be an array");
      c.perception.convs.clear();
      for (const auto& l : *convs) {
        detail::SectionReader lr(l, "perception.convs[]");
        ConvSpec spec{};
        lr.get("channels", spec.channels);
        lr.get("kernel", spec.kernel);
        lr.get("stride", spec.stride);
        lr.get("pad", spec.pad);
        lr.finish();
        c.perception.convs.push_back(spec);
      }
    }
    r.get("hidden", c.perception.hidden);
    r.get("head_hidden", c.perception.head_hidden);
    r.get("epochs", c.perception.pretrain.epochs);
    r.get("batch", c.perception.pretrain.batch);
    r.get("lr", c.perception.pretrain.lr);
    r.get("weight_decay", c.perception.pretrain.weight_decay);
    r.finish();
  }
  if (const auto* s = top.section("eql")) {
    detail::SectionReader r(*s, "eql");
    r.get("hidden_layers", c.eql.hidden_layers);
    r.get("repetitions", c.eql.repetitions);
    std::vector<std::string> fns;
    for (auto f : c.eql.functions) fns.push_back(to_string(f));
    r.get("functions", fns);
    c.eql.functions.clear();
    for (const auto& f : fns) c.eql.functions.push_back(parse_eql_fn(f));
    r.get("temperature", c.eql.temperature);
    r.get("logits_per_action", c.eql.logits_per_action);
    r.finish();
  }
  if (const auto* s = top.section("ppo")) {
    detail::SectionReader r(*s, "ppo");
    PpoConfig& p = c.ppo.ppo;
    r.get("total_steps", p.total_steps);
    r.get("lr", p.lr);
    r.get("batch", p.batch);
    r.get("envs", p.envs);
    r.get("minibatch", p.minibatch);
    r.get("iterations", p.iterations);
    r.get("lambda_reg", p.lambda_reg);
    r.get("lambda_cnn", p.lambda_cnn);
    r.get("symbol_batch", p.symbol_batch);
    r.get("clip", p.clip);
    r.get("gamma", p.gamma);
    r.get("gae_lambda", p.gae_lambda);
    r.get("value_coef", p.value_coef);
    r.get("entropy_coef", p.entropy_coef);
    r.get("max_grad_norm", p.max_grad_norm);
    r.get("prune_threshold", p.prune_threshold);
    r.get("neural_hidden", c.ppo.neural_hidden);
    r.get("critic_hidden", c.ppo.critic_hidden);
    r.get("eval_episodes", c.ppo.eval_episodes);
    r.finish();
  }
  if (const auto* s = top.section("explain")) {
    detail::SectionReader r(*s, "explain");
    r.get("base_url", c.explain.base_url);
    r.get("model", c.explain.model);
    r.get("temperature", c.explain.temperature);
    r.get("timeout_s", c.explain.timeout_s);
    r.get("max_retries", c.explain.max_retries);
    r.get("backoff_ms", c.explain.backoff_ms);
    r.get("offline", c.explain.offline);
    r.get("decision_step", c.explain.decision_step);
    r.finish();
  }
  top.finish();

  c.ppo.ppo.validate();
  if (c.dataset.frames == 0) throw ConfigError("config: dataset.frames must be positive");
  if (c.ppo.eval_episodes == 0) throw ConfigError("config: ppo.eval_episodes must be positive");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path);
  const auto bytes = detail::read_file(path);
  return run_config_from_json(detail::parse_json(std::string(bytes.begin(), bytes.end()), path));
}

/// The effective configuration, every key spelled out.
inline nlohmann::json run_config_json(const RunConfig& c) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& l : c.perception.convs)
    convs.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"pad", l.pad}});
  std::vector<std::string> fns;
  for (auto f : c.eql.functions) fns.push_back(to_string(f));
  const PpoConfig& p = c.ppo.ppo;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"env",
       {{"env_id", to_string(c.env.env_id)},
        {"frame_size", c.env.frame_size},
        {"frame_stack", c.env.frame_stack},
        {"max_objects", c.env.max_objects},
        {"max_steps", c.env.max_steps},
        {"points_to_win", c.env.points_to_win}}},
      {"dataset", {{"frames", c.dataset.frames}, {"policy", to_string(c.dataset.policy)}}},
      {"perception",
       {{"convs", convs},
        {"hidden", c.perception.hidden},
        {"head_hidden", c.perception.head_hidden},
        {"epochs", c.perception.pretrain.epochs},
        {"batch", c.perception.pretrain.batch},
        {"lr", c.perception.pretrain.lr},
        {"weight_decay", c.perception.pretrain.weight_decay}}},
      {"eql",
       {{"hidden_layers", c.eql.hidden_layers},
        {"repetitions", c.eql.repetitions},
        {"functions", fns},
        {"temperature", c.eql.temperature},
        {"logits_per_action", c.eql.logits_per_action}}},
      {"ppo",
       {{"total_steps", p.total_steps},
        {"lr", p.lr},
        {"batch", p.batch},
        {"envs", p.envs},
        {"minibatch", p.minibatch},
        {"iterations", p.iterations},
        {"lambda_reg", p.lambda_reg},
        {"lambda_cnn", p.lambda_cnn},
        {"symbol_batch", p.symbol_batch},
        {"clip", p.clip},
        {"gamma", p.gamma},
        {"gae_lambda", p.gae_lambda},
        {"value_coef", p.value_coef},
        {"entropy_coef", p.entropy_coef},
        {"max_grad_norm", p.max_grad_norm},
        {"prune_threshold", p.prune_threshold},
        {"neural_hidden", c.ppo.neural_hidden},
        {"critic_hidden", c.ppo.critic_hidden},
        {"eval_episodes", c.ppo.eval_episodes}}},
      {"explain",
       {{"base_url", c.explain.base_url},
        {"model", c.explain.model},
        {"temperature", c.explain.temperature},
        {"timeout_s", c.explain.timeout_s},
        {"max_retries", c.explain.max_retries},
        {"backoff_ms", c.explain.backoff_ms},
        {"offline", c.explain.offline},
        {"decision_step", c.explain.decision_step}}},
  };
}

}  // namespace insight
