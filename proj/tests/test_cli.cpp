#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "insight/cli/commands.hpp"

using namespace insight;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny(const fs::path& out) {
  auto c = run_config_from_json(nlohmann::json::parse(R"({
    "seed": 5,
    "env": {"frame_size": 16, "frame_stack": 2},
    "dataset": {"frames": 120},
    "perception": {"convs": [{"channels": 4, "kernel": 3, "stride": 2, "pad": 1}], "hidden": 12, "head_hidden": 8,
                   "epochs": 1, "batch": 16},
    "eql": {"repetitions": 1},
    "ppo": {"total_steps": 512, "batch": 256, "envs": 4, "minibatch": 128, "neural_hidden": 8, "critic_hidden": 8,
            "eval_episodes": 2},
    "explain": {"offline": true, "decision_step": 3}})"));
  c.out_dir = out.string();
  return c;
}

CommandFlags silent() {
  CommandFlags f;
  f.log = [](const std::string&) {};
  return f;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("insight_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const auto c = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.env.env_id, EnvId::MiniPong);
  EXPECT_EQ(c.dataset.frames, 5000u);
  EXPECT_EQ(c.perception.pretrain.epochs, 50u);
  EXPECT_EQ(c.ppo.ppo.total_steps, 200000u);
  EXPECT_EQ(c.ppo.ppo.batch, 1024u);
  EXPECT_FALSE(c.explain.offline);
}

TEST(RunConfig, UnknownKeysAreRejectedWithTheirPath) {
  try {
    run_config_from_json(nlohmann::json::parse(R"({"ppo": {"lr": 1e-3, "learning_rate": 1e-3}})"));
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ppo.learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"sed": 1})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"perception": {"convs": [{"chanels": 4}]}})")),
               ConfigError);
}

TEST(RunConfig, BadValuesAreConfigErrors) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"seed": "zero"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"env": {"env_id": "Pong"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"eql": {"functions": ["sine"]}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"dataset": {"frames": 0}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"env": 3})")), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/insight.json"), IoError);
}

TEST(RunConfig, EffectiveConfigRoundTrips) {
  const auto c = tiny("/tmp/x");
  const auto j = run_config_json(c);
  EXPECT_EQ(run_config_json(run_config_from_json(j)), j);
  EXPECT_EQ(c.perception_config().coord_dim(), 2u * 3u * 2u);
  EXPECT_EQ(c.actor_config(false).eql.input_dim, 12u);
  EXPECT_TRUE(c.actor_config(true).coor_neural);
}

TEST(Commands, MissingArtifactsNameTheirProducer) {
  const auto c = tiny(scratch("missing"));
  auto expect_hint = [](const std::function<void()>& f, const std::string& producer) {
    try {
      f();
      FAIL() << "no error";
    } catch (const ArtifactError& e) {
      EXPECT_NE(std::string(e.what()).find("insight " + producer), std::string::npos) << e.what();
      EXPECT_EQ(exit_code(e), 4);
    }
  };
  expect_hint([&] { cmd_pretrain(c, silent()); }, "gen-dataset");
  expect_hint([&] { cmd_train(c, silent()); }, "pretrain");
  expect_hint([&] { cmd_eval(c, silent()); }, "train");
  expect_hint([&] { cmd_extract(c, silent()); }, "train");
  expect_hint([&] { cmd_explain(c, silent()); }, "train");
}

TEST(Commands, ExitCodesByCategory) {
  EXPECT_EQ(exit_code(ConfigError("x")), 3);
  EXPECT_EQ(exit_code(IoError("x")), 5);
  EXPECT_EQ(exit_code(FormatError("x")), 6);
  EXPECT_EQ(exit_code(NumericError("x")), 7);
  EXPECT_EQ(exit_code(ExtractionError("x")), 8);
  EXPECT_EQ(exit_code(TransportError("x", 503)), 9);
  EXPECT_EQ(exit_code(DegenerateDataError("x")), 10);
  EXPECT_EQ(exit_code(UndefinedMetricError("x")), 11);
  EXPECT_EQ(exit_code(ContractError("x")), 12);
}

TEST(Commands, TinyPipelineWritesEveryArtifactAndRepeatsExactly) {
  const auto dir = scratch("pipeline");
  const auto c = tiny(dir);
  const RunPaths paths{dir};
  cmd_gen_dataset(c, silent());
  cmd_pretrain(c, silent());
  cmd_train(c, silent());
  const auto ev = cmd_eval(c, silent());
  cmd_extract(c, silent());
  const auto ex = cmd_explain(c, silent());

  for (const auto& stage : {paths.dataset(), paths.pretrain(), paths.train(), paths.eval(), paths.extract(), paths.explain()}) {
    EXPECT_TRUE(fs::exists(stage / "summary.json")) << stage;
    EXPECT_TRUE(fs::exists(stage / "report.md")) << stage;
    EXPECT_TRUE(fs::exists(stage / "metadata.json")) << stage;
  }
  EXPECT_TRUE(fs::exists(paths.perception_ckpt()));
  EXPECT_TRUE(fs::exists(paths.agent_ckpt()));
  EXPECT_TRUE(fs::exists(paths.policy_json()));
  EXPECT_EQ(ev.at("neural").at("episodes"), 2);
  EXPECT_EQ(ex.at("mode"), "offline");
  std::size_t outbox = 0;
  for (const auto& e : fs::directory_iterator(paths.explain() / "outbox")) outbox += e.is_regular_file();
  EXPECT_EQ(outbox, 2u);

  const auto log = read_file(paths.train() / "train_log.csv");
  const auto policy = read_file(paths.policy_json());
  cmd_train(c, silent());
  cmd_extract(c, silent());
  EXPECT_EQ(read_file(paths.train() / "train_log.csv"), log);
  EXPECT_EQ(read_file(paths.policy_json()), policy);
  fs::remove_all(dir);
}

TEST(Commands, TrainRejectsMismatchedPerception) {
  const auto dir = scratch("mismatch");
  auto c = tiny(dir);
  cmd_gen_dataset(c, silent());
  cmd_pretrain(c, silent());
  c.perception.hidden = 10;
  EXPECT_THROW(cmd_train(c, silent()), ConfigError);
  fs::remove_all(dir);
}

TEST(Commands, GradCheckSubset) {
  auto c = tiny(scratch("grad"));
  CommandFlags f = silent();
  f.instances = 4;
  f.losses = {"L_ppo", "L_reg"};
  const auto s = cmd_grad_check(c, f);
  EXPECT_TRUE(s.at("passed").get<bool>());
  EXPECT_EQ(s.at("losses").size(), 2u);
  f.losses = {"L_nope"};
  EXPECT_THROW(cmd_grad_check(c, f), ConfigError);
  fs::remove_all(c.out_dir);
}
