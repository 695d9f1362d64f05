// insight: command-line front end for the interpretable-RL pipeline.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "insight/cli/commands.hpp"

using namespace insight;

int main(int argc, char** argv) {
  CLI::App app{"Interpretable reinforcement learning with equation-learner policies"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out-dir", out_dir, "Run directory (overrides out_dir in the config)");
  app.add_option("--seed", seed, "Master seed (overrides seed in the config)");

  CommandFlags flags;
  std::optional<std::size_t> frames, decision_step;
  std::string base_url, model, fmae_norm = "verbatim";
  bool offline = false;

  auto* gen = app.add_subcommand("gen-dataset", "Collect the frame/symbol dataset");
  gen->add_option("--frames", frames, "Number of frame stacks");

  auto* pre = app.add_subcommand("pretrain", "Pretrain the perception module on the dataset");

  auto* tr = app.add_subcommand("train", "Joint policy learning");
  tr->add_flag("--no-pretrain", flags.no_pretrain, "Start from a randomly initialised perception module");
  tr->add_flag("--freeze-perception", flags.freeze_perception, "Keep perception weights fixed");
  tr->add_flag("--no-neural-guidance", flags.no_neural_guidance, "Train the EQL actor on L_ppo directly");
  tr->add_flag("--coor-neural", flags.coor_neural, "Neural actor reads coordinates instead of perception features");
  tr->add_flag("--online-labels", flags.online_labels, "Draw L_cnn labels from the current rollout");

  auto* ev = app.add_subcommand("eval", "Evaluate the neural and the pruned EQL actor");
  ev->add_option("--episodes", flags.episodes, "Episodes per actor");
  ev->add_option("--fmae-normalization", fmae_norm, "F-MAE scale: verbatim or per-frame")
      ->check(CLI::IsMember({"verbatim", "per-frame"}));

  auto* ex = app.add_subcommand("extract", "Extract the symbolic policy");

  auto* expl = app.add_subcommand("explain", "Build explanation prompts and query the LLM");
  expl->add_option("--llm-base-url", base_url, "Chat endpoint base URL");
  expl->add_option("--llm-model", model, "Chat model name");
  expl->add_flag("--offline", offline, "Write prompts to files instead of calling the endpoint");
  expl->add_option("--action", flags.action, "Analyse this action only");
  expl->add_option("--decision-step", decision_step, "Environment step of the explained decision");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every loss gradient");
  gc->add_option("--instances", flags.instances, "Instances per loss");
  gc->add_option("--loss", flags.losses, "Restrict to these losses");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    if (frames) cfg.dataset.frames = *frames;
    if (!base_url.empty()) cfg.explain.base_url = base_url;
    if (!model.empty()) cfg.explain.model = model;
    if (offline) cfg.explain.offline = true;
    if (decision_step) cfg.explain.decision_step = *decision_step;
    flags.fmae_norm = fmae_norm == "per-frame" ? FmaeNormalization::PerFrame : FmaeNormalization::Verbatim;

    const std::map<CLI::App*, nlohmann::json (*)(const RunConfig&, const CommandFlags&)> commands{
        {gen, cmd_gen_dataset}, {pre, cmd_pretrain}, {tr, cmd_train},         {ev, cmd_eval},
        {ex, cmd_extract},      {expl, cmd_explain}, {gc, cmd_grad_check}};
    for (const auto& [sub, run] : commands) {
      if (!sub->parsed()) continue;
      const auto summary = run(cfg, flags);
      std::cout << summary.dump(2) << "\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "insight: " << e.category() << " error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "insight: " << e.what() << "\n";
    return 1;
  }
}
