#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "insight/agent/train.hpp"
#include "insight/core/grad_check.hpp"

namespace insight {

/// Finite-difference audit of every differentiable loss on random tiny
/// instances. Instances whose probe would straddle a kink (ReLU, L1, clip,
/// PPO clip, existence mask) are redrawn.
struct GradSuiteOptions {
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-5;
  /// Empty runs every loss.
  std::vector<std::string> only;
};

struct GradSuiteRow {
  std::string loss;
  std::size_t instances = 0, attempts = 0;
  double max_rel_error = 0;
  double seconds = 0;
  bool passed = false;
};

inline const std::vector<std::string>& grad_suite_losses() {
  static const std::vector<std::string> names{"L_exist", "L_coor", "L_size", "L_cnn", "L_reg",
                                              "eql_forward", "L_ng", "L_ppo", "L_total"};
  return names;
}

namespace detail {

using TD = Tensor<double>;

inline TD random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  TD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Deliberately narrow encoder: 16×16 frames, two stacked, three objects.
inline PerceptionConfig suite_perception() {
  PerceptionConfig c;
  c.frame_size = 16;
  c.frame_stack = 2;
  c.objects = 3;
  c.convs = {{1, 3, 4, 1}};
  c.hidden = 6;
  c.head_hidden = 4;
  return c;
}

inline SymbolTargets<double> random_symbol_targets(const PerceptionConfig& c, std::size_t n, Rng& rng) {
  SymbolTargets<double> t;
  t.n = n;
  const std::size_t L = c.exist_dim();
  for (std::size_t i = 0; i < n * L; ++i) t.exist.push_back(rng.bernoulli(0.5));
  t.exist_weights = random_tensor(Shape{n, L}, rng, 0.1, 1.1);
  t.coords = random_tensor(Shape{n, 2 * L}, rng, 0.0, 1.0);
  t.coord_mask = TD(Shape{n, 2 * L});
  for (std::size_t i = 0; i < n * L; ++i) t.coord_mask[2 * i] = t.coord_mask[2 * i + 1] = t.exist[i];
  t.sizes = random_tensor(Shape{n, c.size_dim()}, rng, 0.0, 1.0);
  t.size_mask = TD(Shape{n, c.size_dim()});
  for (auto& v : t.size_mask.data()) v = rng.bernoulli(0.7);
  return t;
}

inline EqlConfig random_eql_config(Rng& rng) {
  EqlConfig c;
  c.input_dim = 1 + rng.below(4);
  c.repetitions = 1 + rng.below(2);
  c.logits_per_action = 1 + rng.below(2);
  return c;
}

inline PpoTargets random_ppo_targets(std::size_t n, std::size_t actions, Rng& rng) {
  PpoTargets t;
  for (std::size_t i = 0; i < n; ++i) {
    t.actions.push_back(rng.below(actions));
    t.logp_old.push_back(std::log(rng.uniform(0.2, 0.5)));
    t.advantages.push_back(rng.uniform(-1, 1));
    t.returns.push_back(rng.uniform(-1, 1));
  }
  return t;
}

/// Every parameter of an agent under one visitor.
struct AgentParamView {
  Agent<double> a;
  template <typename F>
  void visit(F&& f) {
    a.perception.visit([&](const std::string& n, TD& t) { f("perception." + n, t); });
    a.actors.visit([&](const std::string& n, TD& t) { f("actors." + n, t); });
  }
  template <typename F>
  void visit(F&& f) const {
    a.perception.visit([&](const std::string& n, const TD& t) { f("perception." + n, t); });
    a.actors.visit([&](const std::string& n, const TD& t) { f("actors." + n, t); });
  }
};

/// EQL parameters and inputs together: the input gradient feeds grad_loglik.
struct EqlInputView {
  EqlParams<double> p;
  TD x;
  template <typename F>
  void visit(F&& f) {
    p.visit(f);
    f("x", x);
  }
  template <typename F>
  void visit(F&& f) const {
    p.visit(f);
    f("x", x);
  }
};

/// One random instance of `loss`: returns the check, drawing from `rng`.
inline GradCheck grad_instance(const std::string& loss, Rng& rng) {
  constexpr double kEps = 2e-5;
  constexpr Stencil kStencil = Stencil::FivePoint;
  if (loss == "L_exist" || loss == "L_coor" || loss == "L_size" || loss == "L_cnn") {
    const auto c = suite_perception();
    PerceptionParams<double> p(c, rng);
    const TD frames = random_tensor(Shape{2, c.frame_stack, c.frame_size, c.frame_size}, rng, 0.0, 1.0);
    const auto targets = random_symbol_targets(c, 2, rng);
    return check_gradient(
        p,
        [&](PerceptionParams<double>& q, Binding<double>& b) {
          const auto l = loss_cnn(perception_forward(q, c, b, b.tape().constant(frames)), targets);
          if (loss == "L_exist") return l.exist;
          if (loss == "L_coor") return l.coor;
          if (loss == "L_size") return l.size;
          return l.total;
        },
        kEps, kStencil);
  }
  if (loss == "L_reg") {
    const auto c = random_eql_config(rng);
    EqlParams<double> p(c, rng);
    p.visit([&](const std::string&, TD& t) {
      for (auto& v : t.data()) v = rng.uniform(-0.2, 0.2);
    });
    p.apply_structure(c);
    return check_gradient(p, [&](EqlParams<double>& q, Binding<double>& b) { return reg_loss(q, c, b); }, kEps,
                          kStencil);
  }
  if (loss == "eql_forward" || loss == "L_ng") {
    const auto c = random_eql_config(rng);
    const EqlParams<double> p(c, rng);
    const TD x = random_tensor(Shape{2, c.input_dim}, rng, 0.0, 1.0);
    TD teacher(Shape{2, c.actions});
    for (std::size_t i = 0; i < 2; ++i) {
      double z = 0;
      for (std::size_t a = 0; a < c.actions; ++a) z += teacher.at(i, a) = rng.uniform(0.05, 1.0);
      for (std::size_t a = 0; a < c.actions; ++a) teacher.at(i, a) /= z;
    }
    const std::vector<std::size_t> actions{rng.below(c.actions), rng.below(c.actions)};
    return check_gradient(
        EqlInputView{p, x},
        [&](EqlInputView& q, Binding<double>& b) {
          const auto lp = eql_log_probs(q.p, c, b, b(q.x));
          return loss == "L_ng" ? cross_entropy(teacher, lp) : ad::sum(ad::gather(lp, actions));
        },
        kEps, kStencil);
  }
  if (loss == "L_ppo") {
    const std::size_t B = 4, A = 3;
    TensorList<double> p{{random_tensor({B, A}, rng, -2, 2), random_tensor({B, 1}, rng, -1, 1)}};
    const PpoTargets t = random_ppo_targets(B, A, rng);
    const PpoConfig c;
    return check_gradient(
        p,
        [&](TensorList<double>& q, Binding<double>& b) {
          return ppo_loss(ad::log_softmax(b(q.items[0])), b(q.items[1]), t, c).total;
        },
        kEps, kStencil);
  }
  if (loss == "L_total") {
    const auto pc = suite_perception();
    EnvConfig env;
    env.frame_size = pc.frame_size;
    env.frame_stack = pc.frame_stack;
    env = resolve(env);
    ActorConfig ac = default_actor_config(pc, 3);
    ac.neural_hidden = 4;
    ac.critic_hidden = 4;
    ac.eql.repetitions = 1;
    Rng pinit = rng.split(1);
    AgentParamView view{Agent<double>(env, pc, ac, PerceptionParams<double>(pc, pinit), rng.next_u64())};
    // Larger EQL weights keep the regulariser off its flat region.
    view.a.actors.eql.visit([&](const std::string&, TD& t) {
      for (auto& v : t.data()) v = rng.uniform(-0.5, 0.5);
    });
    view.a.actors.eql.apply_structure(ac.eql);
    const TD frames = random_tensor({2, 2, 16, 16}, rng, 0, 1);
    const PpoTargets t = random_ppo_targets(2, 3, rng);
    auto sym = random_symbol_targets(pc, 1, rng);
    const TD sym_frames = random_tensor({1, 2, 16, 16}, rng, 0, 1);
    const bool full = rng.bernoulli(0.5);
    const PpoConfig c;
    // L_ng's teacher is detached, so the oracle holds it fixed as well.
    TD teacher;
    {
      Tape<double> tape;
      Binding<double> b(tape);
      teacher = exp_values(agent_forward(view.a.perception, pc, view.a.actors, ac, b, b, frames, false)
                               .neural_logp.value());
    }
    return check_gradient(
        view,
        [&](AgentParamView& q, Binding<double>& b) {
          return joint_loss(q.a, b, b, frames, t, c, full, true, 0.3, &sym, &sym_frames, &teacher).total;
        },
        kEps, kStencil);
  }
  throw ConfigError("unknown loss '" + loss + "' for the gradient suite");
}

}  // namespace detail

/// Kink margin an instance needs before its finite difference is trusted.
inline constexpr double kGradSuiteMargin = 1e-3;

inline std::vector<GradSuiteRow> run_grad_suite(const GradSuiteOptions& opt,
                                                const std::function<void(const GradSuiteRow&)>& on_row = {}) {
  if (opt.instances == 0) throw ConfigError("gradient suite needs at least one instance per loss");
  const auto& all = grad_suite_losses();
  for (const auto& name : opt.only)
    if (std::find(all.begin(), all.end(), name) == all.end()) throw ConfigError("unknown loss '" + name + "'");
  std::vector<GradSuiteRow> rows;
  for (std::size_t k = 0; k < all.size(); ++k) {
    const std::string& loss = all[k];
    if (!opt.only.empty() && std::find(opt.only.begin(), opt.only.end(), loss) == opt.only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    GradSuiteRow row;
    row.loss = loss;
    Rng rng = Rng(opt.seed).split(0x9c + k);
    const std::size_t cap = 50 * opt.instances;
    while (row.instances < opt.instances && row.attempts < cap) {
      Rng inst = rng.split(row.attempts++);
      const GradCheck r = detail::grad_instance(loss, inst);
      if (r.kink_margin < kGradSuiteMargin) continue;
      ++row.instances;
      row.max_rel_error = std::max(row.max_rel_error, r.rel_error);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.passed = row.instances == opt.instances && row.max_rel_error < opt.tolerance;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

}  // namespace insight
