#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "insight/agent/train.hpp"
#include "insight/core/grad_check.hpp"

using namespace insight;
using T = Tensor<double>;
using V = Var<double>;

namespace {

PerceptionConfig tiny_pc() {
  PerceptionConfig c;
  c.frame_size = 16;
  c.frame_stack = 2;
  c.objects = 3;
  c.convs = {{2, 3, 2, 1}};
  c.hidden = 8;
  c.head_hidden = 4;
  return c;
}

EnvConfig tiny_env() {
  EnvConfig e;
  e.frame_size = 16;
  e.frame_stack = 2;
  return resolve(e);
}

ActorConfig tiny_ac(const PerceptionConfig& pc) {
  ActorConfig a = default_actor_config(pc, 3);
  a.neural_hidden = 4;
  a.critic_hidden = 4;
  a.eql.repetitions = 1;
  return a;
}

template <typename S = double>
Agent<S> tiny_agent(std::uint64_t seed) {
  const auto pc = tiny_pc();
  Rng rng = Rng(seed).split(7);
  return Agent<S>(tiny_env(), pc, tiny_ac(pc), PerceptionParams<S>(pc, rng), seed);
}

PpoConfig tiny_ppo() {
  PpoConfig c;
  c.total_steps = 64;
  c.batch = 32;
  c.envs = 2;
  c.minibatch = 16;
  c.iterations = 2;
  c.symbol_batch = 4;
  return c;
}

/// Every parameter of an agent, for finite-difference checks.
struct AgentView {
  Agent<double> a;
  template <typename F>
  void visit(F&& f) {
    a.perception.visit([&](const std::string& n, T& t) { f("p." + n, t); });
    a.actors.visit([&](const std::string& n, T& t) { f("a." + n, t); });
  }
  template <typename F>
  void visit(F&& f) const {
    a.perception.visit([&](const std::string& n, const T& t) { f("p." + n, t); });
    a.actors.visit([&](const std::string& n, const T& t) { f("a." + n, t); });
  }
};

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double value(const V& v) { return v.value().item(); }

}  // namespace

TEST(Gae, SpecExamples) {
  const auto zero = gae({0, 0, 0}, {0, 0, 0}, 0.99, 0.95);
  for (double a : zero.advantages) EXPECT_EQ(a, 0.0);
  const auto one = gae({1.0}, {0.0}, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(one.advantages[0], 1.0);
  EXPECT_DOUBLE_EQ(one.returns[0], 1.0);
  const std::vector<double> r{0.5, -1.0, 2.0}, v{0.1, 0.3, -0.2};
  const auto g0 = gae(r, v, 0.0, 0.95);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_DOUBLE_EQ(g0.advantages[t], r[t] - v[t]);
}

TEST(Gae, MatchesDiscountedSumAtLambdaOne) {
  const std::vector<double> r{1.0, 0.0, -0.5, 2.0}, v{0.3, -0.1, 0.7, 0.2};
  const double g = 0.9;
  const auto out = gae(r, v, g, 1.0);
  for (std::size_t t = 0; t < r.size(); ++t) {
    double ret = 0, disc = 1;
    for (std::size_t k = t; k < r.size(); ++k, disc *= g) ret += disc * r[k];
    EXPECT_NEAR(out.returns[t], ret, 1e-12);
  }
}

TEST(Gae, SegmentsDoNotLeak) {
  // Two episodes back to back: the second must not feed the first.
  const auto joint = gae({1, 1, 5, 5}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 1, 0, 1}, 0.9, 0.9);
  const auto first = gae({1, 1}, {0, 0}, 0.9, 0.9);
  EXPECT_DOUBLE_EQ(joint.advantages[0], first.advantages[0]);
  EXPECT_DOUBLE_EQ(joint.advantages[1], first.advantages[1]);
}

TEST(PpoClip, RatioOneZeroAdvantage) {
  Tape<double> tape;
  const V lp = tape.parameter(T::vector({-0.5, -1.2, -2.0}));
  const V l = ad::ppo_clip_objective(lp, {-0.5, -1.2, -2.0}, {0, 0, 0}, 0.1);
  EXPECT_EQ(value(l), 0.0);
}

TEST(PpoClip, ClippedBranchPassesNoGradient) {
  Tape<double> tape;
  // r = e^0.5 > 1.1 with A > 0: min picks the clipped branch.
  const V lp = tape.parameter(T::vector({0.5, 0.0}));
  const V l = ad::ppo_clip_objective(lp, {0.0, 0.0}, {1.0, 1.0}, 0.1);
  tape.backward(l);
  const T g = tape.grad(lp);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], -0.5);  // -(1/B)·A·r with r = 1
  EXPECT_NEAR(value(l), -(1.1 + 1.0) / 2, 1e-15);
}

TEST(PpoClip, NegativeAdvantageKeepsUnclippedGradient) {
  Tape<double> tape;
  const V lp = tape.parameter(T::vector({0.5}));
  const V l = ad::ppo_clip_objective(lp, {0.0}, {-1.0}, 0.1);
  tape.backward(l);
  EXPECT_NEAR(tape.grad(lp)[0], std::exp(0.5), 1e-12);
}

TEST(PpoLoss, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  int accepted = 0;
  double worst = 0;
  for (int attempt = 0; accepted < 100 && attempt < 2000; ++attempt) {
    const std::size_t B = 4, A = 3;
    TensorList<double> p{{random_tensor({B, A}, rng, -2, 2), random_tensor({B, 1}, rng)}};
    PpoTargets t;
    for (std::size_t i = 0; i < B; ++i) {
      t.actions.push_back(rng.below(A));
      t.logp_old.push_back(std::log(rng.uniform(0.1, 0.9)));
      t.advantages.push_back(rng.uniform(-1, 1));
      t.returns.push_back(rng.uniform(-1, 1));
    }
    PpoConfig c;
    const auto r = check_gradient(p, [&](TensorList<double>& q, Binding<double>& b) {
      return ppo_loss(ad::log_softmax(b(q.items[0])), b(q.items[1]), t, c).total;
    });
    if (r.kink_margin < 1e-3) continue;
    ++accepted;
    worst = std::max(worst, r.rel_error);
  }
  EXPECT_EQ(accepted, 100);
  EXPECT_LT(worst, 1e-5);
}

TEST(NgLoss, SpecExamples) {
  Tape<double> tape;
  const V uni = tape.constant(T::matrix({{std::log(0.5), std::log(0.5)}}));
  EXPECT_NEAR(value(cross_entropy(T::matrix({{0.5, 0.5}}), uni)), std::log(2.0), 1e-15);
  const V q = tape.constant(T::matrix({{std::log(0.9), std::log(0.1)}}));
  EXPECT_NEAR(value(cross_entropy(T::matrix({{1.0, 0.0}}), q)), 0.1054, 5e-5);
  EXPECT_NEAR(value(cross_entropy(T::matrix({{1.0, 0.0}}), q)), -std::log(0.9), 1e-15);
}

TEST(NgLoss, GibbsInequality) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const T pl = random_tensor({1, 3}, rng, -3, 3), ql = random_tensor({1, 3}, rng, -3, 3);
    Tape<double> tape;
    const V lp = ad::log_softmax(tape.constant(pl)), lq = ad::log_softmax(tape.constant(ql));
    const T p = exp_values(lp.value());
    const double h = value(mean_entropy(lp));
    const double ce = value(cross_entropy(p, lq));
    EXPECT_GE(ce, 0.0);
    EXPECT_GE(ce, h - 1e-12);
    EXPECT_NEAR(value(cross_entropy(p, lp)), h, 1e-12);
  }
}

TEST(Anneal, Formula) {
  EXPECT_EQ(anneal(1e-3, 1, 195), 0.0);
  EXPECT_EQ(anneal(1e-3, 196, 195), 1e-3);
  EXPECT_NEAR(anneal(1e-3, 195, 195), 1e-3 * 194.0 / 195.0, 1e-15);
  for (std::size_t u = 1; u < 195; ++u) EXPECT_LE(anneal(1e-3, u, 195), anneal(1e-3, u + 1, 195));
  EXPECT_THROW(anneal(1e-3, 0, 10), ContractError);
}

TEST(JointLoss, ZeroCoefficientsLeavePpoPlusNg) {
  auto a = tiny_agent(1);
  Rng rng(5);
  const T frames = random_tensor({3, 2, 16, 16}, rng, 0, 1);
  PpoTargets t{{0, 2, 1}, {-1.0, -1.1, -0.9}, {0.5, -0.3, 1.0}, {0.2, 0.1, -0.4}};
  PpoConfig c;
  c.lambda_cnn = 0;
  Tape<double> tape;
  Binding<double> b(tape);
  const auto l = joint_loss(a, b, b, frames, t, c, true, true, 0.0, nullptr, nullptr);
  EXPECT_NEAR(value(l.total), value(l.ppo.total) + value(l.ng), 1e-12);
  EXPECT_TRUE(std::isfinite(value(l.reg)));
}

TEST(JointLoss, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  // Narrower encoder than tiny_pc so each instance stays cheap.
  PerceptionConfig pc = tiny_pc();
  pc.convs = {{1, 3, 4, 1}};
  pc.hidden = 6;
  LabelWeights w;
  w.n.assign(pc.exist_dim(), 1.0);
  w.mu = 1.0 / pc.exist_dim();
  int accepted = 0;
  double worst = 0;
  for (int attempt = 0; accepted < 100 && attempt < 2000; ++attempt) {
    Rng init = rng.split(static_cast<std::uint64_t>(attempt));
    Rng pinit = init.split(1);
    AgentView view{Agent<double>(tiny_env(), pc, tiny_ac(pc), PerceptionParams<double>(pc, pinit), init.next_u64())};
    // Larger EQL weights so the regulariser is away from its flat region.
    view.a.actors.eql.visit([&](const std::string&, T& t) {
      for (auto& v : t.data()) v = init.uniform(-0.5, 0.5);
    });
    view.a.actors.eql.apply_structure(view.a.ac.eql);
    const T frames = random_tensor({2, 2, 16, 16}, init, 0, 1);
    PpoTargets t;
    for (int i = 0; i < 2; ++i) {
      t.actions.push_back(init.below(3));
      t.logp_old.push_back(std::log(init.uniform(0.2, 0.5)));
      t.advantages.push_back(init.uniform(-1, 1));
      t.returns.push_back(init.uniform(-1, 1));
    }
    SymbolTargets<double> sym;
    sym.n = 1;
    for (std::size_t i = 0; i < pc.exist_dim(); ++i) sym.exist.push_back(init.bernoulli(0.5));
    sym.exist_weights = random_tensor({1, pc.exist_dim()}, init, 0.1, 1.1);
    sym.coords = random_tensor({1, pc.coord_dim()}, init, 0, 1);
    sym.coord_mask = T({1, pc.coord_dim()}, 1.0);
    sym.sizes = random_tensor({1, pc.size_dim()}, init, 0, 1);
    sym.size_mask = T({1, pc.size_dim()}, 1.0);
    const T sym_frames = random_tensor({1, 2, 16, 16}, init, 0, 1);
    PpoConfig c;
    const bool full = attempt % 2 == 0;
    // The teacher is detached, so the oracle holds it fixed too.
    T teacher;
    {
      Tape<double> tape;
      Binding<double> b(tape);
      teacher = exp_values(agent_forward(view.a.perception, pc, view.a.actors, view.a.ac, b, b, frames, false)
                               .neural_logp.value());
    }
    const auto r = check_gradient(
        view,
        [&](AgentView& q, Binding<double>& b) {
          return joint_loss(q.a, b, b, frames, t, c, full, true, 0.3, &sym, &sym_frames, &teacher).total;
        },
        2e-5, Stencil::FivePoint);
    if (r.kink_margin < 1e-3) continue;
    ++accepted;
    worst = std::max(worst, r.rel_error);
  }
  EXPECT_EQ(accepted, 100);
  EXPECT_LT(worst, 1e-5);
}

TEST(Collect, DeterministicAndSelfConsistent) {
  const auto a = tiny_agent<float>(2);
  Collector c1(a.env, 2, 42), c2(a.env, 2, 42);
  const auto r1 = c1.collect(a.perception, a.pc, a.actors, a.ac, 20, ActorMode::Neural, 0.99, 0.95);
  const auto r2 = c2.collect(a.perception, a.pc, a.actors, a.ac, 20, ActorMode::Neural, 0.99, 0.95);
  EXPECT_EQ(r1.size(), 40u);
  EXPECT_EQ(r1.actions, r2.actions);
  EXPECT_EQ(r1.logp_old, r2.logp_old);
  EXPECT_EQ(r1.advantages, r2.advantages);
  EXPECT_EQ(r1.frames, r2.frames);

  std::vector<const FrameStack*> stacks;
  for (const auto& f : r1.frames) stacks.push_back(&f);
  Tape<float> tape;
  const auto v = agent_eval(a.perception, a.pc, a.actors, a.ac, tape, stacks, false);
  for (std::size_t k = 0; k < r1.size(); ++k) {
    EXPECT_NEAR(static_cast<double>(v.neural_logp.value().at(k, r1.actions[k])), r1.logp_old[k], 1e-12);
    EXPECT_NEAR(static_cast<double>(v.value.value()[k]), r1.values[k], 1e-12);
  }
}

TEST(Collect, EmptyBatchIsAnError) {
  const auto a = tiny_agent<float>(2);
  Collector c(a.env, 2, 1);
  EXPECT_THROW(c.collect(a.perception, a.pc, a.actors, a.ac, 0, ActorMode::Neural, 0.99, 0.95), ContractError);
}

TEST(Collect, BehaviourIgnoresEqlActor) {
  auto a = tiny_agent<float>(2);
  Collector c1(a.env, 2, 8), c2(a.env, 2, 8);
  const auto r1 = c1.collect(a.perception, a.pc, a.actors, a.ac, 10, ActorMode::Neural, 0.99, 0.95);
  a.actors.eql.visit([](const std::string&, Tensor<float>& t) { t.fill(0.7f); });
  const auto r2 = c2.collect(a.perception, a.pc, a.actors, a.ac, 10, ActorMode::Neural, 0.99, 0.95);
  EXPECT_EQ(r1.actions, r2.actions);
}

TEST(Train, DeterministicLogsAndAnnealTrace) {
  const auto ds = generate(tiny_env(), BehaviorPolicy::Random, 40);
  const auto w = label_weights(ds);
  auto run = [&] {
    auto a = tiny_agent<float>(4);
    TrainOptions o;
    o.seed = 3;
    const auto log = train(a, tiny_ppo(), o, &ds, w);
    return std::make_pair(train_log_csv(log), log);
  };
  const auto [csv1, log1] = run();
  const auto [csv2, log2] = run();
  EXPECT_EQ(csv1, csv2);
  ASSERT_EQ(log1.size(), 2u);
  for (const auto& r : log1) {
    EXPECT_EQ(r.lambda_reg, anneal(1e-3, r.update, 2));
    EXPECT_TRUE(std::isfinite(r.l_ppo));
    EXPECT_TRUE(std::isfinite(r.l_ng));
    EXPECT_TRUE(std::isfinite(r.l_cnn));
  }
}

TEST(Train, SingleIterationUsesFullObjective) {
  auto a = tiny_agent<float>(4);
  const auto before = a.actors.eql.w[0];
  PpoConfig c = tiny_ppo();
  c.iterations = 1;
  c.lambda_cnn = 0;
  const auto log = train(a, c, TrainOptions{}, nullptr, LabelWeights{});
  EXPECT_TRUE(std::isfinite(log[0].l_ng));
  EXPECT_NE(a.actors.eql.w[0].values(), before.values());
}

TEST(Train, FrozenPerceptionIsUntouched) {
  auto a = tiny_agent<float>(4);
  const auto before = flatten(a.perception);
  TrainOptions o;
  o.freeze_perception = true;
  train(a, tiny_ppo(), o, nullptr, LabelWeights{});
  EXPECT_EQ(flatten(a.perception).values(), before.values());
}

TEST(Train, DivergenceSavesLastGood) {
  auto a = tiny_agent<float>(4);
  a.actors.critic.l2.b[0] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions o;
  o.failure_checkpoint = (std::filesystem::temp_directory_path() / "insight_fail.agt").string();
  std::filesystem::remove(o.failure_checkpoint);
  EXPECT_THROW(train(a, tiny_ppo(), o, nullptr, LabelWeights{}), NumericError);
  EXPECT_TRUE(std::filesystem::exists(o.failure_checkpoint));
}

TEST(Evaluate, ContractAndDeterminism) {
  const auto a = tiny_agent<float>(5);
  EXPECT_THROW(evaluate(a, 0, EvalOptions{}), ContractError);
  EvalOptions o;
  o.greedy = false;
  o.seed = 9;
  const auto s1 = evaluate(a, 3, o), s2 = evaluate(a, 3, o);
  EXPECT_EQ(s1.returns, s2.returns);
  EXPECT_EQ(s1.mean, s2.mean);
  EXPECT_GE(s1.std, 0.0);
}

TEST(Evaluate, NearUniformPolicyLosesMiniPong) {
  // Fresh actors are near-uniform and concede more points than they win.
  const auto a = tiny_agent<float>(6);
  EvalOptions o;
  o.greedy = false;
  const auto s = evaluate(a, 100, o);
  EXPECT_LT(s.mean, 0.0);
  EXPECT_GT(s.std, 0.0);
}

TEST(Checkpoint, AgentRoundTrip) {
  const auto a = tiny_agent<float>(7);
  const auto path = (std::filesystem::temp_directory_path() / "insight_rt.agt").string();
  save_agent(path, a, 3);
  const auto b = load_agent<float>(path);
  EXPECT_EQ(b.env, a.env);
  EXPECT_EQ(b.ac, a.ac);
  EXPECT_EQ(flatten(b.perception).values(), flatten(a.perception).values());
  EXPECT_EQ(flatten(b.actors).values(), flatten(a.actors).values());
  EXPECT_THROW(load_agent<float>(path + ".missing"), ArtifactError);
}

TEST(AgentMetrics, MaeExample) {
  EXPECT_NEAR(coordinate_mae(T::matrix({{0.5, 0.5}}), T::matrix({{0.4, 0.6}}), {1}), 0.1, 1e-15);
}

TEST(AgentMetrics, FmaeMatchesBruteForce) {
  Rng rng(21);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng.below(6), C = 1 + rng.below(5);
    ImageCoords d;
    d.n = n;
    d.objects = C;
    for (std::size_t i = 0; i < 2 * n * C; ++i) d.pred.push_back(rng.uniform()), d.truth.push_back(rng.uniform());
    for (std::size_t i = 0; i < n * C; ++i) d.exist.push_back(rng.bernoulli(0.7));
    std::vector<bool> s(C);
    for (std::size_t j = 0; j < C; ++j) s[j] = rng.bernoulli(0.6);
    s[rng.below(C)] = true;
    double sum = 0, e = 0, sc = 0;
    for (std::size_t j = 0; j < C; ++j) sc += s[j];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        const double sij = s[j] ? 1 : 0, cij = d.exist[i * C + j];
        e += sij * cij;
        sum += sij * cij *
               (std::abs(d.truth[(i * C + j) * 2] - d.pred[(i * C + j) * 2]) +
                std::abs(d.truth[(i * C + j) * 2 + 1] - d.pred[(i * C + j) * 2 + 1]));
      }
    if (e == 0) {
      EXPECT_THROW(f_mae(d, s), UndefinedMetricError);
      continue;
    }
    EXPECT_NEAR(f_mae(d, s), sum / (2 * e * n * sc), 1e-12);
    EXPECT_NEAR(f_mae(d, s, FmaeNormalization::PerFrame), sum / (2 * e * sc), 1e-12);
  }
}

TEST(AgentMetrics, FmaeEdgeCases) {
  ImageCoords d{2, 2, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}, {1, 1, 0, 1}};
  EXPECT_EQ(f_mae(d, {true, true}), 0.0);
  EXPECT_THROW(f_mae(d, {false, false}), UndefinedMetricError);
  d.exist = {0, 1, 0, 1};
  EXPECT_THROW(f_mae(d, {true, false}), UndefinedMetricError);
}

TEST(AgentMetrics, RelevantObjectsFromVariables) {
  // K = 2: object j owns variables 4j .. 4j+3.
  EXPECT_EQ(relevant_objects({0, 9}, 3, 2), (std::vector<bool>{true, false, true}));
  EXPECT_THROW(relevant_objects({12}, 3, 2), DimensionError);
}
