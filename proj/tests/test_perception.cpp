#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "insight/core/grad_check.hpp"
#include "insight/perception/pretrain.hpp"

using namespace insight;
using T = Tensor<double>;
using V = Var<double>;

namespace {

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<std::uint8_t> random_labels(std::size_t n, Rng& rng, double p = 0.5) {
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = rng.bernoulli(p);
  return out;
}

PerceptionConfig tiny_config() {
  PerceptionConfig c;
  c.frame_size = 16;
  c.frame_stack = 2;
  c.objects = 3;
  c.convs = {{2, 3, 2, 1}};
  c.hidden = 8;
  c.head_hidden = 4;
  return c;
}

EnvConfig tiny_env(std::uint64_t seed = 0) {
  EnvConfig e;
  e.frame_size = 16;
  e.frame_stack = 2;
  e.seed = seed;
  return e;
}

/// Random supervision shaped like the tiny network's heads.
SymbolTargets<double> random_targets(const PerceptionConfig& c, std::size_t n, Rng& rng) {
  SymbolTargets<double> t;
  t.n = n;
  const std::size_t L = c.exist_dim();
  t.exist = random_labels(n * L, rng);
  t.exist_weights = random_tensor(Shape{n, L}, rng, 0.1, 1.1);
  t.coords = random_tensor(Shape{n, 2 * L}, rng, 0.0, 1.0);
  t.coord_mask = T(Shape{n, 2 * L});
  for (std::size_t i = 0; i < n * L; ++i) t.coord_mask[2 * i] = t.coord_mask[2 * i + 1] = t.exist[i];
  t.sizes = random_tensor(Shape{n, c.size_dim()}, rng, 0.0, 1.0);
  t.size_mask = T(Shape{n, c.size_dim()});
  for (auto& v : t.size_mask.data()) v = rng.bernoulli(0.7);
  return t;
}

enum class Which { Exist, Coor, Size, Cnn };

V pick(const CnnLoss<double>& l, Which w) {
  switch (w) {
    case Which::Exist: return l.exist;
    case Which::Coor: return l.coor;
    case Which::Size: return l.size;
    default: return l.total;
  }
}

/// Gradient checks of a loss through the whole tiny network, w.r.t. every
/// parameter. Instances with a ReLU or L1 kink inside the probe are redrawn.
double network_worst_error(Which which, int trials, std::uint64_t seed) {
  const auto c = tiny_config();
  Rng rng(seed);
  double worst = 0;
  int accepted = 0;
  for (int attempt = 0; accepted < trials && attempt < trials * 20; ++attempt) {
    Rng init = rng.split(static_cast<std::uint64_t>(attempt));
    PerceptionParams<double> p(c, init);
    const T frames = random_tensor(Shape{2, c.frame_stack, c.frame_size, c.frame_size}, init, 0.0, 1.0);
    const auto targets = random_targets(c, 2, init);
    auto build = [&](PerceptionParams<double>& q, Binding<double>& bind) {
      const auto out = perception_forward(q, c, bind, bind.tape().constant(frames));
      return pick(loss_cnn(out, targets), which);
    };
    const GradCheck r = check_gradient(p, build, 1e-6);
    if (r.kink_margin < 1e-4) continue;
    worst = std::max(worst, r.rel_error);
    ++accepted;
  }
  EXPECT_EQ(accepted, trials);
  return worst;
}

}  // namespace

TEST(PerceptionForward, ZeroNetwork) {
  const auto c = tiny_config();
  Rng rng(0);
  PerceptionParams<double> p(c, rng);
  p.visit([](const std::string&, T& t) { t.fill(0.0); });
  const auto out = perceive(p, c, T(Shape{3, c.frame_stack, c.frame_size, c.frame_size}));
  ASSERT_EQ(out.exist_prob.shape(), (Shape{3, c.exist_dim()}));
  ASSERT_EQ(out.coords.shape(), (Shape{3, c.coord_dim()}));
  ASSERT_EQ(out.sizes.shape(), (Shape{3, c.size_dim()}));
  for (double v : out.exist_prob.data()) EXPECT_EQ(v, 0.5);
  for (double v : out.coords.data()) EXPECT_EQ(v, 0.0);
}

TEST(PerceptionForward, DeterministicAndClipped) {
  const auto c = tiny_config();
  Rng rng(7);
  PerceptionParams<double> p(c, rng);
  for (auto* t : {&p.coord.l2.b, &p.size.l2.b})
    for (auto& v : t->data()) v = rng.uniform(-3, 3);
  const T frames = random_tensor(Shape{4, c.frame_stack, c.frame_size, c.frame_size}, rng, 0.0, 1.0);
  const auto a = perceive(p, c, frames);
  const auto b = perceive(p, c, frames);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(a.exist_prob, b.exist_prob);
  EXPECT_EQ(a.hidden, b.hidden);
  for (double v : a.coords.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : a.sizes.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : a.exist_prob.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
}

TEST(PerceptionForward, ShapeMismatch) {
  const auto c = tiny_config();
  Rng rng(0);
  PerceptionParams<double> p(c, rng);
  EXPECT_THROW(perceive(p, c, T(Shape{1, 3, 16, 16})), DimensionError);
  EXPECT_THROW(perceive(p, c, T(Shape{1, 2, 20, 20})), DimensionError);
}

TEST(PerceptionForward, WideConfigHeadWidths) {
  const auto c = PerceptionConfig::wide(256, 4);
  EXPECT_EQ(c.coord_dim(), 2048u);
  EXPECT_EQ(c.exist_dim(), 1024u);
  EXPECT_EQ(c.size_dim(), 512u);
  EXPECT_EQ(c.flat_dim(), 64u * 21 * 21);
}

TEST(PerceptionForward, MaskCoords) {
  const T coords = T::vector({0.1, 0.2, 0.3, 0.4});
  const auto m = mask_coords(coords, T::vector({0.49, 0.5}));
  EXPECT_EQ(m, T::vector({0.0, 0.0, 0.3, 0.4}));
}

TEST(ExistLoss, SpecExamples) {
  Tape<double> tape;
  const auto one = [&](double p, std::uint8_t c) {
    return loss_exist(tape.constant(T(Shape{1, 1}, {p})), {c}, T(Shape{1, 1}, {1.0})).value().item();
  };
  EXPECT_NEAR(one(0.5, 1), -0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(one(0.5, 1), 0.1733, 1e-4);
  EXPECT_EQ(one(0.5, 0), one(0.5, 1));
  EXPECT_LT(one(1.0, 1), 1e-15);
  EXPECT_LT(one(0.0, 0), 1e-15);
  EXPECT_TRUE(std::isfinite(one(0.0, 1)));
  EXPECT_GT(one(0.3, 1), 0.0);
}

TEST(ExistLoss, DividesBySampleCount) {
  Tape<double> tape;
  const auto p = tape.constant(T(Shape{2, 2}, {0.3, 0.6, 0.8, 0.1}));
  const std::vector<std::uint8_t> c{1, 0, 1, 1};
  const T w(Shape{2, 2}, {0.5, 1.0, 0.2, 0.9});
  double expect = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double q = p.value()[i];
    expect += c[i] ? w[i] * (1 - q) * (1 - q) * std::log(q) : w[i] * q * q * std::log(1 - q);
  }
  EXPECT_NEAR(loss_exist(p, c, w).value().item(), -expect / 2, 1e-15);
}

TEST(CoordLoss, SpecExamples) {
  Tape<double> tape;
  const auto pred = tape.constant(T(Shape{1, 2}, {0.5, 0.5}));
  const T truth(Shape{1, 2}, {0.4, 0.6});
  EXPECT_NEAR(masked_l1(pred, truth, T(Shape{1, 2}, {1.0, 1.0})).value().item(), 0.2, 1e-15);
  EXPECT_EQ(masked_l1(pred, truth, T(Shape{1, 2})).value().item(), 0.0);
  EXPECT_EQ(masked_l1(pred, pred.value(), T(Shape{1, 2}, {1.0, 1.0})).value().item(), 0.0);
}

TEST(SizeLoss, SpecExamples) {
  Tape<double> tape;
  const auto pred = tape.constant(T(Shape{1, 4}, {0.2, 0.3, 0.9, 0.9}));
  const T truth(Shape{1, 4}, {0.1, 0.1, 0.0, 0.0});
  EXPECT_NEAR(masked_l1(pred, truth, T(Shape{1, 4}, {1.0, 1.0, 0.0, 0.0})).value().item(), 0.3, 1e-15);
}

TEST(CoordLoss, MaskedEntriesAreInert) {
  Rng rng(3);
  const T truth = random_tensor(Shape{3, 6}, rng, 0, 1);
  T mask(Shape{3, 6});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 0.0 : 1.0;
  const T pred = random_tensor(Shape{3, 6}, rng, 0, 1);
  T moved = pred;
  for (std::size_t i = 0; i < moved.size(); ++i)
    if (mask[i] == 0.0) moved[i] += rng.uniform(-5, 5);

  const auto run = [&](const T& x) {
    Tape<double> tape;
    Binding<double> bind(tape);
    const auto l = masked_l1(bind(x), truth, mask);
    tape.backward(l);
    return std::pair{l.value().item(), bind.grad(x)};
  };
  const auto [la, ga] = run(pred);
  const auto [lb, gb] = run(moved);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(ga, gb);
  for (std::size_t i = 0; i < ga.size(); ++i)
    if (mask[i] == 0.0) { EXPECT_EQ(ga[i], 0.0); }
}

TEST(CnnLoss, SumOfComponents) {
  const auto c = tiny_config();
  Rng rng(11);
  PerceptionParams<double> p(c, rng);
  const T frames = random_tensor(Shape{3, c.frame_stack, c.frame_size, c.frame_size}, rng, 0.0, 1.0);
  const auto t = random_targets(c, 3, rng);
  Tape<double> tape;
  Binding<double> bind(tape);
  const auto l = loss_cnn(perception_forward(p, c, bind, tape.constant(frames)), t);
  EXPECT_NEAR(l.total.value().item(), l.exist.value().item() + l.coor.value().item() + l.size.value().item(), 1e-12);

  // Gradient of the sum equals the sum of component gradients.
  const auto grad_of = [&](Which w) {
    Tape<double> tp;
    Binding<double> b(tp);
    const auto v = pick(loss_cnn(perception_forward(p, c, b, tp.constant(frames)), t), w);
    tp.backward(v);
    return b.grad(p.fc.w);
  };
  const T total = grad_of(Which::Cnn), ge = grad_of(Which::Exist), gc = grad_of(Which::Coor), gs = grad_of(Which::Size);
  for (std::size_t i = 0; i < total.size(); ++i) EXPECT_NEAR(total[i], ge[i] + gc[i] + gs[i], 1e-12);
}

TEST(CnnLoss, ZeroWhenPerfect) {
  Tape<double> tape;
  PerceptionVars<double> out;
  out.exist_prob = tape.constant(T(Shape{1, 2}, {1.0, 0.0}));
  out.coord_raw = tape.constant(T(Shape{1, 4}, {0.2, 0.3, 0.0, 0.0}));
  out.size_raw = tape.constant(T(Shape{1, 2}, {0.1, 0.1}));
  SymbolTargets<double> t;
  t.n = 1;
  t.exist = {1, 0};
  t.exist_weights = T(Shape{1, 2}, {1.0, 1.0});
  t.coords = T(Shape{1, 4}, {0.2, 0.3, 0.7, 0.7});
  t.coord_mask = T(Shape{1, 4}, {1.0, 1.0, 0.0, 0.0});
  t.sizes = T(Shape{1, 2}, {0.1, 0.1});
  t.size_mask = T(Shape{1, 2}, {1.0, 1.0});
  EXPECT_LT(loss_cnn(out, t).total.value().item(), 1e-12);
}

TEST(LossGradients, DirectInputs) {
  Rng rng(5);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(3), d = 1 + rng.below(5);
    const auto labels = random_labels(n * d, rng);
    const T w = random_tensor(Shape{n, d}, rng, 0.1, 1.1);
    const T target = random_tensor(Shape{n, d}, rng, 0.0, 1.0);
    T mask(Shape{n, d});
    for (auto& v : mask.data()) v = rng.bernoulli(0.6);
    TensorList<double> probs{{random_tensor(Shape{n, d}, rng, 0.02, 0.98)}};
    const auto exist = check_gradient(probs, [&](TensorList<double>& p, Binding<double>& b) {
      return loss_exist(b(p.items[0]), labels, w);
    });
    worst = std::max(worst, exist.rel_error);
    TensorList<double> pred{{random_tensor(Shape{n, d}, rng, -0.5, 1.5)}};
    const auto l1 = check_gradient(pred, [&](TensorList<double>& p, Binding<double>& b) {
      return masked_l1(b(p.items[0]), target, mask);
    });
    if (l1.kink_margin >= 1e-3) worst = std::max(worst, l1.rel_error);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(LossGradients, ExistThroughNetwork) { EXPECT_LT(network_worst_error(Which::Exist, 10, 21), 1e-5); }
TEST(LossGradients, CoorThroughNetwork) { EXPECT_LT(network_worst_error(Which::Coor, 10, 22), 1e-5); }
TEST(LossGradients, SizeThroughNetwork) { EXPECT_LT(network_worst_error(Which::Size, 10, 23), 1e-5); }
TEST(LossGradients, CnnThroughNetwork) { EXPECT_LT(network_worst_error(Which::Cnn, 10, 24), 1e-5); }

TEST(Metrics, MaeExample) {
  const T pred(Shape{1, 2}, {0.5, 0.5});
  const T truth(Shape{1, 2}, {0.4, 0.6});
  EXPECT_NEAR(coordinate_mae(pred, truth, {1}), 0.1, 1e-15);
  EXPECT_EQ(coordinate_mae(pred, truth, {0}), 0.0);
  EXPECT_EQ(coordinate_mae(truth, truth, {1}), 0.0);
  EXPECT_THROW(coordinate_mae(T(Shape{0, 2}), T(Shape{0, 2}), {}), UndefinedMetricError);
  EXPECT_DOUBLE_EQ(existence_accuracy(T::vector({0.7, 0.2, 0.5}), {1, 1, 1}), 2.0 / 3.0);
}

TEST(Targets, LayoutFollowsDataset) {
  const auto d = generate(tiny_env(), BehaviorPolicy::Scripted, 20);
  const auto w = label_weights(d);
  const auto t = make_targets<double>(d, {3, 7}, w);
  const std::size_t L = d.objects() * d.stack();
  EXPECT_EQ(t.exist.size(), 2 * L);
  EXPECT_EQ(t.coords.shape(), (Shape{2, 2 * L}));
  const auto c = d.coord_labels(7);
  for (std::size_t k = 0; k < 2 * L; ++k) EXPECT_EQ(t.coords.at(1, k), c[k]);
  const auto e = d.exist_labels(7);
  for (std::size_t l = 0; l < L; ++l) EXPECT_EQ(t.coord_mask.at(1, 2 * l), double(e[l]));
}

TEST(Pretrain, ZeroEpochsIsNoOp) {
  const auto d = generate(tiny_env(), BehaviorPolicy::Random, 40);
  const auto c = tiny_config();
  Rng rng(1);
  PerceptionParams<float> p(c, rng);
  const auto before = flatten(p);
  PretrainConfig cfg;
  cfg.epochs = 0;
  const auto curve = pretrain(p, c, d, label_weights(d), cfg);
  EXPECT_TRUE(curve.empty());
  EXPECT_EQ(flatten(p), before);
}

TEST(Pretrain, DeterministicAndLearns) {
  const auto d = generate(tiny_env(), BehaviorPolicy::Random, 120);
  const auto c = tiny_config();
  const auto w = label_weights(d);
  PretrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch = 16;
  cfg.lr = 3e-3;
  cfg.seed = 9;
  const auto run = [&] {
    Rng rng(1);
    PerceptionParams<float> p(c, rng);
    auto curve = pretrain(p, c, d, w, cfg);
    return std::pair{flatten(p), curve};
  };
  const auto [pa, ca] = run();
  const auto [pb, cb] = run();
  EXPECT_EQ(pa, pb);
  ASSERT_EQ(ca.size(), 8u);
  EXPECT_EQ(curve_csv(ca), curve_csv(cb));
  EXPECT_LT(ca.back().train_loss, ca.front().train_loss);
  EXPECT_EQ(curve_csv(ca).substr(0, curve_csv(ca).find('\n')), "epoch,train_loss,test_loss,test_mae,test_exist_acc");
}

TEST(Pretrain, DivergenceIsReported) {
  const auto d = generate(tiny_env(), BehaviorPolicy::Random, 40);
  const auto c = tiny_config();
  Rng rng(1);
  PerceptionParams<float> p(c, rng);
  p.fc.b[0] = std::numeric_limits<float>::quiet_NaN();
  PretrainConfig cfg;
  cfg.epochs = 1;
  try {
    pretrain(p, c, d, label_weights(d), cfg);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(Pretrain, ConfigMustMatchDataset) {
  const auto d = generate(tiny_env(), BehaviorPolicy::Random, 40);
  auto c = tiny_config();
  c.objects = 2;
  Rng rng(1);
  PerceptionParams<float> p(c, rng);
  EXPECT_THROW(pretrain(p, c, d, label_weights(d), {}), ConfigError);
}

TEST(Checkpoint, RoundTrip) {
  const auto c = tiny_config();
  Rng rng(2);
  PerceptionParams<float> p(c, rng);
  const auto path = (std::filesystem::temp_directory_path() / "insight_pcp.bin").string();
  save_perception(path, c, p);
  const auto [c2, p2] = load_perception<float>(path);
  EXPECT_EQ(c2, c);
  EXPECT_EQ(flatten(p2), flatten(p));
  std::filesystem::remove(path);
  EXPECT_THROW(load_perception<float>(path), ArtifactError);
}
