#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "insight/core/archive.hpp"
#include "insight/core/distributions.hpp"
#include "insight/core/grad_check.hpp"
#include "insight/core/ops.hpp"
#include "insight/core/params.hpp"

using namespace insight;
using T = Tensor<double>;
using V = Var<double>;

namespace {

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Reduces any output to a scalar through a fixed random projection so every
/// output entry receives a distinct upstream gradient.
V project(const V& y, Rng& rng) {
  return ad::sum(ad::mul_const(y, random_tensor(y.shape(), rng)));
}

/// Runs `trials` gradient checks on fresh random inputs, skipping instances
/// that sit too close to a kink, and returns the worst relative error.
double worst_error(int trials, const std::function<std::vector<T>(Rng&)>& make,
                   const std::function<V(std::vector<V>&, Rng&)>& body, std::uint64_t seed = 1) {
  Rng rng(seed);
  double worst = 0;
  int accepted = 0;
  for (int attempt = 0; accepted < trials && attempt < trials * 20; ++attempt) {
    TensorList<double> inputs{make(rng)};
    const std::uint64_t proj_seed = rng.next_u64();
    auto build = [&](TensorList<double>& p, Binding<double>& bind) {
      std::vector<V> vars;
      for (auto& t : p.items) vars.push_back(bind(t));
      Rng proj(proj_seed);
      return body(vars, proj);
    };
    const GradCheck r = check_gradient(inputs, build);
    if (r.kink_margin < 1e-3) continue;
    worst = std::max(worst, r.rel_error);
    ++accepted;
  }
  EXPECT_EQ(accepted, trials);
  return worst;
}

}  // namespace

TEST(Affine, SpecExamples) {
  Tape<double> tape;
  auto y = ad::affine(tape.constant(T::identity(2)), tape.constant(T::vector({0, 0})), tape.constant(T::vector({3, 4})));
  EXPECT_EQ(y.value(), T::vector({3, 4}));
  y = ad::affine(tape.constant(T::matrix({{1, 2}, {0, 1}})), tape.constant(T::vector({1, 0})),
                 tape.constant(T::vector({1, 1})));
  EXPECT_EQ(y.value(), T::vector({4, 1}));
  y = ad::affine(tape.constant(T(Shape{1, 3})), tape.constant(T::vector({5})), tape.constant(T::vector({7, -2, 9})));
  EXPECT_EQ(y.value(), T::vector({5}));
}

TEST(Affine, ShapeMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(ad::affine(tape.constant(T(Shape{2, 3})), tape.constant(T(Shape{2})), tape.constant(T(Shape{2}))),
               DimensionError);
  EXPECT_THROW(ad::affine(tape.constant(T(Shape{2, 3})), tape.constant(T(Shape{3})), tape.constant(T(Shape{3}))),
               DimensionError);
}

TEST(Softmax, SpecExamples) {
  const auto u = softmax(T::vector({0, 0, 0}));
  for (double p : u.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const auto h = softmax(T::vector({std::log(2.0), 0}));
  EXPECT_NEAR(h[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(h[1], 1.0 / 3.0, 1e-15);
  const auto a = softmax(T::vector({0.3, -1.2, 2.5}));
  const auto b = softmax(T::vector({7.3, 5.8, 9.5}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  EXPECT_THROW(softmax(T(Shape{0})), DimensionError);
}

TEST(Softmax, SumsToOneAndKeepsArgmax) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto l = random_tensor(Shape{1 + rng.below(8)}, rng, -30, 30);
    const auto p = softmax(l);
    double s = 0;
    for (double v : p.data()) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(argmax(p), argmax(l));
  }
}

TEST(Categorical, SpecExamples) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    EXPECT_EQ(categorical(T::vector({1, 0}), rng), 0u);
  }
  EXPECT_NEAR(entropy(T::vector({0.5, 0.5})), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_prob(T::vector({0.9, 0.1}), 1), std::log(0.1), 1e-15);
  EXPECT_NEAR(log_prob(T::vector({0.9, 0.1}), 1), -2.3026, 1e-4);
  Rng rng(0);
  EXPECT_THROW(categorical(T::vector({0.5, 0.6}), rng), ContractError);
  EXPECT_THROW(entropy(T::vector({0.2, 0.2})), ContractError);
}

TEST(Categorical, EmpiricalFrequencies) {
  Rng rng(11);
  const auto p = T::vector({0.2, 0.5, 0.3});
  std::vector<int> counts(3, 0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++counts[categorical(p, rng)];
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(counts[a] / double(n), p[a], 0.005);
}

TEST(Clip01, SpecExamplesAndIdempotence) {
  const auto c = clip01(T::vector({-0.1, 1.2, 0.5}));
  EXPECT_EQ(c, T::vector({0.0, 1.0, 0.5}));
  Rng rng(5);
  const auto x = random_tensor(Shape{100}, rng, -2, 2);
  EXPECT_EQ(clip01(clip01(x)), clip01(x));
}

TEST(Clip01, GradientZeroAtAndBeyondBoundaries) {
  Tape<double> tape;
  auto x = tape.parameter(T::vector({-0.5, 0.0, 0.25, 1.0, 1.5}));
  tape.backward(ad::sum(ad::clip01(x)));
  EXPECT_EQ(tape.grad(x), T::vector({0, 0, 1, 0, 0}));
}

TEST(FiniteDifference, SpecExamples) {
  const auto g = finite_difference_grad([](const T& th) { return th[0] * th[0]; }, T::vector({3}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
  const auto z = finite_difference_grad([](const T&) { return 4.2; }, T::vector({1, 2, 3}), 1e-5);
  EXPECT_EQ(z, T::vector({0, 0, 0}));
  const auto o = finite_difference_grad(
      [](const T& th) {
        double s = 0;
        for (double v : th.data()) s += v;
        return s;
      },
      T::vector({0.1, -3, 8}), 1e-5);
  for (double v : o.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifference, NonFiniteNamesIndex) {
  try {
    finite_difference_grad([](const T& th) { return th[1] > 1.5 ? std::log(-1.0) : 0.0; }, T::vector({0, 1.5}), 1e-5);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
  EXPECT_THROW(finite_difference_grad([](const T&) { return 0.0; }, T::vector({0}), 0.0), ContractError);
}

// Every differentiable primitive against central differences on 100 random
// small inputs each.

TEST(OpGradients, Affine) {
  EXPECT_LT(worst_error(
                100, [](Rng& r) { return std::vector<T>{random_tensor({3, 4}, r), random_tensor({3}, r), random_tensor({2, 4}, r)}; },
                [](auto& v, Rng& r) { return project(ad::affine(v[0], v[1], v[2]), r); }),
            1e-5);
  EXPECT_LT(worst_error(
                100, [](Rng& r) { return std::vector<T>{random_tensor({2, 3}, r), random_tensor({2}, r), random_tensor({3}, r)}; },
                [](auto& v, Rng& r) { return project(ad::affine(v[0], v[1], v[2]), r); }),
            1e-5);
}

TEST(OpGradients, Conv2d) {
  EXPECT_LT(worst_error(
                100,
                [](Rng& r) {
                  return std::vector<T>{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r)};
                },
                [](auto& v, Rng& r) { return project(ad::conv2d(v[0], v[1], v[2], 2, 1), r); }),
            1e-5);
}

TEST(OpGradients, LayerNorm) {
  EXPECT_LT(worst_error(
                100, [](Rng& r) { return std::vector<T>{random_tensor({3, 5}, r), random_tensor({5}, r), random_tensor({5}, r)}; },
                [](auto& v, Rng& r) { return project(ad::layer_norm(v[0], v[1], v[2]), r); }),
            1e-5);
}

TEST(OpGradients, Elementwise) {
  const auto one = [](Rng& r) { return std::vector<T>{random_tensor({7}, r, -2, 2)}; };
  const auto two = [](Rng& r) { return std::vector<T>{random_tensor({7}, r, -2, 2), random_tensor({7}, r, -2, 2)}; };
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::relu(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::sigmoid(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::tanh(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::exp(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::square(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::clip01(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::scale(v[0], -1.7), r); }), 1e-5);
  EXPECT_LT(worst_error(100, two, [](auto& v, Rng& r) { return project(ad::add(v[0], v[1]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, two, [](auto& v, Rng& r) { return project(ad::sub(v[0], v[1]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, two, [](auto& v, Rng& r) { return project(ad::mul(v[0], v[1]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return project(ad::reshape(v[0], {7, 1}), r); }), 1e-5);
  EXPECT_LT(worst_error(100, one, [](auto& v, Rng& r) { return ad::scale(ad::mean(ad::square(v[0])), 1.0 + r.uniform()); }),
            1e-5);
}

TEST(OpGradients, Distributions) {
  const auto logits = [](Rng& r) { return std::vector<T>{random_tensor({3, 6}, r, -3, 3)}; };
  EXPECT_LT(worst_error(100, logits, [](auto& v, Rng& r) { return project(ad::log_softmax(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, logits, [](auto& v, Rng& r) { return project(ad::softmax(v[0]), r); }), 1e-5);
  EXPECT_LT(worst_error(100, logits, [](auto& v, Rng& r) { return project(ad::grouped_log_softmax(v[0], 2), r); }), 1e-5);
  EXPECT_LT(worst_error(100, logits, [](auto& v, Rng& r) { return project(ad::grouped_log_softmax(v[0], 3), r); }), 1e-5);
  EXPECT_LT(worst_error(100, logits,
                        [](auto& v, Rng& r) {
                          std::vector<std::size_t> idx{r.below(6), r.below(6), r.below(6)};
                          return project(ad::gather(ad::log_softmax(v[0]), idx), r);
                        }),
            1e-5);
}

TEST(GroupedLogSoftmax, MatchesClosedForm) {
  // action_a = (exp(l_a1) + exp(l_a2)) / sum(exp(l))
  Tape<double> tape;
  const T l = T::vector({0.3, -0.7, 1.1, 0.2});
  const auto y = ad::grouped_log_softmax(tape.constant(l), 2);
  const double z = std::exp(0.3) + std::exp(-0.7) + std::exp(1.1) + std::exp(0.2);
  EXPECT_NEAR(std::exp(y.value()[0]), (std::exp(0.3) + std::exp(-0.7)) / z, 1e-15);
  EXPECT_NEAR(std::exp(y.value()[1]), (std::exp(1.1) + std::exp(0.2)) / z, 1e-15);
  const auto single = ad::grouped_log_softmax(tape.constant(l), 1);
  const auto plain = ad::log_softmax(tape.constant(l));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(single.value()[i], plain.value()[i], 1e-15);
}

TEST(Tape, GradientShapesMatchParameters) {
  Rng rng(2);
  Tape<double> tape;
  auto W = tape.parameter(random_tensor({4, 3}, rng));
  auto b = tape.parameter(random_tensor({4}, rng));
  auto x = tape.constant(random_tensor({3}, rng));
  auto unused = tape.parameter(random_tensor({2, 2}, rng));
  tape.backward(ad::sum(ad::relu(ad::affine(W, b, x))));
  EXPECT_EQ(tape.grad(W).shape(), W.shape());
  EXPECT_EQ(tape.grad(b).shape(), b.shape());
  EXPECT_EQ(tape.grad(unused), T(Shape{2, 2}));
}

TEST(Rng, SplitStreamsAreReproducibleAndDistinct) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c = Rng(42).split(1), d = Rng(42).split(2);
  EXPECT_NE(c.next_u64(), d.next_u64());
  Rng u(9);
  double mean = 0;
  for (int i = 0; i < 100000; ++i) mean += u.normal();
  EXPECT_NEAR(mean / 100000, 0.0, 0.02);
}

TEST(Adam, MatchesReferenceStep) {
  // One step from zero moments: update = lr * g / (|g| + eps) with bias correction.
  T w = T::vector({1.0, -2.0});
  Adam<double> opt({.lr = 0.1, .weight_decay = 0.0});
  std::vector<GradEntry<double>> grads{{"w", &w, T::vector({0.5, -4.0})}};
  opt.step(grads);
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(w[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12);
  std::vector<GradEntry<double>> none{{"w", &w, T()}};
  const T before = w;
  opt.step(none);
  EXPECT_EQ(w, before);
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  T a = T::vector({0, 0}), b = T::vector({0});
  std::vector<GradEntry<double>> g{{"a", &a, T::vector({3, 0})}, {"b", &b, T::vector({4})}};
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 5.0, 1e-12);
  EXPECT_NEAR(g[0].grad[0], 0.6, 1e-6);
  EXPECT_NEAR(g[1].grad[0], 0.8, 1e-6);
}

TEST(Archive, RoundTripAndTruncation) {
  const auto dir = std::filesystem::temp_directory_path() / "insight_archive_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.bin").string();
  TensorArchive ar;
  ar.metadata = R"({"k":1})";
  ar.tensors.emplace_back("w", T::matrix({{1.5, -0.25}, {1e-300, 3}}));
  ar.tensors.emplace_back("b", T::vector({0.1}));
  save_archive(path, "tst-v1", ar);
  const auto back = load_archive(path, "tst-v1");
  EXPECT_EQ(back.metadata, ar.metadata);
  EXPECT_EQ(back.get("w"), ar.get("w"));
  EXPECT_EQ(back.get("b"), ar.get("b"));
  EXPECT_THROW(load_archive(path, "xxx-v1"), FormatError);

  auto bytes = detail::read_file(path);
  bytes.resize(bytes.size() - 5);
  detail::write_file(path, bytes);
  try {
    load_archive(path, "tst-v1");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
