#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "insight/dataset/io.hpp"

using namespace insight;

namespace {

EnvConfig small(EnvId id, std::uint64_t seed = 0) {
  EnvConfig c;
  c.env_id = id;
  c.seed = seed;
  c.frame_size = 16;
  return c;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("insight_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Generate, EightyTwentySplit) {
  const auto d = generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 10);
  EXPECT_EQ(d.size(), 10u);
  EXPECT_EQ(d.train.size(), 8u);
  EXPECT_EQ(d.test.size(), 2u);
  EXPECT_NO_THROW(check_split(d));
  const auto e = generate(small(EnvId::MiniCrossing), BehaviorPolicy::Scripted, 1003);
  EXPECT_EQ(e.train.size(), 802u);
  EXPECT_NO_THROW(check_split(e));
  EXPECT_THROW(generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 9), ContractError);
}

TEST(Generate, Deterministic) {
  const auto a = generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 200);
  const auto b = generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 200);
  EXPECT_EQ(a, b);
  const auto c = generate(small(EnvId::MiniPong, 1), BehaviorPolicy::Random, 200);
  EXPECT_NE(a.frames, c.frames);
}

TEST(Generate, LabelLayout) {
  const auto d = generate(small(EnvId::MiniPong), BehaviorPolicy::Scripted, 20);
  const auto coords = d.coord_labels(5);
  const auto& sym = d.symbols[5];
  ASSERT_EQ(coords.size(), 2u * 3 * 4);
  EXPECT_EQ(coords[coord_index(2, 3, 0, 4)], sym[3].coords[2][1]);
  EXPECT_EQ(coords[coord_index(2, 3, 1, 4)], sym[3].coords[2][0]);
  EXPECT_EQ(coords[coord_index(0, 1, 0, 4)], sym[1].coords[0][1]);
  const auto names = coordinate_names(d.object_names, 4);
  EXPECT_EQ(names[coord_index(1, 3, 0, 4)], "y_agent_4");
  EXPECT_EQ(names[coord_index(0, 0, 1, 4)], "x_ball_1");
  EXPECT_EQ(d.size_labels(5)[2], sym[3].sizes[1][0]);
}

TEST(LabelWeights, HandDerivedCase) {
  // One sample, both labels present: n = [1, 1], eta = 0.5, mu = 1.
  const auto w = label_weights({1, 1}, 1, 2);
  EXPECT_EQ(w.n, (std::vector<double>{1, 1}));
  EXPECT_DOUBLE_EQ(w.mu, 1.0);
  const auto eta = w.eta(std::vector<std::uint8_t>{1, 1}.data());
  EXPECT_DOUBLE_EQ(eta[0], 0.5);
  const auto r = w.row(std::vector<std::uint8_t>{1, 1});
  EXPECT_NEAR(r[0], 0.1 + sigmoid(-5), 1e-15);
  EXPECT_NEAR(r[0], 0.1067, 1e-4);
  EXPECT_NEAR(r[1], 0.1067, 1e-4);
}

TEST(LabelWeights, SymmetryBoundsAndMonotone) {
  // Every sample has exactly two of four labels, each label equally often.
  const std::vector<std::uint8_t> m{1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1, 0, 0, 1, 0, 1};
  const auto w = label_weights(m, 4, 4);
  const auto all = weight_matrix(w, m, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(all.at(i, j), all.at(0, 0));

  Rng rng(4);
  std::vector<std::uint8_t> p(50 * 6);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t j = 0; j < 6; ++j) p[i * 6 + j] = rng.bernoulli(0.1 + 0.15 * double(j));
  const auto v = label_weights(p, 50, 6);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto eta = v.eta(p.data() + i * 6);
    const auto row = v.row(p.data() + i * 6);
    double s = 0;
    bool any = false;
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_GT(row[j], 0.1);
      EXPECT_LE(row[j], 1.1);  // sigmoid rounds to 1 in double once beta*(eta-mu) > ~37
      if (p[i * 6 + j]) s += eta[j], any = true;
      for (std::size_t k = 0; k < 6; ++k) {
        if (eta[j] > eta[k]) { EXPECT_GE(row[j], row[k]); }
        if (eta[j] > eta[k] && eta[j] - v.mu < 3.0) { EXPECT_GT(row[j], row[k]); }
      }
    }
    if (any) { EXPECT_NEAR(s, 1.0, 1e-12); }
  }
}

TEST(LabelWeights, ZeroFrequencyAndDegenerate) {
  const auto w = label_weights({1, 0, 1, 0}, 2, 2);
  EXPECT_EQ(w.n[1], 0.0);
  EXPECT_DOUBLE_EQ(w.mu, 0.5);
  const auto r = w.row(std::vector<std::uint8_t>{1, 0});
  EXPECT_NEAR(r[1], 0.1 + sigmoid(-10 * 0.5), 1e-15);
  EXPECT_THROW(label_weights({0, 0, 0, 0}, 2, 2), DegenerateDataError);
}

TEST(LabelWeights, FromDatasetUsesTrainSplit) {
  const auto d = generate(small(EnvId::MiniCrossing), BehaviorPolicy::Random, 300);
  const auto w = label_weights(d);
  EXPECT_EQ(w.labels(), d.objects() * d.stack());
  EXPECT_NEAR(w.n[0], 1.0 / double(d.train.size()), 1e-15);  // agent always present
}

TEST(DatasetIo, RoundTripBitExact) {
  for (auto id : {EnvId::MiniPong, EnvId::MiniCrossing}) {
    auto cfg = small(id, 3);
    cfg.frame_size = 32;
    const auto d = generate(cfg, BehaviorPolicy::Scripted, 57);
    const auto dir = temp_dir("ds_roundtrip");
    save_dataset(d, dir);
    const auto back = load_dataset(dir);
    EXPECT_EQ(back, d);
    std::filesystem::remove_all(dir);
  }
}

TEST(DatasetIo, ManifestMatchesPayload) {
  const auto d = generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 40);
  const auto dir = temp_dir("ds_manifest");
  save_dataset(d, dir);
  const auto bytes = detail::read_file(dir + "/manifest.json");
  const auto m = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
  EXPECT_EQ(m["schema"], "fsd-v1");
  EXPECT_EQ(m["n_frames"], 40);
  EXPECT_EQ(m["objects"], 3);
  EXPECT_EQ(m["frame_size"], 16);
  EXPECT_EQ(m["split"]["train"], 32);
  EXPECT_EQ(m["split"]["test"], 8);
  EXPECT_EQ(std::filesystem::file_size(dir + "/frames.bin"), 40u * 4 * 16 * 16);
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, TruncationAndSchemaErrors) {
  const auto d = generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 20);
  const auto dir = temp_dir("ds_trunc");
  save_dataset(d, dir);

  auto frames = detail::read_file(dir + "/frames.bin");
  frames.resize(frames.size() - 100);
  detail::write_file(dir + "/frames.bin", frames);
  try {
    load_dataset(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset " + std::to_string(frames.size())), std::string::npos) << e.what();
  }

  save_dataset(d, dir);
  auto symbols = detail::read_file(dir + "/symbols.jsonl");
  symbols.resize(symbols.size() / 2);
  detail::write_file(dir + "/symbols.jsonl", symbols);
  try {
    load_dataset(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
  }

  save_dataset(d, dir);
  auto manifest = detail::read_file(dir + "/manifest.json");
  std::string text(manifest.begin(), manifest.end());
  text.replace(text.find("fsd-v1"), 6, "fsd-v9");
  detail::write_file(dir + "/manifest.json", std::vector<char>(text.begin(), text.end()));
  EXPECT_THROW(load_dataset(dir), FormatError);

  EXPECT_THROW(load_dataset(dir + "/nowhere"), ArtifactError);
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, SplitViolationDetectedOnLoad) {
  auto d = generate(small(EnvId::MiniPong), BehaviorPolicy::Random, 20);
  d.test.push_back(d.train.front());
  const auto dir = temp_dir("ds_split");
  save_dataset(d, dir);
  EXPECT_THROW(load_dataset(dir), FormatError);
  std::filesystem::remove_all(dir);
}
