#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "insight/core/archive.hpp"
#include "insight/dataset/io.hpp"
#include "insight/perception/losses.hpp"
#include "insight/perception/metrics.hpp"

namespace insight {

struct PretrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 32;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0;
  double test_loss = 0;
  double test_mae = 0;
  double test_exist_acc = 0;
};

/// Test-split (or any index set) evaluation in fixed-size chunks.
struct PerceptionEval {
  double loss = 0;
  double mae = 0;
  double exist_acc = 0;
};

template <typename S>
PerceptionEval evaluate_perception(const PerceptionParams<S>& p, const PerceptionConfig& c, const FrameSymbolDataset& d,
                                   const std::vector<std::size_t>& idx, const LabelWeights& w) {
  if (idx.empty()) throw UndefinedMetricError("perception evaluation on an empty index set");
  PerceptionEval e;
  double loss = 0, mae = 0, acc = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t at = 0; at < idx.size(); at += kChunk) {
    const std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                        idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), at + kChunk)));
    std::vector<const FrameStack*> stacks;
    for (std::size_t i : part) stacks.push_back(&d.frames[i]);
    const auto targets = make_targets<S>(d, part, w);
    Tape<S> tape;
    Binding<S> bind(tape, false);
    const auto out = perception_forward(p, c, bind, tape.constant(frames_tensor<S>(stacks)));
    const auto l = loss_cnn(out, targets, w.psi);
    const double m = static_cast<double>(part.size());
    loss += static_cast<double>(l.total.value().item()) * m;
    mae += coordinate_mae(clip01(out.coord_raw.value()), targets.coords, targets.exist) * m;
    acc += existence_accuracy(out.exist_prob.value(), targets.exist) * m;
  }
  const double n = static_cast<double>(idx.size());
  e.loss = loss / n;
  e.mae = mae / n;
  e.exist_acc = acc / n;
  return e;
}

/// Minibatch Adam on L_cnn over the training split. Returns one row per
/// epoch; `on_epoch` (if set) sees each row as it is produced.
template <typename S>
std::vector<EpochStats> pretrain(PerceptionParams<S>& p, const PerceptionConfig& c, const FrameSymbolDataset& d,
                                 const LabelWeights& w, const PretrainConfig& cfg,
                                 const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (d.train.empty() || d.test.empty()) throw DegenerateDataError("pretraining needs non-empty train and test splits");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (c.objects != d.objects() || c.frame_stack != d.stack() || c.frame_size != d.env.frame_size) {
    throw ConfigError("perception config does not match the dataset (objects/frames/frame size)");
  }
  Adam<S> opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng = Rng(cfg.seed).split(0x9e7);
  std::vector<EpochStats> curve;
  std::vector<std::size_t> order = d.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double running = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), at + cfg.batch)));
      std::vector<const FrameStack*> stacks;
      for (std::size_t i : batch) stacks.push_back(&d.frames[i]);
      const auto targets = make_targets<S>(d, batch, w);
      Tape<S> tape;
      Binding<S> bind(tape);
      const auto out = perception_forward(p, c, bind, tape.constant(frames_tensor<S>(stacks)));
      const auto l = loss_cnn(out, targets, w.psi);
      const double value = static_cast<double>(l.total.value().item());
      if (!std::isfinite(value)) {
        throw NumericError("pretraining diverged: L_cnn is " + std::to_string(value) + " at epoch " +
                           std::to_string(epoch) + ", batch starting at " + std::to_string(at) +
                           " (L_exist " + std::to_string(double(l.exist.value().item())) + ", L_coor " +
                           std::to_string(double(l.coor.value().item())) + ", L_size " +
                           std::to_string(double(l.size.value().item())) + ")");
      }
      running += value * static_cast<double>(batch.size());
      tape.backward(l.total);
      std::vector<GradEntry<S>> grads;
      collect_grads(p, bind, "", grads);
      opt.step(grads);
    }
    EpochStats s;
    s.epoch = epoch;
    s.train_loss = running / static_cast<double>(order.size());
    const auto e = evaluate_perception(p, c, d, d.test, w);
    s.test_loss = e.loss;
    s.test_mae = e.mae;
    s.test_exist_acc = e.exist_acc;
    curve.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return curve;
}

inline std::string curve_csv(const std::vector<EpochStats>& curve) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,test_loss,test_mae,test_exist_acc\n";
  for (const auto& s : curve)
    os << s.epoch << ',' << s.train_loss << ',' << s.test_loss << ',' << s.test_mae << ',' << s.test_exist_acc << '\n';
  return os.str();
}

inline nlohmann::json perception_config_json(const PerceptionConfig& c) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& l : c.convs)
    convs.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"pad", l.pad}});
  return {{"frame_size", c.frame_size}, {"frame_stack", c.frame_stack}, {"objects", c.objects},
          {"convs", convs},             {"hidden", c.hidden},           {"head_hidden", c.head_hidden}};
}

inline PerceptionConfig perception_config_from_json(const nlohmann::json& j) {
  PerceptionConfig c;
  c.frame_size = j.at("frame_size").get<std::size_t>();
  c.frame_stack = j.at("frame_stack").get<std::size_t>();
  c.objects = j.at("objects").get<std::size_t>();
  c.convs.clear();
  for (const auto& l : j.at("convs"))
    c.convs.push_back({l.at("channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                       l.at("stride").get<std::size_t>(), l.at("pad").get<std::size_t>()});
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.validate();
  return c;
}

inline constexpr const char* kPerceptionMagic = "pcp-v1";

template <typename S>
void save_perception(const std::string& path, const PerceptionConfig& c, const PerceptionParams<S>& p) {
  TensorArchive ar;
  ar.metadata = nlohmann::json{{"config", perception_config_json(c)}}.dump();
  archive_params(ar, "", p);
  save_archive(path, kPerceptionMagic, ar);
}

template <typename S>
std::pair<PerceptionConfig, PerceptionParams<S>> load_perception(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw ArtifactError("no perception checkpoint at " + path + "; run `insight pretrain` first");
  }
  const auto ar = load_archive(path, kPerceptionMagic);
  PerceptionConfig c;
  try {
    c = perception_config_from_json(nlohmann::json::parse(ar.metadata).at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint metadata: " + e.what());
  }
  Rng rng(0);
  PerceptionParams<S> p(c, rng);
  restore_params(ar, "", p);
  return {c, std::move(p)};
}

}  // namespace insight
