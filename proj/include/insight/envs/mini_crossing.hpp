#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "insight/envs/env.hpp"

namespace insight {

/// Road crossing on a 16×16 cell board. The agent starts on the bottom row
/// and scores +1 on reaching the top row, after which it restarts at the
/// bottom. Each lane holds at most one car, two cells wide, that enters from
/// one edge on a seeded schedule, drives across and leaves. Touching a car
/// sends the agent back to the start. Lane 0 spawns cars ten times more often
/// than the others, so object presence is long-tailed.
///
/// Objects: 0 agent, 1..C-1 one car per lane (lane l on row 2 + 2l).
class MiniCrossing final : public Environment {
 public:
  static constexpr std::size_t kNaturalObjects = 8;
  static constexpr std::size_t kMaxLanes = 7;
  static constexpr std::size_t kDefaultMaxSteps = 200;
  static constexpr int kCarWidth = 2;
  static constexpr int kAgentColumn = 7;
  static constexpr double kFrequentSpawn = 0.1;
  static constexpr double kRareSpawn = 0.01;

  struct Car {
    bool present = false;
    int x = 0;  // left cell; may be partly off the board
  };

  struct State {
    int agent_y = 0;
    std::vector<Car> cars;
    int crossings = 0;
  };

  explicit MiniCrossing(EnvConfig config) : Environment(normalise(config)) {}

  std::size_t action_count() const override { return 3; }
  std::vector<std::string> action_names() const override { return {"noop", "up", "down"}; }
  std::vector<std::string> object_names() const override {
    std::vector<std::string> names{"agent"};
    for (std::size_t l = 0; l < lanes(); ++l) names.push_back("car" + std::to_string(l + 1));
    return names;
  }

  std::size_t lanes() const noexcept { return objects() - 1; }
  static int lane_row(std::size_t lane) { return 2 + 2 * static_cast<int>(lane); }
  static int lane_direction(std::size_t lane) { return lane % 2 == 0 ? 1 : -1; }
  /// Steps between moves of a lane's car.
  static std::size_t lane_period(std::size_t lane) { return 1 + lane % 2; }
  static double spawn_probability(std::size_t lane) { return lane == 0 ? kFrequentSpawn : kRareSpawn; }

  const State& state() const noexcept { return state_; }
  void set_state(const State& s) { state_ = s; }

 protected:
  void reset_state() override {
    constexpr int g = static_cast<int>(kGrid);
    state_ = State{};
    state_.agent_y = g - 1;
    state_.cars.assign(lanes(), Car{});
    for (std::size_t l = 0; l < lanes(); ++l) {
      if (rng().bernoulli(spawn_probability(l))) {
        state_.cars[l] = Car{true, static_cast<int>(rng().below(g - kCarWidth + 1))};
      }
    }
  }

  double advance(std::size_t action) override {
    constexpr int g = static_cast<int>(kGrid);
    State& s = state_;
    double reward = 0.0;
    const int move = action == 1 ? -1 : action == 2 ? 1 : 0;
    s.agent_y = std::clamp(s.agent_y + move, 0, g - 1);
    if (s.agent_y == 0) {
      reward = 1.0;
      ++s.crossings;
      s.agent_y = g - 1;
    }
    for (std::size_t l = 0; l < lanes(); ++l) {
      Car& car = s.cars[l];
      if (car.present) {
        if ((steps() + 1) % lane_period(l) == 0) car.x += lane_direction(l);
        if (car.x <= -kCarWidth || car.x >= g) car.present = false;
      } else if (rng().bernoulli(spawn_probability(l))) {
        car = Car{true, lane_direction(l) > 0 ? -1 : g - 1};
      }
    }
    for (std::size_t l = 0; l < lanes(); ++l) {
      const Car& car = s.cars[l];
      if (car.present && s.agent_y == lane_row(l) && kAgentColumn >= car.x && kAgentColumn < car.x + kCarWidth) {
        s.agent_y = g - 1;
      }
    }
    return reward;
  }

  bool terminated() const override { return false; }

  std::vector<Box> layout() const override {
    std::vector<Box> boxes(objects(), Box{false});
    boxes[0] = Box{true, double(kAgentColumn), double(state_.agent_y), 1, 1, 255};
    for (std::size_t l = 0; l < lanes(); ++l) {
      const Car& car = state_.cars[l];
      boxes[l + 1] = Box{car.present, double(car.x), double(lane_row(l)), double(kCarWidth), 1, 140};
    }
    return boxes;
  }

 private:
  static EnvConfig normalise(EnvConfig c) {
    validate_common(c);
    if (c.max_objects == 0) c.max_objects = kNaturalObjects;
    if (c.max_objects < 2 || c.max_objects > kMaxLanes + 1) {
      throw ConfigError("MiniCrossing supports 2..8 object slots, got " + std::to_string(c.max_objects));
    }
    if (c.max_steps == 0) c.max_steps = kDefaultMaxSteps;
    return c;
  }

  State state_;
};

}  // namespace insight
