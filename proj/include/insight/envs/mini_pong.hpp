#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "insight/envs/env.hpp"

namespace insight {

/// Two-paddle pong on a 16×16 cell board. The agent owns the right paddle,
/// a scripted opponent the left one. The ball moves one cell per step in x
/// and y, reflects off the top and bottom walls, and bounces off a paddle
/// that covers its row when it is about to enter the paddle column. Hitting
/// with the top (bottom) paddle cell sends it upward (downward).
///
/// Objects: 0 ball, 1 agent paddle, 2 opponent paddle.
class MiniPong final : public Environment {
 public:
  static constexpr int kPaddle = 3;
  static constexpr std::size_t kNaturalObjects = 3;
  static constexpr std::size_t kDefaultMaxSteps = 1000;

  struct State {
    int agent_y = 0;  // top cell of the paddle
    int opponent_y = 0;
    int ball_x = 0, ball_y = 0;
    int vx = 1, vy = 1;
    int agent_score = 0, opponent_score = 0;
  };

  explicit MiniPong(EnvConfig config) : Environment(normalise(config)) {}

  std::size_t action_count() const override { return 3; }
  std::vector<std::string> action_names() const override { return {"noop", "up", "down"}; }
  std::vector<std::string> object_names() const override {
    std::vector<std::string> names{"ball", "agent", "opponent"};
    for (std::size_t j = names.size(); j < objects(); ++j) names.push_back("unused" + std::to_string(j));
    return names;
  }

  const State& state() const noexcept { return state_; }
  /// Test hook: overwrite the game state between steps.
  void set_state(const State& s) { state_ = s; }

 protected:
  void reset_state() override {
    state_ = State{};
    state_.agent_y = state_.opponent_y = (kGrid - kPaddle) / 2;
    serve();
  }

  double advance(std::size_t action) override {
    constexpr int g = static_cast<int>(kGrid);
    State& s = state_;
    const int move = action == 1 ? -1 : action == 2 ? 1 : 0;
    s.agent_y = std::clamp(s.agent_y + move, 0, g - kPaddle);

    // The opponent is capped at half the ball's vertical speed.
    if (steps() % 2 == 0) {
      const int target = s.ball_y - kPaddle / 2;
      s.opponent_y = std::clamp(s.opponent_y + (target > s.opponent_y) - (target < s.opponent_y), 0, g - kPaddle);
    }

    double reward = 0.0;
    const int next_x = s.ball_x + s.vx;
    if (next_x == g - 1) {
      if (!bounce(s.agent_y)) {
        ++s.opponent_score;
        serve();
        return -1.0;
      }
    } else if (next_x == 0) {
      if (!bounce(s.opponent_y)) {
        ++s.agent_score;
        serve();
        return 1.0;
      }
    }
    s.ball_x += s.vx;
    s.ball_y += s.vy;
    if (s.ball_y < 0) {
      s.ball_y = -s.ball_y;
      s.vy = 1;
    } else if (s.ball_y > g - 1) {
      s.ball_y = 2 * (g - 1) - s.ball_y;
      s.vy = -1;
    }
    return reward;
  }

  bool terminated() const override {
    return state_.agent_score >= config().points_to_win || state_.opponent_score >= config().points_to_win;
  }

  std::vector<Box> layout() const override {
    std::vector<Box> boxes(objects(), Box{false});
    boxes[0] = Box{true, double(state_.ball_x), double(state_.ball_y), 1, 1, 255};
    boxes[1] = Box{true, double(kGrid - 1), double(state_.agent_y), 1, double(kPaddle), 170};
    boxes[2] = Box{true, 0, double(state_.opponent_y), 1, double(kPaddle), 100};
    return boxes;
  }

 private:
  static EnvConfig normalise(EnvConfig c) {
    validate_common(c);
    if (c.max_objects == 0) c.max_objects = kNaturalObjects;
    if (c.max_objects < kNaturalObjects) {
      throw ConfigError("MiniPong needs at least 3 object slots, got " + std::to_string(c.max_objects));
    }
    if (c.max_steps == 0) c.max_steps = kDefaultMaxSteps;
    if (c.points_to_win < 1) throw ConfigError("points_to_win must be positive");
    return c;
  }

  /// Reflects the ball off a paddle whose top cell is `paddle_y` if the
  /// paddle covers the ball's row.
  bool bounce(int paddle_y) {
    State& s = state_;
    const int offset = s.ball_y - paddle_y;
    if (offset < 0 || offset >= kPaddle) return false;
    s.vx = -s.vx;
    if (offset == 0) s.vy = -1;
    if (offset == kPaddle - 1) s.vy = 1;
    return true;
  }

  void serve() {
    State& s = state_;
    s.ball_x = static_cast<int>(kGrid) / 2;
    s.ball_y = 2 + static_cast<int>(rng().below(kGrid - 4));
    s.vx = rng().bernoulli(0.5) ? 1 : -1;
    s.vy = rng().bernoulli(0.5) ? 1 : -1;
  }

  State state_;
};

}  // namespace insight
