#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "insight/core/rng.hpp"
#include "insight/envs/render.hpp"
#include "insight/envs/types.hpp"

namespace insight {

/// Common frame-stacking machinery; concrete games describe their objects
/// as boxes and advance their own state.
class Environment {
 public:
  static constexpr std::size_t kGrid = 16;

  explicit Environment(EnvConfig config) : config_(config) {}
  virtual ~Environment() = default;

  const EnvConfig& config() const noexcept { return config_; }
  std::size_t objects() const noexcept { return config_.max_objects; }

  virtual std::size_t action_count() const = 0;
  virtual std::vector<std::string> action_names() const = 0;
  /// One name per object slot, used for variable naming in prompts.
  virtual std::vector<std::string> object_names() const = 0;

  Observation reset(std::uint64_t seed) {
    rng_ = Rng(seed);
    steps_ = 0;
    reset_state();
    history_.clear();
    const RenderedFrame first = render();
    for (std::size_t i = 0; i < config_.frame_stack; ++i) history_.push_back(first);
    return observation();
  }

  Observation reset() { return reset(config_.seed); }

  StepResult step(std::size_t action) {
    if (action >= action_count()) {
      throw ContractError("action " + std::to_string(action) + " outside [0, " + std::to_string(action_count()) + ")");
    }
    StepResult result;
    result.reward = advance(action);
    ++steps_;
    result.terminated = terminated();
    result.truncated = !result.terminated && steps_ >= config_.max_steps;
    history_.pop_front();
    history_.push_back(render());
    result.observation = observation();
    return result;
  }

  /// Current frame and its symbols.
  RenderedFrame render() const {
    const auto boxes = layout();
    return render_boxes(boxes, config_.frame_size, kGrid);
  }

  std::size_t steps() const noexcept { return steps_; }

 protected:
  virtual void reset_state() = 0;
  /// Applies one action, returns the reward.
  virtual double advance(std::size_t action) = 0;
  virtual bool terminated() const = 0;
  /// Boxes in object-slot order; unused slots are not present.
  virtual std::vector<Box> layout() const = 0;

  Rng& rng() { return rng_; }

 private:
  Observation observation() const {
    Observation obs;
    obs.frames.frames = config_.frame_stack;
    obs.frames.size = config_.frame_size;
    obs.frames.pixels.reserve(config_.frame_stack * config_.frame_size * config_.frame_size);
    for (const auto& f : history_) {
      obs.frames.pixels.insert(obs.frames.pixels.end(), f.pixels.begin(), f.pixels.end());
      obs.symbols.push_back(f.symbols);
    }
    return obs;
  }

  EnvConfig config_;
  Rng rng_;
  std::size_t steps_ = 0;
  std::deque<RenderedFrame> history_;
};

inline void validate_common(const EnvConfig& c) {
  if (c.frame_size < 16) throw ConfigError("frame_size must be at least 16, got " + std::to_string(c.frame_size));
  if (c.frame_stack < 1) throw ConfigError("frame_stack must be at least 1");
}

}  // namespace insight
