#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "insight/core/error.hpp"

namespace insight {

enum class EnvId { MiniPong, MiniCrossing };

inline std::string to_string(EnvId id) { return id == EnvId::MiniPong ? "MiniPong" : "MiniCrossing"; }

inline EnvId parse_env_id(const std::string& s) {
  if (s == "MiniPong") return EnvId::MiniPong;
  if (s == "MiniCrossing") return EnvId::MiniCrossing;
  throw ConfigError("unknown environment '" + s + "' (expected MiniPong or MiniCrossing)");
}

struct EnvConfig {
  EnvId env_id = EnvId::MiniPong;
  std::size_t frame_size = 32;
  std::size_t frame_stack = 4;
  /// Object slots C; 0 selects the environment's natural count.
  std::size_t max_objects = 0;
  std::uint64_t seed = 0;
  /// Episode step cap; 0 selects the environment default.
  std::size_t max_steps = 0;
  /// MiniPong: a game ends when either side reaches this many points.
  int points_to_win = 5;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

/// Per-frame object labels. Coordinates are rectangle centres and sizes are
/// rectangle extents, both divided by the frame size; origin upper-left,
/// y pointing down. Entries of absent objects are zero placeholders.
struct SymbolRecord {
  std::vector<std::uint8_t> exist;
  std::vector<std::array<double, 2>> coords;  // (x, y)
  std::vector<std::array<double, 2>> sizes;   // (w, h)

  SymbolRecord() = default;
  explicit SymbolRecord(std::size_t objects) : exist(objects, 0), coords(objects, {0.0, 0.0}), sizes(objects, {0.0, 0.0}) {}

  std::size_t objects() const noexcept { return exist.size(); }
  friend bool operator==(const SymbolRecord&, const SymbolRecord&) = default;
};

/// k consecutive grayscale frames, oldest first, 8-bit intensities.
struct FrameStack {
  std::size_t frames = 0;
  std::size_t size = 0;
  std::vector<std::uint8_t> pixels;  // frames × size × size

  std::size_t plane() const noexcept { return size * size; }
  std::uint8_t at(std::size_t f, std::size_t y, std::size_t x) const { return pixels[f * plane() + y * size + x]; }
  /// Intensity in [0,1].
  double value(std::size_t f, std::size_t y, std::size_t x) const { return at(f, y, x) / 255.0; }
  friend bool operator==(const FrameStack&, const FrameStack&) = default;
};

struct Observation {
  FrameStack frames;
  std::vector<SymbolRecord> symbols;  // one per stacked frame, oldest first
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  bool done() const noexcept { return terminated || truncated; }
};

}  // namespace insight
