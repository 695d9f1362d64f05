#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "insight/core/error.hpp"
#include "insight/envs/factory.hpp"

namespace insight {

struct ActionEffect {
  std::string name;
  std::string effect;
};

/// Concept grounding for one task: what the agent is trying to do, what its
/// actions do and how the policy inputs are named.
struct TaskDescription {
  std::string name;
  std::string goal;  // one or more paragraphs, blank-line separated
  std::vector<ActionEffect> actions;
  std::string coordinate_system;
  std::size_t frames = 4;
  /// Object names as they appear in variable names, in a readable order.
  std::vector<std::string> objects;
  std::string example_object;

  std::vector<std::string> action_names() const {
    std::vector<std::string> out;
    for (const auto& a : actions) out.push_back(a.name);
    return out;
  }

  /// Throws ContractError unless the description covers exactly `env_actions`.
  void check_actions(const std::vector<std::string>& env_actions) const {
    if (action_names() != env_actions) {
      throw ContractError("task description for " + name + " does not list the environment's actions");
    }
  }
};

namespace detail {

inline std::string count_word(std::size_t n) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  return n < std::size(words) ? words[n] : std::to_string(n);
}

inline std::string join_with_and(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += i + 1 == items.size() ? " and " : ", ";
    out += items[i];
  }
  return out;
}

}  // namespace detail

inline const char* kCoordinateSystem =
    "The task screen carries an xOy coordinate system whose origin is the upper left corner. The y axis points "
    "downwards and the x axis points to the right.";

/// "Frame K is the current frame. ..." for any stack depth.
inline std::string frames_statement(std::size_t k) {
  std::string out = "The agent sees the latest " + detail::count_word(k) +
                    " consecutive frames, and the coordinates of the objects in those frames form its input. Frame " +
                    std::to_string(k) + " is the current frame.";
  for (std::size_t back = 1; back < k; ++back) {
    out += " Frame " + std::to_string(k - back) + " was observed " + detail::count_word(back) +
           (back == 1 ? " step" : " steps") + " earlier.";
  }
  if (k > 1) out += " Comparing the same object across frames reveals how it moves.";
  return out;
}

inline TaskDescription mini_pong_task(const EnvConfig& env) {
  TaskDescription t;
  t.name = "MiniPong";
  t.goal =
      "The screen shows two paddles, one at the left edge and one at the right edge. The agent controls the right "
      "paddle and a scripted opponent controls the left one. A paddle can only move up or down, never sideways.\n\n"
      "As in table tennis, each side tries to send the ball past the other. The agent scores a point when the "
      "opponent misses the ball and loses one when it misses the ball itself. A game ends when either side reaches " +
      std::to_string(env.points_to_win) + " points.";
  t.actions = {{"noop", "keep the paddle where it is."},
               {"up", "move the paddle upward."},
               {"down", "move the paddle downward."}};
  t.coordinate_system = kCoordinateSystem;
  t.frames = env.frame_stack;
  t.objects = {"agent", "opponent", "ball"};
  t.example_object = "agent";
  return t;
}

inline TaskDescription mini_crossing_task(const EnvConfig& env, std::size_t lanes) {
  TaskDescription t;
  t.name = "MiniCrossing";
  t.goal =
      "The agent stands at the bottom of a road with " + detail::count_word(lanes) +
      (lanes == 1 ? " lane" : " lanes") +
      " of traffic and can only move vertically. Cars drive horizontally across their lanes, and each lane holds at "
      "most one car at a time.\n\n"
      "The agent earns a point every time it reaches the top of the screen, after which it starts again at the "
      "bottom. Being hit by a car sends it back to the start without a point.";
  t.actions = {{"noop", "stay in place."}, {"up", "move one row upward."}, {"down", "move one row downward."}};
  t.coordinate_system = kCoordinateSystem;
  t.frames = env.frame_stack;
  t.objects = {"agent"};
  for (std::size_t l = 0; l < lanes; ++l) t.objects.push_back("car" + std::to_string(l + 1));
  t.example_object = "agent";
  return t;
}

/// Description of the task behind `env`, checked against its action set.
inline TaskDescription task_description(const EnvConfig& env) {
  const auto e = make_env(env);
  TaskDescription t;
  switch (env.env_id) {
    case EnvId::MiniPong: t = mini_pong_task(env); break;
    case EnvId::MiniCrossing: t = mini_crossing_task(env, e->object_names().size() - 1); break;
  }
  // Padding slots of an oversized object budget are still inputs.
  for (const auto& o : e->object_names())
    if (std::find(t.objects.begin(), t.objects.end(), o) == t.objects.end()) t.objects.push_back(o);
  t.check_actions(e->action_names());
  return t;
}

}  // namespace insight
