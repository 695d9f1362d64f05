#pragma once

#include <memory>

#include "insight/envs/mini_crossing.hpp"
#include "insight/envs/mini_pong.hpp"

namespace insight {

inline std::unique_ptr<Environment> make_env(const EnvConfig& config) {
  if (config.env_id == EnvId::MiniPong) return std::make_unique<MiniPong>(config);
  return std::make_unique<MiniCrossing>(config);
}

/// Config with environment defaults (object count, step cap) filled in.
inline EnvConfig resolve(const EnvConfig& config) { return make_env(config)->config(); }

}  // namespace insight
