#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "insight/envs/types.hpp"

namespace insight {

/// Axis-aligned rectangle in board cells; may extend past the board edge.
struct Box {
  bool present = true;
  double x = 0, y = 0;  // upper-left corner in cells
  double w = 1, h = 1;  // extent in cells
  std::uint8_t gray = 255;
};

struct RenderedFrame {
  std::vector<std::uint8_t> pixels;  // size × size
  SymbolRecord symbols;
};

/// Draws boxes in index order onto a black frame (later boxes occlude earlier
/// ones) and reports each box's drawn pixel rectangle as its symbol. A box is
/// present iff at least one of its pixels lands on the frame.
inline RenderedFrame render_boxes(std::span<const Box> boxes, std::size_t frame_size, std::size_t grid) {
  RenderedFrame out;
  out.pixels.assign(frame_size * frame_size, 0);
  out.symbols = SymbolRecord(boxes.size());
  const double scale = static_cast<double>(frame_size) / static_cast<double>(grid);
  const auto to_px = [&](double cell) {
    const double p = std::floor(cell * scale + 1e-9);
    return static_cast<long>(std::clamp(p, 0.0, static_cast<double>(frame_size)));
  };
  for (std::size_t j = 0; j < boxes.size(); ++j) {
    const Box& b = boxes[j];
    if (!b.present) continue;
    const long x0 = to_px(b.x), x1 = to_px(b.x + b.w);
    const long y0 = to_px(b.y), y1 = to_px(b.y + b.h);
    if (x1 <= x0 || y1 <= y0) continue;
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) out.pixels[static_cast<std::size_t>(y) * frame_size + static_cast<std::size_t>(x)] = b.gray;
    const double s = static_cast<double>(frame_size);
    out.symbols.exist[j] = 1;
    out.symbols.coords[j] = {(x0 + x1) / (2.0 * s), (y0 + y1) / (2.0 * s)};
    out.symbols.sizes[j] = {(x1 - x0) / s, (y1 - y0) / s};
  }
  return out;
}

}  // namespace insight
