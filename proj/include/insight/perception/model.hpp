#pragma once

#include <string>
#include <vector>

#include "insight/core/distributions.hpp"
#include "insight/core/ops.hpp"
#include "insight/core/params.hpp"
#include "insight/envs/types.hpp"

namespace insight {

struct ConvSpec {
  std::size_t channels;
  std::size_t kernel;
  std::size_t stride;
  std::size_t pad;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Encoder (convs, linear, layer norm) plus existence, coordinate and size
/// heads. Head widths follow from C objects and K stacked frames:
/// existence C*K, coordinates 2*C*K, sizes 2*C (current frame only).
struct PerceptionConfig {
  std::size_t frame_size = 32;
  std::size_t frame_stack = 4;
  std::size_t objects = 3;
  std::vector<ConvSpec> convs{{8, 5, 2, 2}, {16, 5, 2, 2}, {16, 5, 1, 2}};
  std::size_t hidden = 128;
  std::size_t head_hidden = 64;

  /// Full-width encoder for 84×84 input: three 5×5 convs with 32/64/64
  /// channels, strides 2/2/1, hidden width 2048.
  static PerceptionConfig wide(std::size_t objects, std::size_t frame_stack) {
    PerceptionConfig c;
    c.frame_size = 84;
    c.frame_stack = frame_stack;
    c.objects = objects;
    c.convs = {{32, 5, 2, 2}, {64, 5, 2, 2}, {64, 5, 1, 2}};
    c.hidden = 2048;
    c.head_hidden = 512;
    return c;
  }

  std::size_t exist_dim() const { return objects * frame_stack; }
  std::size_t coord_dim() const { return 2 * objects * frame_stack; }
  std::size_t size_dim() const { return 2 * objects; }

  /// Channels × height × width after the last conv.
  std::size_t flat_dim() const {
    std::size_t c = frame_stack, s = frame_size;
    for (const auto& l : convs) {
      s = (s + 2 * l.pad - l.kernel) / l.stride + 1;
      c = l.channels;
    }
    return c * s * s;
  }

  void validate() const {
    if (frame_size < 16) throw ConfigError("perception frame_size must be at least 16");
    if (frame_stack < 1 || objects < 1) throw ConfigError("perception needs at least one frame and one object");
    if (hidden < 1 || head_hidden < 1) throw ConfigError("perception widths must be positive");
    std::size_t s = frame_size;
    for (const auto& l : convs) {
      if (l.channels < 1 || l.kernel < 1 || l.stride < 1) throw ConfigError("conv layer with zero extent");
      if (s + 2 * l.pad < l.kernel) throw ConfigError("conv kernel larger than its padded input");
      s = (s + 2 * l.pad - l.kernel) / l.stride + 1;
    }
  }

  friend bool operator==(const PerceptionConfig&, const PerceptionConfig&) = default;
};

template <typename S>
struct Dense {
  Tensor<S> w, b;  // w [out×in]

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Rng& rng) : w(Shape{out, in}), b(Shape{out}) {
    init_uniform_fan_in(w, in, rng);
    init_uniform_fan_in(b, in, rng);
  }
  Var<S> operator()(Binding<S>& bind, const Var<S>& x) const { return ad::linear(x, bind(w), bind(b)); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

/// Linear -> ReLU -> Linear.
template <typename S>
struct MlpHead {
  Dense<S> l1, l2;

  MlpHead() = default;
  MlpHead(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) : l1(in, hidden, rng), l2(hidden, out, rng) {}
  Var<S> operator()(Binding<S>& bind, const Var<S>& x) const { return l2(bind, ad::relu(l1(bind, x))); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    l1.visit(prefix + ".l1", f);
    l2.visit(prefix + ".l2", f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    l1.visit(prefix + ".l1", f);
    l2.visit(prefix + ".l2", f);
  }
};

template <typename S>
struct PerceptionParams {
  std::vector<Tensor<S>> conv_w, conv_b;
  Dense<S> fc;
  Tensor<S> ln_gain, ln_bias;
  MlpHead<S> exist, coord, size;

  PerceptionParams() = default;

  PerceptionParams(const PerceptionConfig& c, Rng& rng) {
    c.validate();
    std::size_t in = c.frame_stack;
    for (const auto& l : c.convs) {
      conv_w.emplace_back(Shape{l.channels, in, l.kernel, l.kernel});
      conv_b.emplace_back(Shape{l.channels});
      init_uniform_fan_in(conv_w.back(), in * l.kernel * l.kernel, rng);
      init_uniform_fan_in(conv_b.back(), in * l.kernel * l.kernel, rng);
      in = l.channels;
    }
    fc = Dense<S>(c.flat_dim(), c.hidden, rng);
    ln_gain = Tensor<S>(Shape{c.hidden}, S(1));
    ln_bias = Tensor<S>(Shape{c.hidden});
    exist = MlpHead<S>(c.hidden, c.head_hidden, c.exist_dim(), rng);
    coord = MlpHead<S>(c.hidden, c.head_hidden, c.coord_dim(), rng);
    size = MlpHead<S>(c.hidden, c.head_hidden, c.size_dim(), rng);
  }

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      f("conv" + std::to_string(i) + ".w", conv_w[i]);
      f("conv" + std::to_string(i) + ".b", conv_b[i]);
    }
    fc.visit("fc", f);
    f("ln.gain", ln_gain);
    f("ln.bias", ln_bias);
    exist.visit("exist", f);
    coord.visit("coord", f);
    size.visit("size", f);
  }
  template <typename F>
  void visit(F&& f) const {
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      f("conv" + std::to_string(i) + ".w", conv_w[i]);
      f("conv" + std::to_string(i) + ".b", conv_b[i]);
    }
    fc.visit("fc", f);
    f("ln.gain", ln_gain);
    f("ln.bias", ln_bias);
    exist.visit("exist", f);
    coord.visit("coord", f);
    size.visit("size", f);
  }

  template <typename To>
  PerceptionParams<To> cast() const {
    PerceptionParams<To> out;
    for (const auto& t : conv_w) out.conv_w.push_back(t.template cast<To>());
    for (const auto& t : conv_b) out.conv_b.push_back(t.template cast<To>());
    out.fc = {fc.w.template cast<To>(), fc.b.template cast<To>()};
    out.ln_gain = ln_gain.template cast<To>();
    out.ln_bias = ln_bias.template cast<To>();
    const auto head = [](const MlpHead<S>& h) {
      MlpHead<To> o;
      o.l1 = {h.l1.w.template cast<To>(), h.l1.b.template cast<To>()};
      o.l2 = {h.l2.w.template cast<To>(), h.l2.b.template cast<To>()};
      return o;
    };
    out.exist = head(exist);
    out.coord = head(coord);
    out.size = head(size);
    return out;
  }
};

/// Network outputs on the tape, batch-major. Coordinates and sizes are the
/// raw linear outputs; `clip01` of them is the exported prediction.
template <typename S>
struct PerceptionVars {
  Var<S> hidden;      // [B×H]
  Var<S> exist_prob;  // [B×C*K]
  Var<S> coord_raw;   // [B×2CK]
  Var<S> size_raw;    // [B×2C]
};

/// Stacks frame stacks into a [B×K×S×S] tensor of intensities in [0,1].
template <typename S>
Tensor<S> frames_tensor(const std::vector<const FrameStack*>& stacks) {
  if (stacks.empty()) throw DimensionError("frames_tensor: empty batch");
  const auto& f0 = *stacks.front();
  Tensor<S> out(Shape{stacks.size(), f0.frames, f0.size, f0.size});
  const std::size_t per = f0.frames * f0.plane();
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& f = *stacks[i];
    if (f.frames != f0.frames || f.size != f0.size) throw DimensionError("frames_tensor: ragged batch");
    for (std::size_t k = 0; k < per; ++k) out[i * per + k] = static_cast<S>(f.pixels[k]) / S(255);
  }
  return out;
}

template <typename S>
PerceptionVars<S> perception_forward(const PerceptionParams<S>& p, const PerceptionConfig& c, Binding<S>& bind,
                                     const Var<S>& frames) {
  const Shape want{frames.shape().empty() ? 0 : frames.shape()[0], c.frame_stack, c.frame_size, c.frame_size};
  require_shape(frames.shape(), want, "perception input");
  if (p.conv_w.size() != c.convs.size()) throw DimensionError("perception params do not match the conv config");
  Var<S> x = frames;
  for (std::size_t i = 0; i < c.convs.size(); ++i) {
    x = ad::relu(ad::conv2d(x, bind(p.conv_w[i]), bind(p.conv_b[i]), c.convs[i].stride, c.convs[i].pad));
  }
  x = ad::reshape(x, Shape{want[0], c.flat_dim()});
  Var<S> h = ad::layer_norm(ad::relu(p.fc(bind, x)), bind(p.ln_gain), bind(p.ln_bias));
  PerceptionVars<S> out;
  out.hidden = h;
  out.exist_prob = ad::sigmoid(p.exist(bind, h));
  out.coord_raw = p.coord(bind, h);
  out.size_raw = p.size(bind, h);
  return out;
}

template <typename S>
struct PerceptionOutput {
  Tensor<S> hidden;      // [B×H]
  Tensor<S> exist_prob;  // [B×C*K]
  Tensor<S> coords;      // [B×2CK], clipped to [0,1]
  Tensor<S> sizes;       // [B×2C], clipped to [0,1]
};

/// Inference without gradients.
template <typename S>
PerceptionOutput<S> perceive(const PerceptionParams<S>& p, const PerceptionConfig& c, const Tensor<S>& frames) {
  Tape<S> tape;
  Binding<S> bind(tape, false);
  const auto v = perception_forward(p, c, bind, tape.constant(frames));
  return {v.hidden.value(), v.exist_prob.value(), clip01(v.coord_raw.value()), clip01(v.size_raw.value())};
}

/// Coordinates with entries of objects predicted absent (p < 0.5) zeroed.
template <typename S>
Tensor<S> mask_coords(const Tensor<S>& coords, const Tensor<S>& exist_prob) {
  require_shape(Shape{exist_prob.size() * 2}, Shape{coords.size()}, "mask_coords");
  Tensor<S> out = coords;
  for (std::size_t i = 0; i < exist_prob.size(); ++i)
    if (exist_prob[i] < S(0.5)) out[2 * i] = out[2 * i + 1] = S(0);
  return out;
}

}  // namespace insight
