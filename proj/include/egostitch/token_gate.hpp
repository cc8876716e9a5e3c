#pragma once

// Pixel mask -> tokenizer grid -> additive attention bias -> masked softmax.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "egostitch/core.hpp"
#include "egostitch/ingest.hpp"

namespace egostitch {

struct ResizeOp {
  int height = 0;
  int width = 0;
};
struct CropOp {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};
struct PadOp {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
};
using GeomOp = std::variant<ResizeOp, CropOp, PadOp>;

/// Ordered resize/crop/pad chain from a source raster to the tokenizer input.
struct GeomTransform {
  int src_height = 0;
  int src_width = 0;
  std::vector<GeomOp> ops;

  static GeomTransform identity(int height, int width) { return {height, width, {}}; }

  /// Non-uniform resize straight to the target size.
  static GeomTransform stretch(int height, int width, int out_height, int out_width) {
    return {height, width, {ResizeOp{out_height, out_width}}};
  }

  /// Aspect-preserving resize so the image fits, then centred zero padding.
  static GeomTransform fit_and_pad(int height, int width, int out_height, int out_width) {
    const double s = std::min(static_cast<double>(out_height) / height, static_cast<double>(out_width) / width);
    const int rh = std::clamp(static_cast<int>(std::lround(height * s)), 1, out_height);
    const int rw = std::clamp(static_cast<int>(std::lround(width * s)), 1, out_width);
    const int ph = out_height - rh;
    const int pw = out_width - rw;
    GeomTransform tf{height, width, {ResizeOp{rh, rw}}};
    if (ph > 0 || pw > 0) tf.ops.emplace_back(PadOp{ph / 2, ph - ph / 2, pw / 2, pw - pw / 2});
    return tf;
  }

  /// Aspect-preserving resize so the image covers the target, then centre crop.
  static GeomTransform fill_and_crop(int height, int width, int out_height, int out_width) {
    const double s = std::max(static_cast<double>(out_height) / height, static_cast<double>(out_width) / width);
    const int rh = std::max(out_height, static_cast<int>(std::lround(height * s)));
    const int rw = std::max(out_width, static_cast<int>(std::lround(width * s)));
    GeomTransform tf{height, width, {ResizeOp{rh, rw}}};
    if (rh > out_height || rw > out_width) {
      tf.ops.emplace_back(CropOp{(rh - out_height) / 2, (rw - out_width) / 2, out_height, out_width});
    }
    return tf;
  }

  /// Output (height, width); throws if any step is invalid.
  std::pair<int, int> output_size() const {
    if (src_height <= 0 || src_width <= 0) throw ConsistencyError("transform: non-positive source size");
    int h = src_height;
    int w = src_width;
    for (const auto& op : ops) {
      if (const auto* r = std::get_if<ResizeOp>(&op)) {
        if (r->height <= 0 || r->width <= 0) throw ConsistencyError("transform: resize to non-positive size");
        h = r->height;
        w = r->width;
      } else if (const auto* c = std::get_if<CropOp>(&op)) {
        if (c->top < 0 || c->left < 0 || c->height <= 0 || c->width <= 0 || c->top + c->height > h ||
            c->left + c->width > w) {
          throw ConsistencyError("transform: crop window outside the raster");
        }
        h = c->height;
        w = c->width;
      } else {
        const auto& p = std::get<PadOp>(op);
        if (p.top < 0 || p.bottom < 0 || p.left < 0 || p.right < 0) throw ConsistencyError("transform: negative padding");
        h += p.top + p.bottom;
        w += p.left + p.right;
      }
    }
    return {h, w};
  }
};

/// Nearest-neighbour source index for destination index `dst` when resizing
/// `src_size` samples to `dst_size` (pixel-centre alignment, integer exact).
inline int nearest_source_index(int dst, int src_size, int dst_size) {
  const long long s = (2LL * dst + 1) * src_size / (2LL * dst_size);
  return static_cast<int>(std::min<long long>(s, src_size - 1));
}

inline BinaryMask apply_op(const BinaryMask& in, const GeomOp& op) {
  if (const auto* r = std::get_if<ResizeOp>(&op)) {
    BinaryMask out(r->width, r->height);
    std::vector<int> xs(r->width);
    for (int x = 0; x < r->width; ++x) xs[x] = nearest_source_index(x, in.width(), r->width);
    for (int y = 0; y < r->height; ++y) {
      const int sy = nearest_source_index(y, in.height(), r->height);
      for (int x = 0; x < r->width; ++x) out.set(x, y, in.at(xs[x], sy));
    }
    return out;
  }
  if (const auto* c = std::get_if<CropOp>(&op)) {
    BinaryMask out(c->width, c->height);
    for (int y = 0; y < c->height; ++y) {
      for (int x = 0; x < c->width; ++x) out.set(x, y, in.at(x + c->left, y + c->top));
    }
    return out;
  }
  const auto& p = std::get<PadOp>(op);
  // padding is always static (0)
  BinaryMask out(in.width() + p.left + p.right, in.height() + p.top + p.bottom);
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) out.set(x + p.left, y + p.top, in.at(x, y));
  }
  return out;
}

inline BinaryMask transfer_mask(const BinaryMask& mask, const GeomTransform& tf) {
  if (mask.width() != tf.src_width || mask.height() != tf.src_height) {
    throw ConsistencyError("transform expects a " + std::to_string(tf.src_width) + "x" + std::to_string(tf.src_height) +
                           " raster, got " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()));
  }
  tf.output_size();
  BinaryMask cur = mask;
  for (const auto& op : tf.ops) cur = apply_op(cur, op);
  return cur;
}

/// Token grid of ceil(H'/P) x ceil(W'/P) cells; border cells may be partial.
struct TokenMask {
  int patch = 1;
  int input_height = 0;
  int input_width = 0;
  BinaryMask grid;  // grid_w x grid_h, token (u, v) at column u, row v

  int grid_height() const { return grid.height(); }
  int grid_width() const { return grid.width(); }
  std::size_t token_count() const { return grid.size(); }
  bool at(int u, int v) const { return grid.at(u, v); }
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

/// A token is dynamic iff any pixel of its cell is dynamic.
inline TokenMask pool_to_tokens(const BinaryMask& mask, int patch) {
  if (patch < 1) throw ConfigError("patch size must be >= 1");
  TokenMask tm;
  tm.patch = patch;
  tm.input_height = mask.height();
  tm.input_width = mask.width();
  tm.grid = BinaryMask(ceil_div(mask.width(), patch), ceil_div(mask.height(), patch));
  for (int y = 0; y < mask.height(); ++y) {
    const int v = y / patch;
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(x, y)) tm.grid.set(x / patch, v);
    }
  }
  return tm;
}

inline constexpr double kMaskedBias = -std::numeric_limits<double>::infinity();

/// Additive key bias in row-major token order: 0 for static, -inf for dynamic.
inline std::vector<double> attention_bias(const TokenMask& m) {
  std::vector<double> bias(m.token_count());
  for (std::size_t j = 0; j < bias.size(); ++j) bias[j] = m.grid.test(j) ? kMaskedBias : 0.0;
  return bias;
}

/// softmax(logits + bias). Keys whose biased logit is -inf receive exactly 0.
inline std::vector<double> masked_softmax(std::span<const double> logits, std::span<const double> bias) {
  if (logits.size() != bias.size()) throw ConsistencyError("masked_softmax: logits and bias differ in length");
  std::vector<double> out(logits.size(), 0.0);
  double max_logit = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (!std::isfinite(logits[j])) throw ValidationError("masked_softmax: logits must be finite");
    if (std::isnan(bias[j]) || bias[j] == std::numeric_limits<double>::infinity()) {
      throw ValidationError("masked_softmax: bias must be finite or -inf");
    }
    if (bias[j] == kMaskedBias) continue;
    const double a = logits[j] + bias[j];
    if (!any || a > max_logit) max_logit = a;
    any = true;
  }
  if (!any) throw DegenerateRowError("masked_softmax: every key is masked");
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (bias[j] == kMaskedBias) continue;
    out[j] = std::exp(logits[j] + bias[j] - max_logit);
    sum += out[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (bias[j] != kMaskedBias) out[j] /= sum;
  }
  return out;
}

// --- export -----------------------------------------------------------------

inline Json token_sidecar(const TokenMask& m) {
  return {{"input_height", m.input_height},
          {"input_width", m.input_width},
          {"patch", m.patch},
          {"grid_h", m.grid_height()},
          {"grid_w", m.grid_width()}};
}

/// One value per line; masked entries are written as "-inf".
inline std::string encode_bias(std::span<const double> bias) {
  std::string out;
  for (double b : bias) out += (b == kMaskedBias ? std::string("-inf") : format_number(b)) + '\n';
  return out;
}

inline std::vector<double> decode_bias(std::string_view text) {
  std::vector<double> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok == "-inf" ? kMaskedBias : detail::parse_double(tok, "bias"));
  return out;
}

}  // namespace egostitch
