// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace strata {

void ScaleSpec::validate() const {
  if (height < 1 || width < 1 || fps < 1 || frames < 1) {
    throw GeometryError(detail::concat("invalid scale ", height, "x", width, " @", fps,
                                       "fps, ", frames, " frames: all extents must be >= 1"));
  }
}

std::size_t PatchGeometry::pixel_index(int patch, int local) const {
  const int px = patch % grid.w;
  const int py = (patch / grid.w) % grid.h;
  const int pt = patch / (grid.w * grid.h);
  const int lc = local % p_hw;
  const int lr = (local / p_hw) % p_hw;
  const int lf = local / (p_hw * p_hw);
  const std::size_t frame = static_cast<std::size_t>(pt * p_t + lf);
  const std::size_t row = static_cast<std::size_t>(py * p_hw + lr);
  const std::size_t col = static_cast<std::size_t>(px * p_hw + lc);
  return (frame * static_cast<std::size_t>(scale.height) + row) *
             static_cast<std::size_t>(scale.width) + col;
}

PatchGeometry patch_sizes(const ScaleSpec& scale, int k, int k_t) {
  scale.validate();
  if (k < 1 || k_t < 1) {
    throw GeometryError(detail::concat("patch counts must be >= 1 (k=", k, ", k_t=", k_t, ")"));
  }
  const int short_side = std::min(scale.height, scale.width);
  if (short_side % k != 0) {
    throw GeometryError(detail::concat("shorter side ", short_side, " of ", scale.height, "x",
                                       scale.width, " must be a multiple of k=", k));
  }
  PatchGeometry g;
  g.k = k;
  g.k_t = k_t;
  g.scale = scale;
  g.p_hw = short_side / k;
  if (scale.height % g.p_hw != 0 || scale.width % g.p_hw != 0) {
    throw GeometryError(detail::concat("height ", scale.height, " and width ", scale.width,
                                       " must both be multiples of the patch size ", g.p_hw));
  }
  if (scale.is_image()) {
    g.p_t = 1;
  } else {
    if (scale.fps % k_t != 0) {
      throw GeometryError(detail::concat("frame rate ", scale.fps, " must be a multiple of k_t=",
                                         k_t));
    }
    g.p_t = scale.fps / k_t;
    if (scale.frames % g.p_t != 0) {
      throw GeometryError(detail::concat("frame count ", scale.frames,
                                         " must be a multiple of the temporal patch size ", g.p_t));
    }
  }
  g.grid = {scale.frames / g.p_t, scale.height / g.p_hw, scale.width / g.p_hw};
  return g;
}

PatchGeometry geometry_for_grid(const ScaleSpec& target, const GridDims& grid, int k_t) {
  const int k = std::min(grid.h, grid.w);
  PatchGeometry g = patch_sizes(target, k, k_t);
  if (g.grid.h != grid.h || g.grid.w != grid.w) {
    throw GeometryError(detail::concat("target ", target.height, "x", target.width,
                                       " gives a ", g.grid.h, "x", g.grid.w,
                                       " patch grid but the latents are ", grid.h, "x", grid.w,
                                       "; height and width must be multiples of ",
                                       grid.h, " and ", grid.w, " in that ratio"));
  }
  if (g.grid.t != grid.t) {
    throw GeometryError(detail::concat("target has ", g.grid.t, " temporal segments but the "
                                       "latents have ", grid.t, "; frames must equal ", grid.t,
                                       " x ", g.p_t));
  }
  return g;
}

namespace {

double corner_aligned(int i, int count) {
  return count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
}

}  // namespace

PositionTable intra_patch_positions(const PatchGeometry& geom) {
  PositionTable out;
  out.reserve(static_cast<std::size_t>(geom.pixels_per_patch()));
  for (int f = 0; f < geom.p_t; ++f) {
    const double t = static_cast<double>(f + 1) / static_cast<double>(geom.p_t);
    for (int r = 0; r < geom.p_hw; ++r) {
      for (int c = 0; c < geom.p_hw; ++c) {
        Coord co;
        co.v = {t, corner_aligned(r, geom.p_hw), corner_aligned(c, geom.p_hw), 0.0};
        out.push_back(co);
      }
    }
  }
  return out;
}

PositionTable inter_patch_positions(const GridDims& grid) {
  const double short_side = static_cast<double>(std::min(grid.h, grid.w));
  const double y_span = grid.h / short_side;
  const double x_span = grid.w / short_side;
  PositionTable out;
  out.reserve(static_cast<std::size_t>(grid.patches()));
  for (int s = 0; s < grid.t; ++s) {
    const double t = static_cast<double>(s + 1) / static_cast<double>(grid.t);
    for (int r = 0; r < grid.h; ++r) {
      for (int c = 0; c < grid.w; ++c) {
        Coord co;
        co.v = {t, corner_aligned(r, grid.h) * y_span, corner_aligned(c, grid.w) * x_span, 0.0};
        out.push_back(co);
      }
    }
  }
  return out;
}

template <typename T>
RotaryTable<T> make_rotary_table(const PositionTable& positions, std::size_t head_dim,
                                 const RopeConfig& cfg) {
  if (head_dim == 0 || head_dim % (2 * kAxisCount) != 0) {
    throw ShapeError(detail::concat("rotary head width ", head_dim, " must be a multiple of ",
                                    2 * kAxisCount, " (2 x coordinate groups)"));
  }
  const std::size_t group = head_dim / kAxisCount;
  const std::size_t pairs = head_dim / 2;
  RotaryTable<T> table;
  table.tokens = positions.size();
  table.head_dim = head_dim;
  table.cos.resize(table.tokens * pairs);
  table.sin.resize(table.tokens * pairs);
  std::vector<double> freq(group / 2);
  for (std::size_t i = 0; i < freq.size(); ++i) {
    freq[i] = std::pow(cfg.base, -2.0 * static_cast<double>(i) / static_cast<double>(group));
  }
  for (std::size_t tok = 0; tok < table.tokens; ++tok) {
    for (std::size_t a = 0; a < kAxisCount; ++a) {
      const double coord = positions[tok].v[a] * cfg.coord_scale;
      for (std::size_t i = 0; i < freq.size(); ++i) {
        const std::size_t pair = a * (group / 2) + i;
        const double angle = coord * freq[i];
        table.cos[tok * pairs + pair] = static_cast<T>(std::cos(angle));
        table.sin[tok * pairs + pair] = static_cast<T>(std::sin(angle));
      }
    }
  }
  return table;
}

namespace {

// inverse == true rotates by the negated angle (the transpose).
template <typename T>
void rotate_into(const T* src, T* dst, std::size_t rows, std::size_t width,
                 const RotaryTable<T>& table, bool inverse, bool accumulate) {
  const std::size_t hd = table.head_dim;
  const std::size_t pairs = hd / 2;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* cs = table.cos.data() + r * pairs;
    const T* sn = table.sin.data() + r * pairs;
    for (std::size_t h = 0; h < width / hd; ++h) {
      const std::size_t off = r * width + h * hd;
      for (std::size_t p = 0; p < pairs; ++p) {
        const T a = src[off + 2 * p];
        const T b = src[off + 2 * p + 1];
        const T s = inverse ? -sn[p] : sn[p];
        const T ra = a * cs[p] - b * s;
        const T rb = a * s + b * cs[p];
        if (accumulate) {
          dst[off + 2 * p] += ra;
          dst[off + 2 * p + 1] += rb;
        } else {
          dst[off + 2 * p] = ra;
          dst[off + 2 * p + 1] = rb;
        }
      }
    }
  }
}

template <typename T>
void check_table(const Tensor<T>& x, const RotaryTable<T>& table) {
  STRATA_CHECK_SHAPE(x.rows() == table.tokens, "rope_rotate: ", x.rows(),
                     " rows but table covers ", table.tokens, " tokens");
  STRATA_CHECK_SHAPE(table.head_dim > 0 && x.cols() % table.head_dim == 0, "rope_rotate: width ",
                     x.cols(), " is not a multiple of head width ", table.head_dim);
}

}  // namespace

template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, const RotaryTable<T>& table) {
  check_table(x, table);
  Tensor<T> out(x.shape());
  rotate_into(x.data(), out.data(), x.rows(), x.cols(), table, false, false);
  return out;
}

template <typename T>
Var<T> rope_rotate(Var<T> x, const RotaryTable<T>& table) {
  Tensor<T> out = rope_rotate(x.value(), table);
  // The table is captured by value: callers often build it on the stack.
  return x.tape->emit(std::move(out), {x}, [x, table](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_slot(x)) {
      rotate_into(g.data(), gx->data(), g.rows(), g.cols(), table, true, true);
    }
  });
}

template RotaryTable<float> make_rotary_table(const PositionTable&, std::size_t,
                                              const RopeConfig&);
template RotaryTable<double> make_rotary_table(const PositionTable&, std::size_t,
                                               const RopeConfig&);
template Tensor<float> rope_rotate(const Tensor<float>&, const RotaryTable<float>&);
template Tensor<double> rope_rotate(const Tensor<double>&, const RotaryTable<double>&);
template Var<float> rope_rotate(Var<float>, const RotaryTable<float>&);
template Var<double> rope_rotate(Var<double>, const RotaryTable<double>&);

}  // namespace strata
