// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/tokenizer.hpp"

#include <cmath>

namespace strata {

void TokenizerConfig::validate() const {
  STRATA_CHECK(k >= 1 && k_t >= 1, "tokenizer k and k_t must be >= 1");
  STRATA_CHECK(levels >= 1, "tokenizer needs at least one level");
  STRATA_CHECK(latent_dim >= 1, "latent_dim must be >= 1");
  for (auto [w, h, name] : {std::tuple{patch_width, patch_heads, "patch"},
                            std::tuple{ae_width, ae_heads, "ae"}}) {
    STRATA_CHECK(h >= 1 && w % h == 0, name, "_heads=", h, " must divide ", name, "_width=", w);
    STRATA_CHECK((w / h) % (2 * kAxisCount) == 0, name, " head width ", w / h,
                 " must be a multiple of ", 2 * kAxisCount);
  }
  STRATA_CHECK(patch_layers >= 1 && ae_layers >= 1, "layer counts must be >= 1");
  STRATA_CHECK(ffn_mult >= 1, "ffn_mult must be >= 1");
}

nlohmann::json to_json(const TokenizerConfig& c) {
  return {{"k", c.k},
          {"k_t", c.k_t},
          {"levels", c.levels},
          {"latent_dim", c.latent_dim},
          {"patch_width", c.patch_width},
          {"patch_heads", c.patch_heads},
          {"patch_layers", c.patch_layers},
          {"ae_width", c.ae_width},
          {"ae_heads", c.ae_heads},
          {"ae_layers", c.ae_layers},
          {"ffn_mult", c.ffn_mult},
          {"temporal_causal", c.temporal_causal},
          {"rope_base", c.rope.base},
          {"rope_coord_scale", c.rope.coord_scale}};
}

TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j) {
  TokenizerConfig c;
  c.k = j.value("k", c.k);
  c.k_t = j.value("k_t", c.k_t);
  c.levels = j.value("levels", c.levels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.patch_width = j.value("patch_width", c.patch_width);
  c.patch_heads = j.value("patch_heads", c.patch_heads);
  c.patch_layers = j.value("patch_layers", c.patch_layers);
  c.ae_width = j.value("ae_width", c.ae_width);
  c.ae_heads = j.value("ae_heads", c.ae_heads);
  c.ae_layers = j.value("ae_layers", c.ae_layers);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.temporal_causal = j.value("temporal_causal", c.temporal_causal);
  c.rope.base = j.value("rope_base", c.rope.base);
  c.rope.coord_scale = j.value("rope_coord_scale", c.rope.coord_scale);
  c.validate();
  return c;
}

TokenLayout budget_layout(const GridDims& grid, const LevelBudget& budget, DropMode mode) {
  STRATA_CHECK(budget.patches() == static_cast<std::size_t>(grid.patches()), "budget covers ",
               budget.patches(), " patches, grid has ", grid.patches());
  TokenLayout layout = latent_layout(grid, budget.max_active());
  if (mode == DropMode::Compacted) layout = compact(layout, budget).layout;
  return layout;
}

PositionTable latent_positions(const TokenLayout& layout, const GridDims& grid) {
  const PositionTable inter = inter_patch_positions(grid);
  PositionTable out;
  out.reserve(layout.size());
  for (const auto& t : layout) {
    Coord c = inter.at(t.patch);
    c.v[3] = static_cast<double>(t.level);
    out.push_back(c);
  }
  return out;
}

template <typename T>
Tensor<T> patch_pixels(const Sample& sample, const PatchGeometry& geom) {
  STRATA_CHECK_SHAPE(sample.scale == geom.scale, "sample scale does not match its geometry");
  const std::size_t P = static_cast<std::size_t>(geom.num_patches());
  const std::size_t Np = static_cast<std::size_t>(geom.pixels_per_patch());
  Tensor<T> out({P * Np, 3});
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t l = 0; l < Np; ++l) {
      const std::size_t src = geom.pixel_index(static_cast<int>(p), static_cast<int>(l)) * 3;
      for (std::size_t c = 0; c < 3; ++c) out.at(p * Np + l, c) = static_cast<T>(sample.pixels[src + c]);
    }
  }
  return out;
}

template <typename T>
Sample scatter_pixels(const Tensor<T>& rows, const PatchGeometry& geom) {
  const std::size_t P = static_cast<std::size_t>(geom.num_patches());
  const std::size_t Np = static_cast<std::size_t>(geom.pixels_per_patch());
  STRATA_CHECK_SHAPE(rows.rows() == P * Np && rows.cols() == 3, "scatter_pixels: got ",
                     to_string(rows.shape()), " for ", P * Np, " pixels");
  Sample out(geom.scale);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t l = 0; l < Np; ++l) {
      const std::size_t dst = geom.pixel_index(static_cast<int>(p), static_cast<int>(l)) * 3;
      for (std::size_t c = 0; c < 3; ++c) {
        out.pixels[dst + c] = std::clamp(static_cast<float>(rows.at(p * Np + l, c)), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

namespace {

// Per-patch token sequences [pixels of p ; latents of p] built by gathering
// from [pixel rows ; latent rows].
struct PatchSequences {
  std::vector<std::size_t> gather;        // sequence row -> source row
  std::vector<std::size_t> pixel_rows;    // (patch, local) -> sequence row
  std::vector<std::size_t> latent_rows;   // layout index -> sequence row
  std::vector<AttentionBlock> blocks;
  PositionTable positions;
};

enum class Flow { PixelToLatent, LatentToPixel };

PatchSequences patch_sequences(const TokenLayout& layout, const LevelBudget& budget,
                               const PatchGeometry& geom, Flow flow) {
  const std::size_t P = static_cast<std::size_t>(geom.num_patches());
  const std::size_t Np = static_cast<std::size_t>(geom.pixels_per_patch());
  std::vector<std::vector<std::size_t>> per_patch(P);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    STRATA_CHECK(layout[i].patch < P, "latent token of patch ", layout[i].patch, " but geometry has ",
                 P, " patches");
    per_patch[layout[i].patch].push_back(i);
  }
  const PositionTable intra = intra_patch_positions(geom);
  const std::uint32_t segs_per = static_cast<std::uint32_t>(geom.grid.h * geom.grid.w);

  PatchSequences s;
  s.pixel_rows.resize(P * Np);
  s.latent_rows.resize(layout.size());
  s.blocks.reserve(P);
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t begin = s.gather.size();
    TokenLayout local;
    local.reserve(Np + per_patch[p].size());
    for (std::size_t l = 0; l < Np; ++l) {
      s.pixel_rows[p * Np + l] = s.gather.size();
      s.gather.push_back(p * Np + l);
      s.positions.push_back(intra[l]);
      local.push_back({TokenKind::Pixel, static_cast<std::uint32_t>(p), 0,
                       static_cast<std::uint32_t>(p) / segs_per, static_cast<std::uint32_t>(l)});
    }
    for (std::size_t i : per_patch[p]) {
      s.latent_rows[i] = s.gather.size();
      s.gather.push_back(P * Np + i);
      Coord c;
      c.v[3] = static_cast<double>(layout[i].level);
      s.positions.push_back(c);
      local.push_back(layout[i]);
    }
    AttnMask mask = flow == Flow::PixelToLatent ? build_pla_mask(local, budget)
                                                : build_lpa_mask(local, budget);
    s.blocks.push_back({begin, begin, std::move(mask)});
  }
  return s;
}

double residual_scale(std::size_t layers) { return 1.0 / std::sqrt(2.0 * static_cast<double>(layers)); }

}  // namespace

template <typename T>
Tokenizer<T>::Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D1 = cfg_.patch_width, D2 = cfg_.ae_width, d = cfg_.latent_dim;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    return &store_.add(name, init_normal<T>({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
  };
  auto vec = [&](const std::string& name, std::size_t n, T fill) {
    return &store_.add(name, Tensor<T>({n}, fill));
  };
  const BlockShape patch_shape{D1, cfg_.patch_heads, D1 * cfg_.ffn_mult, false};
  const BlockShape ae_shape{D2, cfg_.ae_heads, D2 * cfg_.ffn_mult, false};

  pix_in_w_ = lin("patchify.pix_in.w", 3, D1, 4.0);
  pix_in_b_ = vec("patchify.pix_in.b", D1, T{0});
  queries_ = &store_.add("patchify.queries", init_normal<T>({cfg_.levels, D1}, rng, 1.0));
  for (std::size_t i = 0; i < cfg_.patch_layers; ++i) {
    patch_enc_.emplace_back(store_, "patchify.block" + std::to_string(i), patch_shape, rng,
                            residual_scale(cfg_.patch_layers));
  }
  patch_enc_norm_ = vec("patchify.norm", D1, T{1});
  enc_in_w_ = lin("encoder.in.w", D1, D2);
  enc_in_b_ = vec("encoder.in.b", D2, T{0});
  for (std::size_t i = 0; i < cfg_.ae_layers; ++i) {
    enc_.emplace_back(store_, "encoder.block" + std::to_string(i), ae_shape, rng,
                      residual_scale(cfg_.ae_layers));
  }
  enc_norm_ = vec("encoder.norm", D2, T{1});
  enc_out_w_ = lin("encoder.out.w", D2, d);
  enc_out_b_ = vec("encoder.out.b", d, T{0});

  dec_in_w_ = lin("decoder.in.w", d, D2);
  dec_in_b_ = vec("decoder.in.b", D2, T{0});
  for (std::size_t i = 0; i < cfg_.ae_layers; ++i) {
    dec_.emplace_back(store_, "decoder.block" + std::to_string(i), ae_shape, rng,
                      residual_scale(cfg_.ae_layers));
  }
  dec_norm_ = vec("decoder.norm", D2, T{1});
  dec_out_w_ = lin("decoder.out.w", D2, D1);
  dec_out_b_ = vec("decoder.out.b", D1, T{0});

  pixel_query_ = &store_.add("depatchify.pixel_query", init_normal<T>({1, D1}, rng, 1.0));
  for (std::size_t i = 0; i < cfg_.patch_layers; ++i) {
    patch_dec_.emplace_back(store_, "depatchify.block" + std::to_string(i), patch_shape, rng,
                            residual_scale(cfg_.patch_layers));
  }
  patch_dec_norm_ = vec("depatchify.norm", D1, T{1});
  pix_out_w_ = lin("depatchify.pix_out.w", D1, 3, 0.1);
  pix_out_b_ = vec("depatchify.pix_out.b", 3, T(0.5));
}

template <typename T>
Var<T> Tokenizer<T>::run_lca(Tape<T>& tape, const std::vector<TransformerBlock<T>>& blocks,
                             Var<T> h, const TokenLayout& layout, const LevelBudget& budget,
                             const GridDims& grid, std::vector<BlockKV<T>>* cache,
                             const TokenLayout* prefix_layout) const {
  const std::size_t head_dim = blocks.front().shape().width / blocks.front().shape().heads;
  const RotaryTable<T> rope = make_rotary_table<T>(latent_positions(layout, grid), head_dim, cfg_.rope);
  const bool temporal = cfg_.temporal_causal && grid.t > 1;
  AttentionBlock attn;
  if (prefix_layout != nullptr && !prefix_layout->empty()) {
    TokenLayout keys = *prefix_layout;
    keys.insert(keys.end(), layout.begin(), layout.end());
    attn.mask = build_lca_mask(layout, keys, budget, temporal);
  } else {
    attn.mask = build_lca_mask(layout, budget, temporal);
  }
  if (cache != nullptr && cache->size() != blocks.size()) cache->resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockContext<T> ctx;
    ctx.rope = &rope;
    ctx.attn = std::span<const AttentionBlock>(&attn, 1);
    BlockKV<T> kv;
    if (cache != nullptr) {
      ctx.prefix = &(*cache)[b];
      ctx.kv_out = &kv;
    }
    h = blocks[b].forward(tape, h, ctx);
    if (cache != nullptr) (*cache)[b].append(kv);
  }
  return h;
}

template <typename T>
Var<T> Tokenizer<T>::patchify(Tape<T>& tape, const Sample& sample, const PatchGeometry& geom,
                              const TokenLayout& layout, const LevelBudget& budget) const {
  const PatchSequences seq = patch_sequences(layout, budget, geom, Flow::PixelToLatent);
  Var<T> pix = linear(tape.constant(patch_pixels<T>(sample, geom)), tape.param(*pix_in_w_),
                      std::optional<Var<T>>(tape.param(*pix_in_b_)));
  std::vector<std::size_t> level_index(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    STRATA_CHECK(layout[i].level >= 1 && layout[i].level <= cfg_.levels, "latent level ",
                 layout[i].level, " outside [1, ", cfg_.levels, "]");
    level_index[i] = layout[i].level - 1;
  }
  Var<T> lat = gather_rows<T>(tape.param(*queries_), level_index);
  const Var<T> parts[] = {pix, lat};
  Var<T> h = gather_rows<T>(concat_rows<T>(parts), seq.gather);
  const RotaryTable<T> rope =
      make_rotary_table<T>(seq.positions, cfg_.patch_width / cfg_.patch_heads, cfg_.rope);
  BlockContext<T> ctx;
  ctx.rope = &rope;
  ctx.attn = seq.blocks;
  for (const auto& b : patch_enc_) h = b.forward(tape, h, ctx);
  return rmsnorm(gather_rows<T>(h, seq.latent_rows), tape.param(*patch_enc_norm_), T(1e-6));
}

template <typename T>
Var<T> Tokenizer<T>::encode_stack(Tape<T>& tape, Var<T> h, const TokenLayout& layout,
                                  const LevelBudget& budget, const GridDims& grid) const {
  h = linear(h, tape.param(*enc_in_w_), std::optional<Var<T>>(tape.param(*enc_in_b_)));
  h = run_lca(tape, enc_, h, layout, budget, grid, nullptr, nullptr);
  h = rmsnorm(h, tape.param(*enc_norm_), T(1e-6));
  h = linear(h, tape.param(*enc_out_w_), std::optional<Var<T>>(tape.param(*enc_out_b_)));
  std::vector<T> keep(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) keep[i] = budget.active(layout[i]) ? T{1} : T{0};
  return scale_rows<T>(h, keep);
}

template <typename T>
Var<T> Tokenizer<T>::encode_tokens(Tape<T>& tape, const Sample& sample, const TokenLayout& layout,
                                   const LevelBudget& budget) const {
  const PatchGeometry geom = geometry(sample.scale);
  return encode_stack(tape, patchify(tape, sample, geom, layout, budget), layout, budget, geom.grid);
}

template <typename T>
Var<T> Tokenizer<T>::decode_stack(Tape<T>& tape, Var<T> z, const TokenLayout& layout,
                                  const LevelBudget& budget, const GridDims& grid,
                                  std::vector<BlockKV<T>>* cache,
                                  const TokenLayout* prefix_layout) const {
  STRATA_CHECK_SHAPE(z.cols() == cfg_.latent_dim && z.rows() == layout.size(), "decoder input ",
                     to_string(z.shape()), " for ", layout.size(), " tokens of width ",
                     cfg_.latent_dim);
  Var<T> h = linear(z, tape.param(*dec_in_w_), std::optional<Var<T>>(tape.param(*dec_in_b_)));
  h = run_lca(tape, dec_, h, layout, budget, grid, cache, prefix_layout);
  h = rmsnorm(h, tape.param(*dec_norm_), T(1e-6));
  return linear(h, tape.param(*dec_out_w_), std::optional<Var<T>>(tape.param(*dec_out_b_)));
}

template <typename T>
Var<T> Tokenizer<T>::depatchify(Tape<T>& tape, Var<T> h, const TokenLayout& layout,
                                const LevelBudget& budget, const PatchGeometry& target) const {
  const PatchSequences seq = patch_sequences(layout, budget, target, Flow::LatentToPixel);
  const std::size_t pixels = seq.pixel_rows.size();
  const std::vector<std::size_t> zeros(pixels, 0);
  const Var<T> parts[] = {gather_rows<T>(tape.param(*pixel_query_), zeros), h};
  Var<T> x = gather_rows<T>(concat_rows<T>(parts), seq.gather);
  const RotaryTable<T> rope =
      make_rotary_table<T>(seq.positions, cfg_.patch_width / cfg_.patch_heads, cfg_.rope);
  BlockContext<T> ctx;
  ctx.rope = &rope;
  ctx.attn = seq.blocks;
  for (const auto& b : patch_dec_) x = b.forward(tape, x, ctx);
  x = rmsnorm(gather_rows<T>(x, seq.pixel_rows), tape.param(*patch_dec_norm_), T(1e-6));
  return linear(x, tape.param(*pix_out_w_), std::optional<Var<T>>(tape.param(*pix_out_b_)));
}

template <typename T>
Var<T> Tokenizer<T>::decode_tokens(Tape<T>& tape, Var<T> z, const TokenLayout& layout,
                                   const LevelBudget& budget, const PatchGeometry& target) const {
  return depatchify(tape, decode_stack(tape, z, layout, budget, target.grid), layout, budget, target);
}

template <typename T>
LatentGrid Tokenizer<T>::encode(const Sample& sample, const LevelBudget& budget, DropMode mode) const {
  const PatchGeometry geom = geometry(sample.scale);
  STRATA_CHECK(budget.max_levels == cfg_.levels, "budget allows ", budget.max_levels,
               " levels, tokenizer has ", cfg_.levels);
  budget.validate();
  const TokenLayout layout = budget_layout(geom.grid, budget, mode);
  Tape<T> tape(false);
  const Var<T> z = encode_tokens(tape, sample, layout, budget);
  LatentGrid out(geom.grid, cfg_.levels, cfg_.latent_dim, budget);
  out.set_rows(layout, z.value().template cast<float>());
  return out;
}

template <typename T>
Sample Tokenizer<T>::decode(const LatentGrid& latents, const ScaleSpec& target, DropMode mode) const {
  return decode(latents, target, latents.budget, mode);
}

template <typename T>
Sample Tokenizer<T>::decode(const LatentGrid& latents, const ScaleSpec& target,
                            const LevelBudget& budget, DropMode mode) const {
  STRATA_CHECK(latents.levels == cfg_.levels && latents.dim == cfg_.latent_dim, "latent grid n=",
               latents.levels, " d=", latents.dim, " does not match the tokenizer (n=", cfg_.levels,
               ", d=", cfg_.latent_dim, ")");
  STRATA_CHECK(budget.max_levels == cfg_.levels, "budget allows ", budget.max_levels,
               " levels, tokenizer has ", cfg_.levels);
  budget.validate();
  const PatchGeometry geom = geometry_for_grid(target, latents.grid, cfg_.k_t);
  const TokenLayout layout = budget_layout(latents.grid, budget, mode);
  Tape<T> tape(false);
  const Var<T> z = tape.constant(latents.rows(layout).template cast<T>());
  const Var<T> rows = decode_tokens(tape, z, layout, budget, geom);
  return scatter_pixels(rows.value(), geom);
}

template <typename T>
DecoderState<T>::DecoderState(const Tokenizer<T>& tok, const GridDims& grid)
    : tok_(&tok), grid_(grid) {}

template <typename T>
void DecoderState<T>::add_level(const Tensor<float>& rows) {
  const auto& cfg = tok_->config();
  STRATA_CHECK(levels_ < cfg.levels, "decoder already holds all ", cfg.levels, " levels");
  const std::uint32_t level = levels_ + 1;
  const TokenLayout q = level_layout(grid_, level);
  const TokenLayout prefix = latent_layout(grid_, levels_);
  const LevelBudget budget =
      LevelBudget::uniform(static_cast<std::size_t>(grid_.patches()), level, cfg.levels);
  Tape<T> tape(false);
  const Var<T> out = tok_->decode_stack(tape, tape.constant(rows.template cast<T>()), q, budget,
                                        grid_, &cache_, &prefix);
  if (out_.empty()) {
    out_ = out.value();
  } else {
    Storage<T> all = out_.storage();
    all.insert(all.end(), out.value().storage().begin(), out.value().storage().end());
    const std::size_t cols = out_.cols();
    const std::size_t rows = all.size() / cols;
    out_ = Tensor<T>({rows, cols}, std::move(all));
  }
  levels_ = level;
}

template <typename T>
Sample DecoderState<T>::render(const ScaleSpec& target) const {
  STRATA_CHECK(levels_ >= 1, "nothing to render: no levels decoded yet");
  const auto& cfg = tok_->config();
  const PatchGeometry geom = geometry_for_grid(target, grid_, cfg.k_t);
  const TokenLayout layout = latent_layout(grid_, levels_);
  const LevelBudget budget =
      LevelBudget::uniform(static_cast<std::size_t>(grid_.patches()), levels_, cfg.levels);
  Tape<T> tape(false);
  const Var<T> rows = tok_->depatchify(tape, tape.constant(out_), layout, budget, geom);
  return scatter_pixels(rows.value(), geom);
}

void save_tokenizer(const Tokenizer<float>& tok, const std::string& dir) {
  save_checkpoint(checkpoint_from_params(tok.params(), "tokenizer", to_json(tok.config())), dir);
}

std::unique_ptr<Tokenizer<float>> tokenizer_from_checkpoint(const Checkpoint& ckpt) {
  STRATA_CHECK(ckpt.kind == "tokenizer", "checkpoint kind is '", ckpt.kind, "', expected 'tokenizer'");
  auto tok = std::make_unique<Tokenizer<float>>(tokenizer_config_from_json(ckpt.config), 0);
  load_params(tok->params(), ckpt);
  return tok;
}

std::unique_ptr<Tokenizer<float>> load_tokenizer(const std::string& dir) {
  return tokenizer_from_checkpoint(load_checkpoint(dir));
}

template Tensor<float> patch_pixels(const Sample&, const PatchGeometry&);
template Tensor<double> patch_pixels(const Sample&, const PatchGeometry&);
template Sample scatter_pixels(const Tensor<float>&, const PatchGeometry&);
template Sample scatter_pixels(const Tensor<double>&, const PatchGeometry&);
template class Tokenizer<float>;
template class Tokenizer<double>;
template class DecoderState<float>;
template class DecoderState<double>;

}  // namespace strata
