// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/nn.hpp"

#include <cmath>

namespace strata {

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  STRATA_CHECK(find(name) == nullptr, "duplicate parameter name '", name, "'");
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(const std::string& name) {
  Parameter<T>* p = find(name);
  STRATA_CHECK(p != nullptr, "unknown parameter '", name, "'");
  return *p;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::with_prefix(const std::string& prefix) {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) {
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  }
  return out;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
Tensor<T> init_normal(Shape shape, std::mt19937_64& rng, double stddev) {
  return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(stddev));
}

template <typename T>
void BlockKV<T>::append(const BlockKV& more) {
  if (more.rows() == 0) return;
  if (rows() == 0) {
    *this = more;
    return;
  }
  const std::size_t d = k.cols();
  STRATA_CHECK_SHAPE(more.k.cols() == d, "BlockKV::append width ", more.k.cols(), " vs ", d);
  Storage<T> kk = k.storage();
  Storage<T> vv = v.storage();
  kk.insert(kk.end(), more.k.storage().begin(), more.k.storage().end());
  vv.insert(vv.end(), more.v.storage().begin(), more.v.storage().end());
  const std::size_t rows = kk.size() / d;
  k = Tensor<T>({rows, d}, std::move(kk));
  v = Tensor<T>({rows, d}, std::move(vv));
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterStore<T>& store, const std::string& prefix,
                                      const BlockShape& shape, std::mt19937_64& rng,
                                      double out_scale)
    : shape_(shape) {
  const std::size_t d = shape.width;
  const std::size_t h = shape.ffn_hidden;
  STRATA_CHECK(shape.heads > 0 && d % shape.heads == 0, prefix, ": ", shape.heads,
               " heads do not divide width ", d);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_hid = 1.0 / std::sqrt(static_cast<double>(h));
  norm1_ = &store.add(prefix + ".norm1", Tensor<T>({d}, T{1}));
  wq_ = &store.add(prefix + ".attn.wq", init_normal<T>({d, d}, rng, s_in));
  wk_ = &store.add(prefix + ".attn.wk", init_normal<T>({d, d}, rng, s_in));
  wv_ = &store.add(prefix + ".attn.wv", init_normal<T>({d, d}, rng, s_in));
  wo_ = &store.add(prefix + ".attn.wo", init_normal<T>({d, d}, rng, s_in * out_scale));
  if (shape.cross_attention) {
    normc_ = &store.add(prefix + ".normc", Tensor<T>({d}, T{1}));
    cq_ = &store.add(prefix + ".cross.wq", init_normal<T>({d, d}, rng, s_in));
    ck_ = &store.add(prefix + ".cross.wk", init_normal<T>({d, d}, rng, s_in));
    cv_ = &store.add(prefix + ".cross.wv", init_normal<T>({d, d}, rng, s_in));
    co_ = &store.add(prefix + ".cross.wo", init_normal<T>({d, d}, rng, s_in * out_scale));
  }
  norm2_ = &store.add(prefix + ".norm2", Tensor<T>({d}, T{1}));
  ffn_a_ = &store.add(prefix + ".ffn.wa", init_normal<T>({d, h}, rng, s_in));
  ffn_b_ = &store.add(prefix + ".ffn.wb", init_normal<T>({d, h}, rng, s_in));
  ffn_out_ = &store.add(prefix + ".ffn.wo", init_normal<T>({h, d}, rng, s_hid * out_scale));
}

namespace {

template <typename T>
Var<T> modulate(Var<T> h, Var<T> shift, Var<T> scale_v) {
  return add(mul(h, add_scalar(scale_v, T{1})), shift);
}

}  // namespace

template <typename T>
Var<T> TransformerBlock<T>::forward(Tape<T>& tape, Var<T> x, const BlockContext<T>& ctx) const {
  STRATA_CHECK(ctx.rope != nullptr, "transformer block needs a rotary table");
  const std::size_t heads = shape_.heads;

  Var<T> h = rmsnorm(x, tape.param(*norm1_), T(1e-6));
  if (ctx.mod) h = modulate(h, ctx.mod->shift_attn, ctx.mod->scale_attn);
  Var<T> q = rope_rotate(linear(h, tape.param(*wq_)), *ctx.rope);
  Var<T> k = rope_rotate(linear(h, tape.param(*wk_)), *ctx.rope);
  Var<T> v = linear(h, tape.param(*wv_));
  if (ctx.kv_out) {
    ctx.kv_out->k = k.value();
    ctx.kv_out->v = v.value();
  }
  if (ctx.prefix && ctx.prefix->rows() > 0) {
    const Var<T> ks[] = {tape.constant(ctx.prefix->k), k};
    const Var<T> vs[] = {tape.constant(ctx.prefix->v), v};
    k = concat_rows<T>(ks);
    v = concat_rows<T>(vs);
  }
  Var<T> a = linear(attention(q, k, v, ctx.attn, heads, ctx.counter), tape.param(*wo_));
  if (ctx.mod) a = mul(a, ctx.mod->gate_attn);
  x = add(x, a);

  if (shape_.cross_attention) {
    STRATA_CHECK(ctx.cond_tokens.has_value(), "cross-attention block called without condition tokens");
    Var<T> hc = rmsnorm(x, tape.param(*normc_), T(1e-6));
    Var<T> mem = *ctx.cond_tokens;
    Var<T> cq = linear(hc, tape.param(*cq_));
    Var<T> ck = linear(mem, tape.param(*ck_));
    Var<T> cv = linear(mem, tape.param(*cv_));
    AttnMask full(x.rows(), mem.rows(), true);
    x = add(x, linear(attention(cq, ck, cv, full, heads), tape.param(*co_)));
  }

  Var<T> h2 = rmsnorm(x, tape.param(*norm2_), T(1e-6));
  if (ctx.mod) h2 = modulate(h2, ctx.mod->shift_ffn, ctx.mod->scale_ffn);
  Var<T> f = swiglu_ffn(h2, tape.param(*ffn_a_), tape.param(*ffn_b_), tape.param(*ffn_out_));
  if (ctx.mod) f = mul(f, ctx.mod->gate_ffn);
  return add(x, f);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct BlockKV<float>;
template struct BlockKV<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template Tensor<float> init_normal(Shape, std::mt19937_64&, double);
template Tensor<double> init_normal(Shape, std::mt19937_64&, double);

}  // namespace strata
