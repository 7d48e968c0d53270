// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "gemm.hpp"

namespace strata {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t AttnMask::count() const {
  std::size_t n = 0;
  for (auto a : allow) n += a != 0;
  return n;
}

std::size_t AttnMask::row_count(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols; ++c) n += allow[r * cols + c] != 0;
  return n;
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using Stride = Eigen::OuterStride<>;

template <typename T>
CMapR<T> as_mat(const Tensor<T>& t) {
  return CMapR<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MapR<T> as_mat(Tensor<T>& t) {
  return MapR<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

Shape with_last(Shape s, std::size_t last) {
  if (s.empty()) return {last};
  s.back() = last;
  return s;
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  STRATA_CHECK_SHAPE(a == b, op, ": shape mismatch ", to_string(a), " vs ", to_string(b));
}

template <typename T, typename F>
Tensor<T> map_values(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t i = 0, e = x.size(); i < e; ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  STRATA_CHECK_SHAPE(av.cols() == bv.rows(), "matmul: inner dims ", to_string(av.shape()),
                     " x ", to_string(bv.shape()));
  Tensor<T> out({av.rows(), bv.cols()});
  detail::gemm(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.cols());
  return tape.emit(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(a);
    const Tensor<T>& bv = tp.value(b);
    if (Tensor<T>* ga = tp.grad_slot(a)) {
      as_mat(*ga).noalias() += as_mat(g) * as_mat(bv).transpose();
    }
    if (Tensor<T>* gb = tp.grad_slot(b)) {
      as_mat(*gb).noalias() += as_mat(av).transpose() * as_mat(g);
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  STRATA_CHECK_SHAPE(wv.rank() == 2 && xv.cols() == wv.dim(0), "linear: input ",
                     to_string(xv.shape()), " vs weight ", to_string(wv.shape()));
  Tensor<T> out(with_last(xv.shape(), wv.dim(1)));
  auto om = as_mat(out);
  detail::gemm(xv.data(), wv.data(), out.data(), out.size() / wv.dim(1), wv.dim(0), wv.dim(1));
  if (b) {
    const Tensor<T>& bv = b->value();
    STRATA_CHECK_SHAPE(bv.size() == wv.dim(1), "linear: bias ", to_string(bv.shape()));
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        bv.data(), static_cast<Eigen::Index>(bv.size()));
  }
  Var<T> bias = b ? *b : x;
  const bool has_bias = b.has_value();
  return tape.emit(std::move(out), {x, w, bias},
                   [x, w, bias, has_bias](Tape<T>& tp, const Tensor<T>& g) {
                     const auto gm = as_mat(g);
                     if (Tensor<T>* gx = tp.grad_slot(x)) {
                       as_mat(*gx).noalias() += gm * as_mat(tp.value(w)).transpose();
                     }
                     if (Tensor<T>* gw = tp.grad_slot(w)) {
                       as_mat(*gw).noalias() += as_mat(tp.value(x)).transpose() * gm;
                     }
                     if (has_bias) {
                       if (Tensor<T>* gb = tp.grad_slot(bias)) {
                         Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
                             gb->data(), static_cast<Eigen::Index>(gb->size())) +=
                             gm.colwise().sum();
                       }
                     }
                   });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->emit(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->emit(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
    if (Tensor<T>* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->emit(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* ga = tp.grad_slot(a)) {
      const T* bv = tp.value(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor<T>* gb = tp.grad_slot(b)) {
      const T* av = tp.value(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = map_values(a.value(), [c](T v) { return v * c; });
  return a.tape->emit(std::move(out), {a}, [a, c](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c;
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tensor<T> out = map_values(a.value(), [c](T v) { return v + c; });
  return a.tape->emit(std::move(out), {a},
                      [a](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(a, g); });
}

template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
  const std::size_t d = x.cols();
  STRATA_CHECK_SHAPE(b.value().size() == d, "add_rowvec: ", to_string(x.shape()), " + ",
                     to_string(b.shape()));
  Tensor<T> out = x.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  return x.tape->emit(std::move(out), {x, b}, [x, b, d](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, g);
    if (Tensor<T>* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
    }
  });
}

template <typename T>
Var<T> mul_rowvec(Var<T> x, Var<T> gvec) {
  const std::size_t d = x.cols();
  STRATA_CHECK_SHAPE(gvec.value().size() == d, "mul_rowvec: ", to_string(x.shape()), " * ",
                     to_string(gvec.shape()));
  Tensor<T> out = x.value();
  const T* gv = gvec.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gv[i % d];
  return x.tape->emit(std::move(out), {x, gvec},
                      [x, gvec, d](Tape<T>& tp, const Tensor<T>& g) {
                        if (Tensor<T>* gx = tp.grad_slot(x)) {
                          const T* gv = tp.value(gvec).data();
                          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gv[i % d];
                        }
                        if (Tensor<T>* gg = tp.grad_slot(gvec)) {
                          const T* xv = tp.value(x).data();
                          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % d] += g[i] * xv[i];
                        }
                      });
}

template <typename T>
Var<T> scale_rows(Var<T> x, std::span<const T> w) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  STRATA_CHECK_SHAPE(w.size() == rows, "scale_rows: ", w.size(), " weights for ", rows, " rows");
  std::vector<T> weights(w.begin(), w.end());
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= weights[r];
  }
  return x.tape->emit(std::move(out), {x},
                      [x, weights = std::move(weights), cols](Tape<T>& tp, const Tensor<T>& g) {
                        if (Tensor<T>* gx = tp.grad_slot(x)) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            (*gx)[i] += g[i] * weights[i / cols];
                          }
                        }
                      });
}

template <typename T>
Var<T> silu(Var<T> x) {
  Tensor<T> out = map_values(x.value(), [](T v) { return v / (T{1} + std::exp(-v)); });
  return x.tape->emit(std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_slot(x)) {
      const T* xv = tp.value(x).data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = T{1} / (T{1} + std::exp(-xv[i]));
        (*gx)[i] += g[i] * s * (T{1} + xv[i] * (T{1} - s));
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshape(std::move(shape));
  return x.tape->emit(std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  STRATA_CHECK(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    STRATA_CHECK_SHAPE(p.cols() == cols, "concat_rows: column mismatch ", p.cols(), " vs ", cols);
    rows += p.rows();
  }
  Tensor<T> out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    std::copy(v.data(), v.data() + v.size(), out.data() + off);
    off += v.size();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts.front().tape->emit_n(
      std::move(out), inputs, [inputs](Tape<T>& tp, const Tensor<T>& g) {
        std::size_t off = 0;
        for (const auto& p : inputs) {
          const std::size_t n = tp.value(p).size();
          if (Tensor<T>* gp = tp.grad_slot(p)) {
            for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
          }
          off += n;
        }
      });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const std::size_t cols = x.cols();
  STRATA_CHECK_SHAPE(begin + count <= x.rows(), "slice_rows: [", begin, ", ", begin + count,
                     ") out of ", x.rows());
  const T* src = x.value().data() + begin * cols;
  Tensor<T> out({count, cols}, std::vector<T>(src, src + count * cols));
  return x.tape->emit(std::move(out), {x}, [x, begin, cols](Tape<T>& tp, const Tensor<T>& g) {
    if (Tensor<T>* gx = tp.grad_slot(x)) {
      T* dst = gx->data() + begin * cols;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  STRATA_CHECK_SHAPE(begin + count <= cols, "slice_cols: [", begin, ", ", begin + count,
                     ") out of ", cols);
  Tensor<T> out({rows, count});
  const Tensor<T>& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * cols + begin, count, out.data() + r * count);
  }
  return x.tape->emit(std::move(out), {x},
                      [x, begin, count, cols](Tape<T>& tp, const Tensor<T>& g) {
                        if (Tensor<T>* gx = tp.grad_slot(x)) {
                          const std::size_t rows = g.size() / count;
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < count; ++c) {
                              (*gx)[r * cols + begin + c] += g[r * count + c];
                            }
                          }
                        }
                      });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> index) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.rows();
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor<T> out({idx.size(), cols});
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    STRATA_CHECK_SHAPE(idx[i] < rows, "gather_rows: index ", idx[i], " out of ", rows);
    std::copy_n(xv.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  return x.tape->emit(std::move(out), {x},
                      [x, idx = std::move(idx), cols](Tape<T>& tp, const Tensor<T>& g) {
                        if (Tensor<T>* gx = tp.grad_slot(x)) {
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = gx->data() + idx[i] * cols;
                            const T* src = g.data() + i * cols;
                            for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                          }
                        }
                      });
}

template <typename T>
Var<T> rmsnorm(Var<T> x, Var<T> gain, T eps) {
  const std::size_t d = x.cols();
  STRATA_CHECK_SHAPE(gain.value().size() == d, "rmsnorm: gain ", to_string(gain.shape()),
                     " for last dim ", d);
  const Tensor<T>& xv = x.value();
  const std::size_t rows = xv.rows();
  const T* gv = gain.value().data();
  Tensor<T> out(xv.shape());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T ms = 0;
    for (std::size_t c = 0; c < d; ++c) ms += xr[c] * xr[c];
    ms /= static_cast<T>(d);
    inv[r] = T{1} / std::sqrt(ms + eps);
    T* orow = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) orow[c] = xr[c] * inv[r] * gv[c];
  }
  return x.tape->emit(
      std::move(out), {x, gain}, [x, gain, d, inv = std::move(inv)](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(x);
        const T* gv = tp.value(gain).data();
        Tensor<T>* gx = tp.grad_slot(x);
        Tensor<T>* gg = tp.grad_slot(gain);
        for (std::size_t r = 0; r < inv.size(); ++r) {
          const T* xr = xv.data() + r * d;
          const T* gr = g.data() + r * d;
          if (gg) {
            for (std::size_t c = 0; c < d; ++c) (*gg)[c] += gr[c] * xr[c] * inv[r];
          }
          if (gx) {
            T dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += gr[c] * gv[c] * xr[c];
            const T k = inv[r] * inv[r] * inv[r] * dot / static_cast<T>(d);
            T* dst = gx->data() + r * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += inv[r] * gv[c] * gr[c] - xr[c] * k;
          }
        }
      });
}

namespace {

// Rows with at least one allowed key and keys allowed for at least one row.
// Attention runs on this dense core only, so the arithmetic does not depend
// on how many fully blocked tokens pad the sequence.
struct BlockCore {
  std::size_t q_begin = 0;
  std::size_t k_begin = 0;
  std::vector<Eigen::Index> rows;
  std::vector<Eigen::Index> cols;
  std::vector<std::uint8_t> allow;  // rows.size() x cols.size()
};

BlockCore make_core(const AttentionBlock& b) {
  BlockCore core{b.q_begin, b.k_begin, {}, {}, {}};
  std::vector<std::uint8_t> col_used(b.mask.cols, 0);
  for (std::size_t r = 0; r < b.mask.rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < b.mask.cols; ++c) {
      if (b.mask.allow[r * b.mask.cols + c]) {
        any = true;
        col_used[c] = 1;
      }
    }
    if (any) core.rows.push_back(static_cast<Eigen::Index>(r));
  }
  for (std::size_t c = 0; c < b.mask.cols; ++c) {
    if (col_used[c]) core.cols.push_back(static_cast<Eigen::Index>(c));
  }
  core.allow.reserve(core.rows.size() * core.cols.size());
  for (auto r : core.rows) {
    for (auto c : core.cols) {
      core.allow.push_back(b.mask.allow[static_cast<std::size_t>(r) * b.mask.cols + static_cast<std::size_t>(c)]);
    }
  }
  return core;
}

template <typename T>
MatR<T> gather_head(const Tensor<T>& x, std::size_t begin, const std::vector<Eigen::Index>& idx,
                    std::size_t col0, std::size_t hd) {
  MatR<T> m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(hd));
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const T* src = x.data() + (begin + static_cast<std::size_t>(idx[i])) * d + col0;
    std::copy(src, src + hd, m.data() + i * hd);
  }
  return m;
}

template <typename T>
void scatter_add_head(Tensor<T>& x, std::size_t begin, const std::vector<Eigen::Index>& idx,
                      std::size_t col0, const MatR<T>& m) {
  const std::size_t d = x.cols();
  const auto hd = static_cast<std::size_t>(m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    T* dst = x.data() + (begin + static_cast<std::size_t>(idx[i])) * d + col0;
    for (std::size_t j = 0; j < hd; ++j) dst[j] += m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
}

}  // namespace

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const AttentionBlock> blocks,
                 std::size_t heads, AttentionCounter* counter) {
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  const std::size_t d = qv.cols();
  STRATA_CHECK_SHAPE(heads > 0 && d % heads == 0, "attention: ", heads,
                     " heads do not divide width ", d);
  STRATA_CHECK_SHAPE(kv.cols() == d && vv.cols() == d, "attention: q/k/v widths ", d, "/",
                     kv.cols(), "/", vv.cols());
  STRATA_CHECK_SHAPE(kv.rows() == vv.rows(), "attention: ", kv.rows(), " keys but ", vv.rows(),
                     " values");
  for (const auto& b : blocks) {
    STRATA_CHECK_SHAPE(b.q_begin + b.mask.rows <= qv.rows() && b.k_begin + b.mask.cols <= kv.rows(),
                       "attention: mask ", b.mask.rows, "x", b.mask.cols, " at (", b.q_begin, ",",
                       b.k_begin, ") exceeds ", qv.rows(), " queries / ", kv.rows(), " keys");
  }
  const std::size_t hd = d / heads;
  const T scale_f = T{1} / std::sqrt(static_cast<T>(hd));

  auto cores = std::make_shared<std::vector<BlockCore>>();
  cores->reserve(blocks.size());
  auto probs = std::make_shared<std::vector<MatR<T>>>();
  probs->reserve(blocks.size() * heads);
  Tensor<T> out(Shape{qv.rows(), d});

  for (const auto& b : blocks) {
    if (counter) {
      counter->pairs += b.mask.count();
      counter->calls += 1;
    }
    cores->push_back(make_core(b));
    const BlockCore& core = cores->back();
    const auto rows = static_cast<Eigen::Index>(core.rows.size());
    const auto cols = static_cast<Eigen::Index>(core.cols.size());
    for (std::size_t h = 0; h < heads; ++h) {
      const MatR<T> qh = gather_head(qv, core.q_begin, core.rows, h * hd, hd);
      const MatR<T> kh = gather_head(kv, core.k_begin, core.cols, h * hd, hd);
      const MatR<T> vh = gather_head(vv, core.k_begin, core.cols, h * hd, hd);
      MatR<T> p(rows, cols);
      if (rows > 0 && cols > 0) {
        const MatR<T> kt = kh.transpose();
        detail::gemm(qh.data(), kt.data(), p.data(), core.rows.size(), hd, core.cols.size());
      }
      for (Eigen::Index r = 0; r < rows; ++r) {
        const std::uint8_t* allow = core.allow.data() + static_cast<std::size_t>(r * cols);
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index c = 0; c < cols; ++c) {
          if (allow[c]) mx = std::max(mx, p(r, c) * scale_f);
        }
        T total = 0;
        for (Eigen::Index c = 0; c < cols; ++c) {
          if (allow[c]) {
            const T e = std::exp(p(r, c) * scale_f - mx);
            p(r, c) = e;
            total += e;
          } else {
            p(r, c) = T{0};
          }
        }
        const T invt = T{1} / total;
        for (Eigen::Index c = 0; c < cols; ++c) p(r, c) *= invt;
      }
      MatR<T> oh(rows, static_cast<Eigen::Index>(hd));
      if (rows > 0) {
        if (cols > 0) {
          detail::gemm(p.data(), vh.data(), oh.data(), core.rows.size(), core.cols.size(), hd);
        } else {
          oh.setZero();
        }
      }
      scatter_add_head(out, core.q_begin, core.rows, h * hd, oh);
      probs->push_back(std::move(p));
    }
  }

  return q.tape->emit(
      std::move(out), {q, k, v},
      [q, k, v, heads, hd, scale_f, probs, cores](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& qv = tp.value(q);
        const Tensor<T>& kv = tp.value(k);
        const Tensor<T>& vv = tp.value(v);
        Tensor<T>* gq = tp.grad_slot(q);
        Tensor<T>* gk = tp.grad_slot(k);
        Tensor<T>* gv = tp.grad_slot(v);
        std::size_t idx = 0;
        for (const auto& core : *cores) {
          const auto rows = static_cast<Eigen::Index>(core.rows.size());
          const auto cols = static_cast<Eigen::Index>(core.cols.size());
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            if (rows == 0 || cols == 0) continue;
            const MatR<T>& p = (*probs)[idx];
            const MatR<T> go = gather_head(g, core.q_begin, core.rows, h * hd, hd);
            if (gv) {
              MatR<T> gvh = p.transpose() * go;
              scatter_add_head(*gv, core.k_begin, core.cols, h * hd, gvh);
            }
            if (!gq && !gk) continue;
            const MatR<T> vh = gather_head(vv, core.k_begin, core.cols, h * hd, hd);
            MatR<T> ds(rows, cols);
            ds.noalias() = go * vh.transpose();
            for (Eigen::Index r = 0; r < rows; ++r) {
              T dot = 0;
              for (Eigen::Index c = 0; c < cols; ++c) dot += p(r, c) * ds(r, c);
              for (Eigen::Index c = 0; c < cols; ++c) ds(r, c) = p(r, c) * (ds(r, c) - dot) * scale_f;
            }
            if (gq) {
              const MatR<T> kh = gather_head(kv, core.k_begin, core.cols, h * hd, hd);
              MatR<T> gqh = ds * kh;
              scatter_add_head(*gq, core.q_begin, core.rows, h * hd, gqh);
            }
            if (gk) {
              const MatR<T> qh = gather_head(qv, core.q_begin, core.rows, h * hd, hd);
              MatR<T> gkh = ds.transpose() * qh;
              scatter_add_head(*gk, core.k_begin, core.cols, h * hd, gkh);
            }
          }
        }
      });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttnMask& mask, std::size_t heads,
                 AttentionCounter* counter) {
  STRATA_CHECK_SHAPE(mask.rows == q.rows() && mask.cols == k.rows(), "attention: mask ",
                     mask.rows, "x", mask.cols, " for ", q.rows(), " queries and ", k.rows(),
                     " keys");
  AttentionBlock block{0, 0, mask};
  return attention(q, k, v, std::span<const AttentionBlock>(&block, 1), heads, counter);
}

template <typename T>
Var<T> swiglu_ffn(Var<T> x, Var<T> w_a, Var<T> w_b, Var<T> w_out) {
  STRATA_CHECK_SHAPE(w_a.shape() == w_b.shape(), "swiglu_ffn: gate ", to_string(w_a.shape()),
                     " vs value ", to_string(w_b.shape()));
  STRATA_CHECK_SHAPE(w_out.value().rows() == w_a.value().cols(), "swiglu_ffn: hidden ",
                     w_a.value().cols(), " vs output weight ", to_string(w_out.shape()));
  return linear(mul(silu(linear(x, w_a)), linear(x, w_b)), w_out);
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().span()) s += v;
  return x.tape->emit(Tensor<T>(Shape{}, std::vector<T>{s}), {x},
                      [x](Tape<T>& tp, const Tensor<T>& g) {
                        if (Tensor<T>* gx = tp.grad_slot(x)) {
                          for (auto& e : gx->span()) e += g[0];
                        }
                      });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.value().size());
  return scale(sum(x), T{1} / n);
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "mse");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t n = av.size();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T e = av[i] - bv[i];
    s += e * e;
  }
  const T inv_n = n ? T{1} / static_cast<T>(n) : T{0};
  return a.tape->emit(Tensor<T>(Shape{}, std::vector<T>{s * inv_n}), {a, b},
                      [a, b, inv_n](Tape<T>& tp, const Tensor<T>& g) {
                        const Tensor<T>& av = tp.value(a);
                        const Tensor<T>& bv = tp.value(b);
                        const T k = T{2} * g[0] * inv_n;
                        Tensor<T>* ga = tp.grad_slot(a);
                        Tensor<T>* gb = tp.grad_slot(b);
                        for (std::size_t i = 0; i < av.size(); ++i) {
                          const T e = k * (av[i] - bv[i]);
                          if (ga) (*ga)[i] += e;
                          if (gb) (*gb)[i] -= e;
                        }
                      });
}

template <typename T>
Var<T> cosine_rows(Var<T> a, Var<T> b, T eps) {
  require_same(a.shape(), b.shape(), "cosine_rows");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t rows = av.rows();
  const std::size_t d = av.cols();
  Tensor<T> out(Shape{rows});
  std::vector<T> na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0, sa = 0, sb = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T x = av[r * d + c], y = bv[r * d + c];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    out[r] = (na[r] > eps && nb[r] > eps) ? dot / (na[r] * nb[r]) : T{0};
  }
  Tensor<T> cosv = out;
  return a.tape->emit(
      std::move(out), {a, b},
      [a, b, d, eps, na = std::move(na), nb = std::move(nb), cosv = std::move(cosv)](
          Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& av = tp.value(a);
        const Tensor<T>& bv = tp.value(b);
        Tensor<T>* ga = tp.grad_slot(a);
        Tensor<T>* gb = tp.grad_slot(b);
        for (std::size_t r = 0; r < na.size(); ++r) {
          if (!(na[r] > eps && nb[r] > eps)) continue;
          const T inv = T{1} / (na[r] * nb[r]);
          for (std::size_t c = 0; c < d; ++c) {
            const T x = av[r * d + c], y = bv[r * d + c];
            if (ga) (*ga)[r * d + c] += g[r] * (y * inv - cosv[r] * x / (na[r] * na[r]));
            if (gb) (*gb)[r * d + c] += g[r] * (x * inv - cosv[r] * y / (nb[r] * nb[r]));
          }
        }
      });
}

template <typename T>
Var<T> hinge_sq_mean(Var<T> x, T margin) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.size();
  T s = 0;
  for (T v : xv.span()) {
    const T h = std::max(T{0}, std::abs(v) - margin);
    s += h * h;
  }
  const T inv_n = n ? T{1} / static_cast<T>(n) : T{0};
  return x.tape->emit(Tensor<T>(Shape{}, std::vector<T>{s * inv_n}), {x},
                      [x, margin, inv_n](Tape<T>& tp, const Tensor<T>& g) {
                        if (Tensor<T>* gx = tp.grad_slot(x)) {
                          const Tensor<T>& xv = tp.value(x);
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            const T h = std::max(T{0}, std::abs(xv[i]) - margin);
                            if (h > T{0}) {
                              (*gx)[i] += g[0] * T{2} * h * (xv[i] > 0 ? T{1} : T{-1}) * inv_n;
                            }
                          }
                        }
                      });
}

#define STRATA_INSTANTIATE_OPS(T)                                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                                     \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                              \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> add_scalar(Var<T>, T);                                                      \
  template Var<T> add_rowvec(Var<T>, Var<T>);                                                 \
  template Var<T> mul_rowvec(Var<T>, Var<T>);                                                 \
  template Var<T> scale_rows(Var<T>, std::span<const T>);                                     \
  template Var<T> silu(Var<T>);                                                               \
  template Var<T> reshape(Var<T>, Shape);                                                     \
  template Var<T> concat_rows(std::span<const Var<T>>);                                       \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                               \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                               \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                          \
  template Var<T> rmsnorm(Var<T>, Var<T>, T);                                                 \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::span<const AttentionBlock>,          \
                            std::size_t, AttentionCounter*);                                  \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttnMask&, std::size_t,             \
                            AttentionCounter*);                                               \
  template Var<T> swiglu_ffn(Var<T>, Var<T>, Var<T>, Var<T>);                                 \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> mean(Var<T>);                                                               \
  template Var<T> mse(Var<T>, Var<T>);                                                        \
  template Var<T> cosine_rows(Var<T>, Var<T>, T);                                             \
  template Var<T> hinge_sq_mean(Var<T>, T);

STRATA_INSTANTIATE_OPS(float)
STRATA_INSTANTIATE_OPS(double)

}  // namespace strata
