#pragma once

// Reverse-mode autodiff over TensorT plus the layers and optimizers used by
// the classifier backbones and the image-synthesis networks. Convolutions go
// through im2col + GEMM; backward passes recompute the column buffers rather
// than caching them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <istream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "trainext/common.hpp"
#include "trainext/tensor.hpp"

namespace trainext::nn {

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <typename T>
struct Node {
  TensorT<T> value;
  TensorT<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = TensorT<T>(value.shape());
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Var {
 public:
  Var() = default;

  explicit Var(TensorT<T> value, bool requires_grad = false) : n_(std::make_shared<Node<T>>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
    n_->seq = next_seq();
    if (requires_grad) n_->ensure_grad();
  }

  explicit Var(NodePtr<T> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const TensorT<T>& value() const { return n_->value; }
  TensorT<T>& value() { return n_->value; }
  const TensorT<T>& grad() const { return n_->grad; }
  TensorT<T>& grad() { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  NodePtr<T> node() const { return n_; }

  void zero_grad() {
    if (n_) {
      n_->ensure_grad();
      n_->grad.fill(T(0));
    }
  }

  // Backpropagate from a scalar output.
  void backward() {
    if (!n_) throw ValidationError("backward on empty var");
    if (n_->value.numel() != 1) throw ValidationError("backward needs a scalar output");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{n_.get()};
    while (!stack.empty()) {
      Node<T>* cur = stack.back();
      stack.pop_back();
      if (!cur->requires_grad || seen.count(cur)) continue;
      seen.insert(cur);
      order.push_back(cur);
      for (auto& p : cur->parents) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (Node<T>* node : order)
      if (node->backprop) node->backprop(*node);
  }

 private:
  NodePtr<T> n_;
};

namespace detail {

template <typename T>
Var<T> make_op(TensorT<T> value, std::vector<NodePtr<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = next_seq();
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "add");
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) pb->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "sub");
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "mul");
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {pa}, [pa, s](Node<T>& self) {
    pa->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) pa->grad[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], T(0));
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {pa}, [pa](Node<T>& self) {
    pa->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      if (pa->value[i] > T(0)) pa->grad[i] += self.grad[i];
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < T(0)) out[i] *= slope;
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {pa}, [pa, slope](Node<T>& self) {
    pa->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      pa->grad[i] += self.grad[i] * (pa->value[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  auto pa = a.node();
  auto saved = std::make_shared<TensorT<T>>(out);
  return detail::make_op<T>(std::move(out), {pa}, [pa, saved](Node<T>& self) {
    pa->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      const T y = (*saved)[i];
      pa->grad[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& a, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw ValidationError("dropout: p must be < 1");
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(a.value().numel()));
  const T keep_scale = T(1.0 / (1.0 - p));
  TensorT<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const T m = rng.bernoulli(p) ? T(0) : keep_scale;
    (*mask)[static_cast<std::size_t>(i)] = m;
    out[i] *= m;
  }
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {pa}, [pa, mask](Node<T>& self) {
    pa->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      pa->grad[i] += self.grad[i] * (*mask)[static_cast<std::size_t>(i)];
  });
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>(a.value(), false);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw ValidationError("matmul: bad shapes " + av.shape_str() + " x " + bv.shape_str());
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  TensorT<T> out({m, n});
  gemm(m, n, k, av.data(), bv.data(), out.data(), false);
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb, m, n, k](Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      gemm_nt(m, k, n, self.grad.data(), pb->value.data(), pa->grad.data(), true);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      gemm_tn(k, n, m, pa->value.data(), self.grad.data(), pb->grad.data(), true);
    }
  });
}

// y[N,O] = x[N,I] * w[O,I]^T + b[O]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1))
    throw ValidationError("linear: bad shapes " + xv.shape_str() + " x " + wv.shape_str());
  const int n = xv.dim(0), in = xv.dim(1), out_f = wv.dim(0);
  TensorT<T> out({n, out_f});
  gemm_nt(n, out_f, in, xv.data(), wv.data(), out.data(), false);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < out_f; ++c) out[static_cast<std::int64_t>(r) * out_f + c] += b.value()[c];
  auto px = x.node(), pw = w.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {px, pw, pb}, [px, pw, pb, n, in, out_f](Node<T>& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      gemm(n, in, out_f, self.grad.data(), pw->value.data(), px->grad.data(), true);
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      gemm_tn(out_f, in, n, self.grad.data(), px->value.data(), pw->grad.data(), true);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < out_f; ++c)
          pb->grad[c] += self.grad[static_cast<std::int64_t>(r) * out_f + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions (NCHW)
// ---------------------------------------------------------------------------

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col has shape [C*kh*kw, out_h*out_w]
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad, T* col) {
  const int oh = conv_out_dim(h, kh, stride, pad);
  const int ow = conv_out_dim(w, kw, stride, pad);
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + (static_cast<std::size_t>(ch) * kh * kw + ky * kw + kx) *
                           static_cast<std::size_t>(oh) * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            dst += ow;
            continue;
          }
          const T* src_row = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad, T* x) {
  const int oh = conv_out_dim(h, kh, stride, pad);
  const int ow = conv_out_dim(w, kw, stride, pad);
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + (static_cast<std::size_t>(ch) * kh * kw + ky * kw + kx) *
                                 static_cast<std::size_t>(oh) * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            src += ow;
            continue;
          }
          T* dst_row = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst_row[ix] += *src;
            ++src;
          }
        }
      }
}

}  // namespace detail

// x[N,Ci,H,W], w[Co,Ci,kh,kw], b[Co] (b may be undefined for no bias)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(1))
    throw ValidationError("conv2d: bad shapes " + xv.shape_str() + " w " + wv.shape_str());
  const int batch = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int oh = detail::conv_out_dim(h, kh, stride, pad);
  const int ow = detail::conv_out_dim(wd, kw, stride, pad);
  if (oh <= 0 || ow <= 0) throw ValidationError("conv2d: output would be empty");
  const int ck = ci * kh * kw;
  const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;

  TensorT<T> out({batch, co, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(ck) * plane);
  const bool has_bias = b.defined();
  for (int n = 0; n < batch; ++n) {
    detail::im2col(xv.data() + static_cast<std::size_t>(n) * ci * h * wd, ci, h, wd, kh, kw,
                   stride, pad, col.data());
    gemm(co, static_cast<int>(plane), ck, wv.data(), col.data(),
         out.data() + static_cast<std::size_t>(n) * co * plane, false);
  }
  if (has_bias) {
    for (int n = 0; n < batch; ++n)
      for (int c = 0; c < co; ++c) {
        T* dst = out.data() + (static_cast<std::size_t>(n) * co + c) * plane;
        const T bias = b.value()[c];
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += bias;
      }
  }

  auto px = x.node(), pw = w.node();
  auto pb = has_bias ? b.node() : nullptr;
  std::vector<NodePtr<T>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return detail::make_op<T>(
      std::move(out), std::move(parents),
      [px, pw, pb, batch, ci, h, wd, co, kh, kw, stride, pad, ck, plane](Node<T>& self) {
        std::vector<T> col(static_cast<std::size_t>(ck) * plane);
        for (int n = 0; n < batch; ++n) {
          const T* g = self.grad.data() + static_cast<std::size_t>(n) * co * plane;
          if (pw->requires_grad || px->requires_grad)
            detail::im2col(px->value.data() + static_cast<std::size_t>(n) * ci * h * wd, ci, h,
                           wd, kh, kw, stride, pad, col.data());
          if (pw->requires_grad) {
            pw->ensure_grad();
            gemm_nt(co, ck, static_cast<int>(plane), g, col.data(), pw->grad.data(), true);
          }
          if (px->requires_grad) {
            px->ensure_grad();
            // dcol = w^T * g, then scatter back
            std::vector<T> dcol(static_cast<std::size_t>(ck) * plane);
            gemm_tn(ck, static_cast<int>(plane), co, pw->value.data(), g, dcol.data(), false);
            detail::col2im(dcol.data(), ci, h, wd, kh, kw, stride, pad,
                           px->grad.data() + static_cast<std::size_t>(n) * ci * h * wd);
          }
          if (pb && pb->requires_grad) {
            pb->ensure_grad();
            for (int c = 0; c < co; ++c) {
              const T* gr = g + static_cast<std::size_t>(c) * plane;
              T s = 0;
              for (std::int64_t i = 0; i < plane; ++i) s += gr[i];
              pb->grad[c] += s;
            }
          }
        }
      });
}

// x[N,Ci,H,W], w[Ci,Co,kh,kw]; out spatial = (in-1)*stride - 2*pad + k + out_pad
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
                        int out_pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(0))
    throw ValidationError("conv_transpose2d: bad shapes " + xv.shape_str() + " w " + wv.shape_str());
  const int batch = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  const int oh = (h - 1) * stride - 2 * pad + kh + out_pad;
  const int ow = (wd - 1) * stride - 2 * pad + kw + out_pad;
  if (oh <= 0 || ow <= 0) throw ValidationError("conv_transpose2d: output would be empty");
  // sanity: the forward map must be the exact adjoint of conv2d(out -> in)
  if (detail::conv_out_dim(oh, kh, stride, pad) != h ||
      detail::conv_out_dim(ow, kw, stride, pad) != wd)
    throw ValidationError("conv_transpose2d: inconsistent geometry");
  const int ck = co * kh * kw;
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * wd;
  const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

  TensorT<T> out({batch, co, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(ck) * in_plane);
  const bool has_bias = b.defined();
  for (int n = 0; n < batch; ++n) {
    // col[ck, in_plane] = w^T[ck, ci] * x[ci, in_plane]
    gemm_tn(ck, static_cast<int>(in_plane), ci, wv.data(),
            xv.data() + static_cast<std::size_t>(n) * ci * in_plane, col.data(), false);
    detail::col2im(col.data(), co, oh, ow, kh, kw, stride, pad,
                   out.data() + static_cast<std::size_t>(n) * co * out_plane);
  }
  if (has_bias) {
    for (int n = 0; n < batch; ++n)
      for (int c = 0; c < co; ++c) {
        T* dst = out.data() + (static_cast<std::size_t>(n) * co + c) * out_plane;
        const T bias = b.value()[c];
        for (std::int64_t i = 0; i < out_plane; ++i) dst[i] += bias;
      }
  }

  auto px = x.node(), pw = w.node();
  auto pb = has_bias ? b.node() : nullptr;
  std::vector<NodePtr<T>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return detail::make_op<T>(
      std::move(out), std::move(parents),
      [px, pw, pb, batch, ci, h, wd, co, kh, kw, stride, pad, ck, in_plane, out_plane, oh,
       ow](Node<T>& self) {
        std::vector<T> gcol(static_cast<std::size_t>(ck) * in_plane);
        for (int n = 0; n < batch; ++n) {
          const T* g = self.grad.data() + static_cast<std::size_t>(n) * co * out_plane;
          detail::im2col(g, co, oh, ow, kh, kw, stride, pad, gcol.data());
          if (px->requires_grad) {
            px->ensure_grad();
            // dx[ci, in_plane] += w[ci, ck] * gcol[ck, in_plane]
            gemm(ci, static_cast<int>(in_plane), ck, pw->value.data(), gcol.data(),
                 px->grad.data() + static_cast<std::size_t>(n) * ci * in_plane, true);
          }
          if (pw->requires_grad) {
            pw->ensure_grad();
            // dw[ci, ck] += x[ci, in_plane] * gcol^T
            gemm_nt(ci, ck, static_cast<int>(in_plane),
                    px->value.data() + static_cast<std::size_t>(n) * ci * in_plane, gcol.data(),
                    pw->grad.data(), true);
          }
          if (pb && pb->requires_grad) {
            pb->ensure_grad();
            for (int c = 0; c < co; ++c) {
              const T* gr = g + static_cast<std::size_t>(c) * out_plane;
              T s = 0;
              for (std::int64_t i = 0; i < out_plane; ++i) s += gr[i];
              pb->grad[c] += s;
            }
          }
        }
      });
}

template <typename T>
Var<T> reflection_pad2d(const Var<T>& x, int p) {
  const auto& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("reflection_pad2d: expects NCHW");
  const int batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h <= p || w <= p) throw ValidationError("reflection_pad2d: pad too large");
  const int oh = h + 2 * p, ow = w + 2 * p;
  TensorT<T> out({batch, c, oh, ow});
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y) {
        const int sy = reflect101(y - p, h);
        for (int xx = 0; xx < ow; ++xx)
          out.at4(n, ch, y, xx) = xv.at4(n, ch, sy, reflect101(xx - p, w));
      }
  auto px = x.node();
  return detail::make_op<T>(std::move(out), {px}, [px, batch, c, h, w, p, oh, ow](Node<T>& self) {
    px->ensure_grad();
    for (int n = 0; n < batch; ++n)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y) {
          const int sy = reflect101(y - p, h);
          for (int xx = 0; xx < ow; ++xx)
            px->grad.at4(n, ch, sy, reflect101(xx - p, w)) += self.grad.at4(n, ch, y, xx);
        }
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int k, int stride) {
  const auto& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("max_pool2d: expects NCHW");
  const int batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = detail::conv_out_dim(h, k, stride, 0);
  const int ow = detail::conv_out_dim(w, k, stride, 0);
  if (oh <= 0 || ow <= 0) throw ValidationError("max_pool2d: output would be empty");
  TensorT<T> out({batch, c, oh, ow});
  auto indices = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.numel()));
  std::int64_t oi = 0;
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride + ky, ix = ox * stride + kx;
              if (iy >= h || ix >= w) continue;
              const std::int64_t idx =
                  ((static_cast<std::int64_t>(n) * c + ch) * h + iy) * w + ix;
              if (xv[idx] > best) {
                best = xv[idx];
                best_idx = idx;
              }
            }
          out[oi] = best;
          (*indices)[static_cast<std::size_t>(oi)] = best_idx;
        }
  auto px = x.node();
  return detail::make_op<T>(std::move(out), {px}, [px, indices](Node<T>& self) {
    px->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      px->grad[(*indices)[static_cast<std::size_t>(i)]] += self.grad[i];
  });
}

// count_include_pad=false average pooling (the multi-scale downsampler)
template <typename T>
Var<T> avg_pool2d(const Var<T>& x, int k, int stride, int pad) {
  const auto& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("avg_pool2d: expects NCHW");
  const int batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = detail::conv_out_dim(h, k, stride, pad);
  const int ow = detail::conv_out_dim(w, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw ValidationError("avg_pool2d: output would be empty");
  TensorT<T> out({batch, c, oh, ow});
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T sum = 0;
          int cnt = 0;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              sum += xv.at4(n, ch, iy, ix);
              ++cnt;
            }
          out.at4(n, ch, oy, ox) = cnt ? sum / static_cast<T>(cnt) : T(0);
        }
  auto px = x.node();
  return detail::make_op<T>(
      std::move(out), {px}, [px, batch, c, h, w, k, stride, pad, oh, ow](Node<T>& self) {
        px->ensure_grad();
        for (int n = 0; n < batch; ++n)
          for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) {
                int cnt = 0;
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) ++cnt;
                  }
                if (!cnt) continue;
                const T g = self.grad.at4(n, ch, oy, ox) / static_cast<T>(cnt);
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) px->grad.at4(n, ch, iy, ix) += g;
                  }
              }
      });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("global_avg_pool: expects NCHW");
  const int batch = xv.dim(0), c = xv.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  TensorT<T> out({batch, c});
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const T* src = xv.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
      T s = 0;
      for (std::int64_t i = 0; i < plane; ++i) s += src[i];
      out[static_cast<std::int64_t>(n) * c + ch] = s / static_cast<T>(plane);
    }
  auto px = x.node();
  return detail::make_op<T>(std::move(out), {px}, [px, batch, c, plane](Node<T>& self) {
    px->ensure_grad();
    for (int n = 0; n < batch; ++n)
      for (int ch = 0; ch < c; ++ch) {
        const T g = self.grad[static_cast<std::int64_t>(n) * c + ch] / static_cast<T>(plane);
        T* dst = px->grad.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
      }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3))
    throw ValidationError("concat_channels: incompatible shapes");
  const int batch = av.dim(0), ca = av.dim(1), cb = bv.dim(1), h = av.dim(2), w = av.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  TensorT<T> out({batch, ca + cb, h, w});
  for (int n = 0; n < batch; ++n) {
    std::copy_n(av.data() + static_cast<std::size_t>(n) * ca * plane, ca * plane,
                out.data() + static_cast<std::size_t>(n) * (ca + cb) * plane);
    std::copy_n(bv.data() + static_cast<std::size_t>(n) * cb * plane, cb * plane,
                out.data() + static_cast<std::size_t>(n) * (ca + cb) * plane + ca * plane);
  }
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {pa, pb}, [pa, pb, batch, ca, cb, plane](Node<T>& self) {
    for (int n = 0; n < batch; ++n) {
      const T* g = self.grad.data() + static_cast<std::size_t>(n) * (ca + cb) * plane;
      if (pa->requires_grad) {
        pa->ensure_grad();
        T* dst = pa->grad.data() + static_cast<std::size_t>(n) * ca * plane;
        for (std::int64_t i = 0; i < ca * plane; ++i) dst[i] += g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        T* dst = pb->grad.data() + static_cast<std::size_t>(n) * cb * plane;
        for (std::int64_t i = 0; i < cb * plane; ++i) dst[i] += g[ca * plane + i];
      }
    }
  });
}

// Per-(sample, channel) normalization over the spatial plane, with affine.
template <typename T>
Var<T> instance_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("instance_norm2d: expects NCHW");
  const int batch = xv.dim(0), c = xv.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  if (plane < 1) throw ValidationError("instance_norm2d: empty plane");

  TensorT<T> out(xv.shape());
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch) * c);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch) * c);
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
      const T* src = xv.data() + base;
      T mu = 0;
      for (std::int64_t i = 0; i < plane; ++i) mu += src[i];
      mu /= static_cast<T>(plane);
      T var = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(plane);
      const T istd = T(1) / std::sqrt(var + eps);
      (*mean)[static_cast<std::size_t>(n) * c + ch] = mu;
      (*inv_std)[static_cast<std::size_t>(n) * c + ch] = istd;
      const T g = gamma.value()[ch], bta = beta.value()[ch];
      T* dst = out.data() + base;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * istd * g + bta;
    }

  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return detail::make_op<T>(
      std::move(out), {px, pg, pb}, [px, pg, pb, batch, c, plane, mean, inv_std](Node<T>& self) {
        for (int n = 0; n < batch; ++n)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
            const T* xd = px->value.data() + base;
            const T* gd = self.grad.data() + base;
            const T mu = (*mean)[static_cast<std::size_t>(n) * c + ch];
            const T istd = (*inv_std)[static_cast<std::size_t>(n) * c + ch];
            const T g = pg->value[ch];

            T sum_g = 0, sum_gx = 0;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_g += gd[i];
              sum_gx += gd[i] * (xd[i] - mu) * istd;
            }
            if (pg->requires_grad) {
              pg->ensure_grad();
              pg->grad[ch] += sum_gx;
            }
            if (pb->requires_grad) {
              pb->ensure_grad();
              pb->grad[ch] += sum_g;
            }
            if (px->requires_grad) {
              px->ensure_grad();
              T* dx = px->grad.data() + base;
              const T inv_m = T(1) / static_cast<T>(plane);
              for (std::int64_t i = 0; i < plane; ++i) {
                const T xhat = (xd[i] - mu) * istd;
                dx[i] += g * istd * (gd[i] - inv_m * sum_g - inv_m * xhat * sum_gx);
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const std::int64_t n = x.value().numel();
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) s += x.value()[i];
  auto px = x.node();
  return detail::make_op<T>(TensorT<T>::scalar(s / static_cast<T>(n)), {px}, [px, n](Node<T>& self) {
    px->ensure_grad();
    const T g = self.grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) px->grad[i] += g;
  });
}

// mean((x - target)^2) against a constant target
template <typename T>
Var<T> mse_to_const(const Var<T>& x, T target) {
  const std::int64_t n = x.value().numel();
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = x.value()[i] - target;
    s += d * d;
  }
  auto px = x.node();
  return detail::make_op<T>(TensorT<T>::scalar(s / static_cast<T>(n)), {px},
                            [px, n, target](Node<T>& self) {
                              px->ensure_grad();
                              const T g = self.grad[0] * T(2) / static_cast<T>(n);
                              for (std::int64_t i = 0; i < n; ++i)
                                px->grad[i] += g * (px->value[i] - target);
                            });
}

// mean(|a - b|)
template <typename T>
Var<T> l1_diff(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "l1_diff");
  const std::int64_t n = a.value().numel();
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(TensorT<T>::scalar(s / static_cast<T>(n)), {pa, pb},
                            [pa, pb, n](Node<T>& self) {
                              const T g = self.grad[0] / static_cast<T>(n);
                              for (std::int64_t i = 0; i < n; ++i) {
                                const T d = pa->value[i] - pb->value[i];
                                const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                                if (pa->requires_grad) {
                                  pa->ensure_grad();
                                  pa->grad[i] += g * sgn;
                                }
                                if (pb->requires_grad) {
                                  pb->ensure_grad();
                                  pb->grad[i] -= g * sgn;
                                }
                              }
                            });
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& logits) {
  if (logits.ndim() != 2) throw ValidationError("softmax_rows: expects [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  TensorT<T> out(logits.shape());
  for (int r = 0; r < n; ++r) {
    const T* row = logits.data() + static_cast<std::size_t>(r) * c;
    T* dst = out.data() + static_cast<std::size_t>(r) * c;
    T mx = row[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
    T sum = 0;
    for (int i = 0; i < c; ++i) {
      dst[i] = std::exp(row[i] - mx);
      sum += dst[i];
    }
    for (int i = 0; i < c; ++i) dst[i] /= sum;
  }
  return out;
}

// Mean softmax cross-entropy over the batch.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& targets) {
  const auto& lv = logits.value();
  if (lv.ndim() != 2) throw ValidationError("cross_entropy: expects [N,C] logits");
  const int n = lv.dim(0), c = lv.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw ValidationError("cross_entropy: target count mismatch");
  auto probs = std::make_shared<TensorT<T>>(softmax_rows(lv));
  T loss = 0;
  for (int r = 0; r < n; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= c) throw ValidationError("cross_entropy: target out of range");
    const T p = (*probs)[static_cast<std::int64_t>(r) * c + t];
    loss -= std::log(std::max(p, std::numeric_limits<T>::min()));
  }
  loss /= static_cast<T>(n);
  auto px = logits.node();
  auto tgt = std::make_shared<std::vector<int>>(targets);
  return detail::make_op<T>(TensorT<T>::scalar(loss), {px}, [px, probs, tgt, n, c](Node<T>& self) {
    px->ensure_grad();
    const T g = self.grad[0] / static_cast<T>(n);
    for (int r = 0; r < n; ++r)
      for (int i = 0; i < c; ++i) {
        T v = (*probs)[static_cast<std::int64_t>(r) * c + i];
        if (i == (*tgt)[static_cast<std::size_t>(r)]) v -= T(1);
        px->grad[static_cast<std::int64_t>(r) * c + i] += g * v;
      }
  });
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Var<T>*>>;

template <typename T>
struct Conv2d {
  Var<T> weight;  // [Co,Ci,kh,kw]
  Var<T> bias;    // [Co]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng, double init_std = 0.0)
      : stride(stride_), pad(pad_) {
    TensorT<T> w({out_ch, in_ch, k, k});
    const double std_dev =
        init_std > 0 ? init_std : std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std_dev));
    weight = Var<T>(std::move(w), true);
    bias = Var<T>(TensorT<T>({out_ch}), true);
  }

  Var<T> forward(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight;  // [Ci,Co,kh,kw]
  Var<T> bias;    // [Co]
  int stride = 1;
  int pad = 0;
  int out_pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in_ch, int out_ch, int k, int stride_, int pad_, int out_pad_, Rng& rng,
                  double init_std = 0.0)
      : stride(stride_), pad(pad_), out_pad(out_pad_) {
    TensorT<T> w({in_ch, out_ch, k, k});
    const double std_dev =
        init_std > 0 ? init_std : std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std_dev));
    weight = Var<T>(std::move(w), true);
    bias = Var<T>(TensorT<T>({out_ch}), true);
  }

  Var<T> forward(const Var<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad, out_pad);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

template <typename T>
struct Linear {
  Var<T> weight;  // [O,I]
  Var<T> bias;    // [O]

  Linear() = default;
  Linear(int in_f, int out_f, Rng& rng) {
    TensorT<T> w({out_f, in_f});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_f));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std_dev));
    weight = Var<T>(std::move(w), true);
    bias = Var<T>(TensorT<T>({out_f}), true);
  }

  Var<T> forward(const Var<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

template <typename T>
struct InstanceNorm2d {
  Var<T> gamma;
  Var<T> beta;
  T eps = T(1e-5);

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(int channels) {
    gamma = Var<T>(TensorT<T>::full({channels}, T(1)), true);
    beta = Var<T>(TensorT<T>({channels}), true);
  }

  Var<T> forward(const Var<T>& x) const { return instance_norm2d(x, gamma, beta, eps); }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(std::vector<Var<T>*> params, double lr) : params_(std::move(params)), lr_(lr) {}
  virtual ~Optimizer() = default;

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  virtual void step() = 0;

 protected:
  std::vector<Var<T>*> params_;
  double lr_;
};

template <typename T>
class Sgd : public Optimizer<T> {
 public:
  using Optimizer<T>::Optimizer;

  void step() override {
    for (auto* p : this->params_) {
      auto& v = p->value();
      const auto& g = p->grad();
      for (std::int64_t i = 0; i < v.numel(); ++i) v[i] -= static_cast<T>(this->lr_) * g[i];
    }
  }
};

template <typename T>
class Adam : public Optimizer<T> {
 public:
  Adam(std::vector<Var<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : Optimizer<T>(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(this->params_.size());
    v_.resize(this->params_.size());
    for (std::size_t i = 0; i < this->params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(this->params_[i]->value().numel()), T(0));
      v_[i].assign(static_cast<std::size_t>(this->params_[i]->value().numel()), T(0));
    }
  }

  void step() override {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t pi = 0; pi < this->params_.size(); ++pi) {
      auto& val = this->params_[pi]->value();
      const auto& g = this->params_[pi]->grad();
      for (std::int64_t i = 0; i < val.numel(); ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        m_[pi][ui] = static_cast<T>(beta1_ * m_[pi][ui] + (1.0 - beta1_) * g[i]);
        v_[pi][ui] = static_cast<T>(beta2_ * v_[pi][ui] + (1.0 - beta2_) * g[i] * g[i]);
        const double mhat = m_[pi][ui] / bc1;
        const double vhat = v_[pi][ui] / bc2;
        val[i] -= static_cast<T>(this->lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

template <typename T>
class RmsProp : public Optimizer<T> {
 public:
  RmsProp(std::vector<Var<T>*> params, double lr, double alpha = 0.99, double eps = 1e-8)
      : Optimizer<T>(std::move(params), lr), alpha_(alpha), eps_(eps) {
    sq_.resize(this->params_.size());
    for (std::size_t i = 0; i < this->params_.size(); ++i)
      sq_[i].assign(static_cast<std::size_t>(this->params_[i]->value().numel()), T(0));
  }

  void step() override {
    for (std::size_t pi = 0; pi < this->params_.size(); ++pi) {
      auto& val = this->params_[pi]->value();
      const auto& g = this->params_[pi]->grad();
      for (std::int64_t i = 0; i < val.numel(); ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        sq_[pi][ui] = static_cast<T>(alpha_ * sq_[pi][ui] + (1.0 - alpha_) * g[i] * g[i]);
        val[i] -= static_cast<T>(this->lr_ * g[i] / (std::sqrt(static_cast<double>(sq_[pi][ui])) + eps_));
      }
    }
  }

 private:
  double alpha_, eps_;
  std::vector<std::vector<T>> sq_;
};

// ---------------------------------------------------------------------------
// Parameter (de)serialization: a flat named-tensor container shared by
// classifier and synthesis checkpoints.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointMagic = 0x54584e31;  // "TXN1"

template <typename T>
void save_parameters(std::ostream& out, const NamedParams<T>& params) {
  auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  write_u32(kCheckpointMagic);
  write_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, var] : params) {
    write_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& t = var->value();
    write_u32(static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) write_u32(static_cast<std::uint32_t>(d));
    // stored as float regardless of the in-memory scalar
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const float f = static_cast<float>(t[i]);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
}

template <typename T>
void load_parameters(std::istream& in, const NamedParams<T>& params) {
  auto read_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw ParseError("checkpoint: truncated");
    return v;
  };
  if (read_u32() != kCheckpointMagic) throw ParseError("checkpoint: bad magic");
  const std::uint32_t count = read_u32();
  if (count != params.size())
    throw ParseError("checkpoint: expected " + std::to_string(params.size()) +
                     " tensors, file has " + std::to_string(count));
  for (const auto& [name, var] : params) {
    const std::uint32_t name_len = read_u32();
    std::string file_name(name_len, '\0');
    in.read(file_name.data(), name_len);
    if (file_name != name)
      throw ParseError("checkpoint: tensor '" + file_name + "' where '" + name + "' expected");
    const std::uint32_t ndim = read_u32();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32());
    if (shape != var->value().shape())
      throw ParseError("checkpoint: shape mismatch for " + name);
    auto& t = var->value();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      float f = 0;
      in.read(reinterpret_cast<char*>(&f), 4);
      t[i] = static_cast<T>(f);
    }
    if (!in) throw ParseError("checkpoint: truncated tensor data for " + name);
  }
}

}  // namespace trainext::nn
