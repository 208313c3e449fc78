#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "params.hpp"
#include "tensor.hpp"

namespace autopose {

// Define-by-run reverse-mode autodiff over Tensor<T>. A Tape is built per
// forward pass and discarded. Nodes are indices into a flat vector; backward
// closures only capture indices, so the nodes vector may reallocate freely.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated iff needs_grad
    BackFn backward;
    bool needs_grad = false;
  };

  int leaf(Tensor<T> v, bool needs_grad = false) {
    return push(std::move(v), needs_grad, nullptr);
  }

  // Imports a parameter. Repeated uses of the same Param return the same
  // node, so shared parameters accumulate gradients from every use site.
  int use(Param<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    int id = push(p.value, true, nullptr);
    param_nodes_.emplace(&p, id);
    bound_.push_back({&p, id});
    return id;
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T>& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  int push(Tensor<T> v, bool needs_grad, BackFn fn) {
    Node n;
    n.value = std::move(v);
    if (needs_grad) n.grad = Tensor<T>(n.value.shape);
    n.needs_grad = needs_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Seeds d(root)=1 and propagates to every ancestor, then adds the
  // resulting gradients into the bound Params' grad tensors.
  void backward(int root) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (!r.needs_grad) throw std::runtime_error("backward: root does not require grad");
    if (r.value.numel() != 1) throw std::runtime_error("backward: root must be scalar");
    r.grad.data[0] = T(1);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.needs_grad && n.backward) n.backward(*this, id);
    }
    for (auto& [p, id] : bound_) p->grad += nodes_[static_cast<std::size_t>(id)].grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> param_nodes_;
  std::vector<std::pair<Param<T>*, int>> bound_;
};

namespace detail {
template <typename T>
inline T softplus(T x) {
  // log(1 + e^x), stable for large |x|
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}
template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}
}  // namespace detail

// ---------- elementwise ----------

template <typename T>
int add(Tape<T>& t, int a, int b) {
  if (!t.val(a).same_shape(t.val(b))) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out = t.val(a);
  out += t.val(b);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), ng, [a, b](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(b)) tp.grad(b) += g;
  });
}

template <typename T>
int add_n(Tape<T>& t, const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("add_n: empty");
  int acc = ids[0];
  for (std::size_t i = 1; i < ids.size(); ++i) acc = add(t, acc, ids[i]);
  return acc;
}

template <typename T>
int mul(Tape<T>& t, int a, int b) {
  if (!t.val(a).same_shape(t.val(b))) throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> out = t.val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] *= t.val(b).data[i];
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), ng, [a, b](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * tp.val(b).data[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::int64_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * tp.val(a).data[i];
    }
  });
}

template <typename T>
int scale(Tape<T>& t, int a, double c) {
  Tensor<T> out = t.val(a);
  for (auto& v : out.data) v = static_cast<T>(v * c);
  return t.push(std::move(out), t.needs_grad(a), [a, c](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    auto& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += static_cast<T>(g.data[i] * c);
  });
}

// a + k where k is a constant tensor (no gradient to k).
template <typename T>
int add_const(Tape<T>& t, int a, const Tensor<T>& k) {
  if (!t.val(a).same_shape(k)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor<T> out = t.val(a);
  out += k;
  return t.push(std::move(out), t.needs_grad(a),
                [a](Tape<T>& tp, int id) { tp.grad(a) += tp.grad(id); });
}

template <typename T>
int relu(Tape<T>& t, int a) {
  Tensor<T> out = t.val(a);
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    const auto& x = tp.val(a);
    auto& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (x.data[i] > T(0)) ga.data[i] += g.data[i];
  });
}

template <typename T>
int sigmoid(Tape<T>& t, int a) {
  Tensor<T> out = t.val(a);
  for (auto& v : out.data) v = detail::sigmoid(v);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    const auto& y = tp.val(id);
    auto& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      ga.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
  });
}

template <typename T>
int tanh_op(Tape<T>& t, int a) {
  Tensor<T> out = t.val(a);
  for (auto& v : out.data) v = std::tanh(v);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    const auto& y = tp.val(id);
    auto& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      ga.data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
  });
}

// ---------- small-vector ops (architecture logits, controller) ----------

template <typename T>
int softmax_vec(Tape<T>& t, int a) {
  const auto& x = t.val(a);
  Tensor<T> out(x.shape);
  T m = x.data[0];
  for (T v : x.data) m = std::max(m, v);
  T s = T(0);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    out.data[i] = std::exp(x.data[i] - m);
    s += out.data[i];
  }
  for (auto& v : out.data) v /= s;
  return t.push(std::move(out), t.needs_grad(a), [a](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    const auto& y = tp.val(id);
    T dot = T(0);
    for (std::int64_t i = 0; i < g.numel(); ++i) dot += g.data[i] * y.data[i];
    auto& ga = tp.grad(a);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      ga.data[i] += y.data[i] * (g.data[i] - dot);
  });
}

// out = sum_k w[k] * x_k. All x_k share a shape; w is a vector of length k.
template <typename T>
int weighted_sum(Tape<T>& t, const std::vector<int>& xs, int w) {
  if (xs.empty()) throw std::invalid_argument("weighted_sum: no inputs");
  if (t.val(w).numel() != static_cast<std::int64_t>(xs.size()))
    throw std::invalid_argument("weighted_sum: weight length mismatch");
  for (int x : xs)
    if (!t.val(x).same_shape(t.val(xs[0])))
      throw std::invalid_argument("weighted_sum: input shape mismatch");
  Tensor<T> out(t.val(xs[0]).shape);
  const auto& wv = t.val(w);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& x = t.val(xs[k]);
    const T wk = wv.data[k];
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] += wk * x.data[i];
  }
  bool ng = t.needs_grad(w);
  for (int x : xs) ng = ng || t.needs_grad(x);
  auto xs_c = xs;
  return t.push(std::move(out), ng, [xs_c, w](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    const auto& wv = tp.val(w);
    for (std::size_t k = 0; k < xs_c.size(); ++k) {
      if (tp.needs_grad(xs_c[k])) {
        auto& gx = tp.grad(xs_c[k]);
        const T wk = wv.data[k];
        for (std::int64_t i = 0; i < g.numel(); ++i) gx.data[i] += wk * g.data[i];
      }
      if (tp.needs_grad(w)) {
        const auto& x = tp.val(xs_c[k]);
        T d = T(0);
        for (std::int64_t i = 0; i < g.numel(); ++i) d += g.data[i] * x.data[i];
        tp.grad(w).data[k] += d;
      }
    }
  });
}

// y = W x + b, x a vector {I}, W {O,I}, b {O}; pass b = -1 for no bias.
template <typename T>
int linear(Tape<T>& t, int x, int w, int b) {
  const auto& xv = t.val(x);
  const auto& wv = t.val(w);
  const int I = wv.shape[1], O = wv.shape[0];
  if (xv.numel() != I) throw std::invalid_argument("linear: input size mismatch");
  Tensor<T> out({O});
  for (int o = 0; o < O; ++o) {
    T acc = b >= 0 ? t.val(b).data[o] : T(0);
    const T* row = wv.data.data() + static_cast<std::size_t>(o) * I;
    for (int i = 0; i < I; ++i) acc += row[i] * xv.data[i];
    out.data[o] = acc;
  }
  bool ng = t.needs_grad(x) || t.needs_grad(w) || (b >= 0 && t.needs_grad(b));
  return t.push(std::move(out), ng, [x, w, b, I, O](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    if (b >= 0 && tp.needs_grad(b)) tp.grad(b) += g;
    if (tp.needs_grad(w)) {
      auto& gw = tp.grad(w);
      const auto& xv = tp.val(x);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
          gw.data[static_cast<std::size_t>(o) * I + i] += g.data[o] * xv.data[i];
    }
    if (tp.needs_grad(x)) {
      auto& gx = tp.grad(x);
      const auto& wv = tp.val(w);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i)
          gx.data[i] += wv.data[static_cast<std::size_t>(o) * I + i] * g.data[o];
    }
  });
}

template <typename T>
int chunk(Tape<T>& t, int a, int offset, int len) {
  const auto& x = t.val(a);
  if (offset < 0 || offset + len > x.numel()) throw std::invalid_argument("chunk: out of range");
  Tensor<T> out({len});
  std::copy(x.data.begin() + offset, x.data.begin() + offset + len, out.data.begin());
  return t.push(std::move(out), t.needs_grad(a), [a, offset, len](Tape<T>& tp, int id) {
    const auto& g = tp.grad(id);
    auto& ga = tp.grad(a);
    for (int i = 0; i < len; ++i) ga.data[offset + i] += g.data[i];
  });
}

// ---------- losses / likelihoods ----------

// Mean squared error over visible-keypoint channels. pred/target {N,K,H,W},
// vis {N,K} with entries 0/1. Invisible channels contribute nothing to the
// loss or its gradient; the mean is taken over visible channels only.
template <typename T>
int mse_masked(Tape<T>& t, int pred, const Tensor<T>& target, const Tensor<T>& vis) {
  const auto& p = t.val(pred);
  if (!p.same_shape(target)) throw std::invalid_argument("mse_masked: shape mismatch");
  const int N = p.shape[0], K = p.shape[1], H = p.shape[2], W = p.shape[3];
  if (vis.shape != std::vector<int>{N, K}) throw std::invalid_argument("mse_masked: bad vis shape");
  std::int64_t visible = 0;
  for (T v : vis.data) visible += v > T(0) ? 1 : 0;
  const double denom = static_cast<double>(visible) * H * W;
  double acc = 0.0;
  if (visible > 0) {
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) {
        if (!(vis.data[static_cast<std::size_t>(n) * K + k] > T(0))) continue;
        const std::size_t base = (static_cast<std::size_t>(n) * K + k) * H * W;
        for (int i = 0; i < H * W; ++i) {
          const double d = static_cast<double>(p.data[base + i]) - target.data[base + i];
          acc += d * d;
        }
      }
    acc /= denom;
  }
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(acc);
  Tensor<T> tgt = target, vv = vis;
  return t.push(std::move(out), t.needs_grad(pred),
                [pred, tgt, vv, denom, visible](Tape<T>& tp, int id) {
                  if (visible == 0) return;
                  const T g = tp.grad(id).data[0];
                  const auto& p = tp.val(pred);
                  auto& gp = tp.grad(pred);
                  const int N = p.shape[0], K = p.shape[1], HW = p.shape[2] * p.shape[3];
                  for (int n = 0; n < N; ++n)
                    for (int k = 0; k < K; ++k) {
                      if (!(vv.data[static_cast<std::size_t>(n) * K + k] > T(0))) continue;
                      const std::size_t base = (static_cast<std::size_t>(n) * K + k) * HW;
                      for (int i = 0; i < HW; ++i)
                        gp.data[base + i] += static_cast<T>(
                            g * 2.0 * (p.data[base + i] - tgt.data[base + i]) / denom);
                    }
                });
}

// log P(bits) under independent Bernoullis with the given logits.
template <typename T>
int bernoulli_logprob(Tape<T>& t, int logits, const std::vector<int>& bits) {
  const auto& l = t.val(logits);
  if (l.numel() != static_cast<std::int64_t>(bits.size()))
    throw std::invalid_argument("bernoulli_logprob: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const T x = l.data[i];
    acc -= bits[i] ? detail::softplus(-x) : detail::softplus(x);
  }
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(acc);
  return t.push(std::move(out), t.needs_grad(logits), [logits, bits](Tape<T>& tp, int id) {
    const T g = tp.grad(id).data[0];
    const auto& l = tp.val(logits);
    auto& gl = tp.grad(logits);
    for (std::size_t i = 0; i < bits.size(); ++i)
      gl.data[i] += g * (static_cast<T>(bits[i]) - detail::sigmoid(l.data[i]));
  });
}

// Sum of per-bit Bernoulli entropies (nats).
template <typename T>
int bernoulli_entropy(Tape<T>& t, int logits) {
  const auto& l = t.val(logits);
  double acc = 0.0;
  for (std::int64_t i = 0; i < l.numel(); ++i) {
    const T x = l.data[i];
    const T p = detail::sigmoid(x);
    acc += p * detail::softplus(-x) + (T(1) - p) * detail::softplus(x);
  }
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(acc);
  return t.push(std::move(out), t.needs_grad(logits), [logits](Tape<T>& tp, int id) {
    const T g = tp.grad(id).data[0];
    const auto& l = tp.val(logits);
    auto& gl = tp.grad(logits);
    for (std::int64_t i = 0; i < l.numel(); ++i) {
      const T p = detail::sigmoid(l.data[i]);
      gl.data[i] += g * (-l.data[i] * p * (T(1) - p));
    }
  });
}

template <typename T>
int categorical_logprob(Tape<T>& t, int logits, int idx) {
  const auto& l = t.val(logits);
  if (idx < 0 || idx >= l.numel()) throw std::invalid_argument("categorical_logprob: bad index");
  T m = l.data[0];
  for (T v : l.data) m = std::max(m, v);
  double s = 0.0;
  for (T v : l.data) s += std::exp(static_cast<double>(v - m));
  const double lse = m + std::log(s);
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(l.data[idx] - lse);
  return t.push(std::move(out), t.needs_grad(logits), [logits, idx](Tape<T>& tp, int id) {
    const T g = tp.grad(id).data[0];
    const auto& l = tp.val(logits);
    T m = l.data[0];
    for (T v : l.data) m = std::max(m, v);
    double s = 0.0;
    for (T v : l.data) s += std::exp(static_cast<double>(v - m));
    auto& gl = tp.grad(logits);
    for (std::int64_t k = 0; k < l.numel(); ++k) {
      const double p = std::exp(static_cast<double>(l.data[k] - m)) / s;
      gl.data[k] += g * static_cast<T>((k == idx ? 1.0 : 0.0) - p);
    }
  });
}

template <typename T>
int categorical_entropy(Tape<T>& t, int logits) {
  const auto& l = t.val(logits);
  T m = l.data[0];
  for (T v : l.data) m = std::max(m, v);
  double s = 0.0;
  for (T v : l.data) s += std::exp(static_cast<double>(v - m));
  const double lse = m + std::log(s);
  double mean_l = 0.0;
  for (T v : l.data) mean_l += std::exp(static_cast<double>(v - m)) / s * v;
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(lse - mean_l);
  return t.push(std::move(out), t.needs_grad(logits), [logits](Tape<T>& tp, int id) {
    const T g = tp.grad(id).data[0];
    const auto& l = tp.val(logits);
    T m = l.data[0];
    for (T v : l.data) m = std::max(m, v);
    double s = 0.0;
    for (T v : l.data) s += std::exp(static_cast<double>(v - m));
    double mean_l = 0.0;
    for (std::int64_t k = 0; k < l.numel(); ++k)
      mean_l += std::exp(static_cast<double>(l.data[k] - m)) / s * l.data[k];
    auto& gl = tp.grad(logits);
    for (std::int64_t k = 0; k < l.numel(); ++k) {
      const double p = std::exp(static_cast<double>(l.data[k] - m)) / s;
      gl.data[k] += g * static_cast<T>(-p * (l.data[k] - mean_l));
    }
  });
}

}  // namespace autopose
