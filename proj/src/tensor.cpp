// Copyright 2026 The mixce Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mixce/tensor.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mixce {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

using ImplPtr = std::shared_ptr<TensorImpl>;

std::span<float> grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
  return t.grad;
}

Tensor make_result(Shape shape, std::vector<float> data, OpKind op,
                   std::vector<ImplPtr> inputs,
                   std::function<void(const TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<GraphNode>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* what) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument(std::string(what) + ": axis out of range");
  }
  return axis;
}

struct AxisSplit {
  size_t outer = 1;
  size_t n = 1;
  size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kBatchMatMul: return "batch_matmul";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kDropout: return "dropout";
    case OpKind::kReshape: return "reshape";
    case OpKind::kPermute: return "permute";
    case OpKind::kMaskedFill: return "masked_fill";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kWeightedSum: return "weighted_sum";
  }
  return "?";
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match " + std::to_string(data.size()) +
                                " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

int Tensor::dim(int axis) const {
  return impl_->shape.at(normalize_axis(axis, rank(), "Tensor::dim"));
}

float Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor with " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

std::span<float> Tensor::mutable_grad() { return grad_buffer(*impl_); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
  return from(impl_->shape, impl_->data, false);
}

Tensor Tensor::clone() const {
  auto t = from(impl_->shape, impl_->data, impl_->requires_grad);
  t.impl_->grad = impl_->grad;
  return t;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- autodiff driver ------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar");
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not depend on any tensor requiring grad");
  }

  // Iterative post-order DFS gives a topological order of graph nodes.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const size_t n_inputs = t->node ? t->node->inputs.size() : 0;
    if (next < n_inputs) {
      TensorImpl* in = t->node->inputs[next++].get();
      if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  for (TensorImpl* t : order) {
    if (t->node) {
      t->grad.assign(t->data.size(), 0.0f);
    } else {
      grad_buffer(*t);
    }
  }
  loss.impl()->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node) t->node->backward(*t);
  }
}

double check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                       double h) {
  if (h <= 0) throw std::invalid_argument("check_gradients: h must be positive");
  if (!x.is_leaf()) throw std::invalid_argument("check_gradients: x must be a leaf tensor");
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  backward(y);
  std::vector<float> analytic(x.grad().begin(), x.grad().end());
  const float y0 = y.item();

  NoGradGuard no_grad;
  const float y1 = f(x).item();
  if (y0 != y1) {
    throw std::invalid_argument("check_gradients: f is not deterministic (" +
                                std::to_string(y0) + " vs " + std::to_string(y1) + ")");
  }
  auto values = x.mutable_data();
  double worst = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    const float orig = values[i];
    values[i] = static_cast<float>(orig + h);
    const double up = f(x).item();
    values[i] = static_cast<float>(orig - h);
    const double down = f(x).item();
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(double{analytic[i]}));
    worst = std::max(worst, err);
  }
  return worst;
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), OpKind::kAdd, {ai, bi},
                     [ai, bi](const TensorImpl& o) {
                       for (auto* in : {ai.get(), bi.get()}) {
                         if (!in->requires_grad) continue;
                         auto g = grad_buffer(*in);
                         for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), OpKind::kSub, {ai, bi},
                     [ai, bi](const TensorImpl& o) {
                       if (ai->requires_grad) {
                         auto g = grad_buffer(*ai);
                         for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                       if (bi->requires_grad) {
                         auto g = grad_buffer(*bi);
                         for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), OpKind::kMul, {ai, bi},
                     [ai, bi](const TensorImpl& o) {
                       if (ai->requires_grad) {
                         auto g = grad_buffer(*ai);
                         for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
                       }
                       if (bi->requires_grad) {
                         auto g = grad_buffer(*bi);
                         for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
                       }
                     });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), OpKind::kScale, {xi},
                     [xi, factor](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) +
                                " does not match " + shape_str(x.shape()));
  }
  const size_t n = bias.numel();
  const size_t rows = x.numel() / n;
  std::vector<float> out(x.data().begin(), x.data().end());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < n; ++j) out[r * n + j] += bias.at(j);
  auto xi = x.impl(), bi = bias.impl();
  return make_result(x.shape(), std::move(out), OpKind::kAddBias, {xi, bi},
                     [xi, bi, rows, n](const TensorImpl& o) {
                       if (xi->requires_grad) {
                         auto g = grad_buffer(*xi);
                         for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                       if (bi->requires_grad) {
                         auto g = grad_buffer(*bi);
                         for (size_t r = 0; r < rows; ++r)
                           for (size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
                       }
                     });
}

// ---- matrix products ------------------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& w, bool transpose_w) {
  if (w.rank() != 2) throw std::invalid_argument("matmul: weight must be rank 2");
  const int k = x.shape().back();
  const int wk = transpose_w ? w.dim(1) : w.dim(0);
  const int n = transpose_w ? w.dim(0) : w.dim(1);
  if (k != wk) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(x.shape()) +
                                " x " + shape_str(w.shape()));
  }
  const int m = static_cast<int>(x.numel() / k);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<float> out(static_cast<size_t>(m) * n);
  ConstMap xm(x.data().data(), m, k);
  ConstMap wm(w.data().data(), w.dim(0), w.dim(1));
  MutMap om(out.data(), m, n);
  if (transpose_w) {
    om.noalias() = xm * wm.transpose();
  } else {
    om.noalias() = xm * wm;
  }
  auto xi = x.impl(), wi = w.impl();
  return make_result(std::move(out_shape), std::move(out), OpKind::kMatMul, {xi, wi},
                     [xi, wi, m, k, n, transpose_w](const TensorImpl& o) {
                       ConstMap go(o.grad.data(), m, n);
                       ConstMap wm(wi->data.data(), wi->shape[0], wi->shape[1]);
                       if (xi->requires_grad) {
                         MutMap gx(grad_buffer(*xi).data(), m, k);
                         if (transpose_w) {
                           gx.noalias() += go * wm;
                         } else {
                           gx.noalias() += go * wm.transpose();
                         }
                       }
                       if (wi->requires_grad) {
                         ConstMap xm(xi->data.data(), m, k);
                         MutMap gw(grad_buffer(*wi).data(), wi->shape[0], wi->shape[1]);
                         if (transpose_w) {
                           gw.noalias() += go.transpose() * xm;
                         } else {
                           gw.noalias() += xm.transpose() * go;
                         }
                       }
                     });
}

Tensor batch_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("batch_matmul: expected rank-3 operands with equal batch, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int bk = transpose_b ? b.dim(2) : b.dim(1);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  if (k != bk) throw std::invalid_argument("batch_matmul: inner dimensions differ");
  std::vector<float> out(static_cast<size_t>(g) * m * n);
  const int br = b.dim(1), bc = b.dim(2);
  for (int i = 0; i < g; ++i) {
    ConstMap am(a.data().data() + static_cast<size_t>(i) * m * k, m, k);
    ConstMap bm(b.data().data() + static_cast<size_t>(i) * br * bc, br, bc);
    MutMap om(out.data() + static_cast<size_t>(i) * m * n, m, n);
    if (transpose_b) {
      om.noalias() = am * bm.transpose();
    } else {
      om.noalias() = am * bm;
    }
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result(
      {g, m, n}, std::move(out), OpKind::kBatchMatMul, {ai, bi},
      [ai, bi, g, m, k, n, br, bc, transpose_b](const TensorImpl& o) {
        for (int i = 0; i < g; ++i) {
          ConstMap go(o.grad.data() + static_cast<size_t>(i) * m * n, m, n);
          if (ai->requires_grad) {
            ConstMap bm(bi->data.data() + static_cast<size_t>(i) * br * bc, br, bc);
            MutMap ga(grad_buffer(*ai).data() + static_cast<size_t>(i) * m * k, m, k);
            if (transpose_b) {
              ga.noalias() += go * bm;
            } else {
              ga.noalias() += go * bm.transpose();
            }
          }
          if (bi->requires_grad) {
            ConstMap am(ai->data.data() + static_cast<size_t>(i) * m * k, m, k);
            MutMap gb(grad_buffer(*bi).data() + static_cast<size_t>(i) * br * bc, br, bc);
            if (transpose_b) {
              gb.noalias() += go.transpose() * am;
            } else {
              gb.noalias() += am.transpose() * go;
            }
          }
        }
      });
}

// ---- nonlinearities -------------------------------------------------------

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0.0f ? x.at(i) : 0.0f;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), OpKind::kRelu, {xi},
                     [xi](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < g.size(); ++i)
                         if (xi->data[i] > 0.0f) g[i] += o.grad[i];
                     });
}

namespace {

// Shared forward for softmax and log_softmax; returns probabilities or
// log-probabilities depending on `log_output`.
std::vector<float> softmax_forward(const Tensor& x, const AxisSplit& s, bool log_output) {
  std::vector<float> out(x.numel());
  const auto in = x.data();
  for (size_t o = 0; o < s.outer; ++o) {
    for (size_t i = 0; i < s.inner; ++i) {
      const size_t base = o * s.n * s.inner + i;
      float mx = in[base];
      for (size_t j = 1; j < s.n; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0.0;
      for (size_t j = 0; j < s.n; ++j) total += std::exp(double{in[base + j * s.inner]} - mx);
      const double log_total = std::log(total);
      for (size_t j = 0; j < s.n; ++j) {
        const size_t idx = base + j * s.inner;
        const double lp = double{in[idx]} - mx - log_total;
        out[idx] = static_cast<float>(log_output ? lp : std::exp(lp));
      }
    }
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_axis(x.shape(), axis);
  auto out = softmax_forward(x, s, false);
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), OpKind::kSoftmax, {xi},
                     [xi, s](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t a = 0; a < s.outer; ++a) {
                         for (size_t i = 0; i < s.inner; ++i) {
                           const size_t base = a * s.n * s.inner + i;
                           double dot = 0.0;
                           for (size_t j = 0; j < s.n; ++j) {
                             const size_t idx = base + j * s.inner;
                             dot += double{o.grad[idx]} * o.data[idx];
                           }
                           for (size_t j = 0; j < s.n; ++j) {
                             const size_t idx = base + j * s.inner;
                             g[idx] += static_cast<float>(o.data[idx] * (o.grad[idx] - dot));
                           }
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "log_softmax");
  const auto in = x.data();
  for (size_t i = 0; i < in.size(); ++i) {
    if (!std::isfinite(in[i])) {
      throw std::domain_error("log_softmax: non-finite input at flat index " +
                                  std::to_string(i) + " of " + shape_str(x.shape()));
    }
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  auto out = softmax_forward(x, s, true);
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), OpKind::kLogSoftmax, {xi},
                     [xi, s](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t a = 0; a < s.outer; ++a) {
                         for (size_t i = 0; i < s.inner; ++i) {
                           const size_t base = a * s.n * s.inner + i;
                           double total = 0.0;
                           for (size_t j = 0; j < s.n; ++j) total += o.grad[base + j * s.inner];
                           for (size_t j = 0; j < s.n; ++j) {
                             const size_t idx = base + j * s.inner;
                             g[idx] += static_cast<float>(o.grad[idx] - std::exp(double{o.data[idx]}) * total);
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const int n = x.shape().back();
  if (gain.numel() != static_cast<size_t>(n) || bias.numel() != static_cast<size_t>(n)) {
    throw std::invalid_argument("layer_norm: gain/bias size does not match last axis");
  }
  const size_t rows = x.numel() / n;
  std::vector<float> out(x.numel());
  auto normalized = std::make_shared<std::vector<float>>(x.numel());
  auto rstd = std::make_shared<std::vector<float>>(rows);
  const auto in = x.data();
  for (size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += in[r * n + j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = in[r * n + j] - mu;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = static_cast<float>(inv);
    for (int j = 0; j < n; ++j) {
      const float xh = static_cast<float>((in[r * n + j] - mu) * inv);
      (*normalized)[r * n + j] = xh;
      out[r * n + j] = xh * gain.at(j) + bias.at(j);
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return make_result(
      x.shape(), std::move(out), OpKind::kLayerNorm, {xi, gi, bi},
      [xi, gi, bi, normalized, rstd, rows, n](const TensorImpl& o) {
        const auto& xh = *normalized;
        if (gi->requires_grad || bi->requires_grad) {
          std::vector<double> dg(n, 0.0), db(n, 0.0);
          for (size_t r = 0; r < rows; ++r)
            for (int j = 0; j < n; ++j) {
              dg[j] += double{o.grad[r * n + j]} * xh[r * n + j];
              db[j] += o.grad[r * n + j];
            }
          if (gi->requires_grad) {
            auto g = grad_buffer(*gi);
            for (int j = 0; j < n; ++j) g[j] += static_cast<float>(dg[j]);
          }
          if (bi->requires_grad) {
            auto g = grad_buffer(*bi);
            for (int j = 0; j < n; ++j) g[j] += static_cast<float>(db[j]);
          }
        }
        if (xi->requires_grad) {
          auto g = grad_buffer(*xi);
          std::vector<double> dxh(n);
          for (size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (int j = 0; j < n; ++j) {
              dxh[j] = double{o.grad[r * n + j]} * gi->data[j];
              s1 += dxh[j];
              s2 += dxh[j] * xh[r * n + j];
            }
            const double inv = (*rstd)[r];
            for (int j = 0; j < n; ++j) {
              g[r * n + j] += static_cast<float>(inv / n * (n * dxh[j] - s1 - xh[r * n + j] * s2));
            }
          }
        }
      });
}

// ---- indexing and layout --------------------------------------------------

Tensor embedding(const Tensor& weight, std::span<const int> ids, const Shape& out_shape) {
  if (weight.rank() != 2) throw std::invalid_argument("embedding: weight must be rank 2");
  if (shape_numel(out_shape) != ids.size()) {
    throw std::invalid_argument("embedding: id count does not match shape " + shape_str(out_shape));
  }
  const int vocab = weight.dim(0), d = weight.dim(1);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " at index " +
                              std::to_string(i) + " is outside vocabulary of size " +
                              std::to_string(vocab));
    }
  }
  std::vector<float> out(ids.size() * d);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(weight.data().begin() + static_cast<size_t>(ids[i]) * d, d, out.begin() + i * d);
  Shape shape = out_shape;
  shape.push_back(d);
  auto wi = weight.impl();
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result(std::move(shape), std::move(out), OpKind::kEmbedding, {wi},
                     [wi, saved = std::move(saved), d](const TensorImpl& o) {
                       auto g = grad_buffer(*wi);
                       for (size_t i = 0; i < saved.size(); ++i)
                         for (int j = 0; j < d; ++j)
                           g[static_cast<size_t>(saved[i]) * d + j] += o.grad[i * d + j];
                     });
}

Tensor dropout(const Tensor& x, float p, Rng* rng) {
  if (p < 0.0f || p >= 1.0f) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (rng == nullptr || p == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - p);
  auto mask = std::make_shared<std::vector<float>>(x.numel());
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform01(*rng) >= p ? keep_scale : 0.0f;
    out[i] = x.at(i) * (*mask)[i];
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), OpKind::kDropout, {xi},
                     [xi, mask](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), OpKind::kReshape, {xi},
                     [xi](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("permute: wrong arity");
  std::vector<int> check(perm);
  std::sort(check.begin(), check.end());
  for (int i = 0; i < r; ++i)
    if (check[i] != i) throw std::invalid_argument("permute: not a permutation");

  const Shape& in_shape = x.shape();
  std::vector<size_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(r);
  std::vector<size_t> src_strides(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // gather[i] = flat input index feeding output element i
  auto gather = std::make_shared<std::vector<size_t>>(x.numel());
  std::vector<int> counter(r, 0);
  size_t src = 0;
  for (size_t i = 0; i < x.numel(); ++i) {
    (*gather)[i] = src;
    for (int a = r - 1; a >= 0; --a) {
      ++counter[a];
      src += src_strides[a];
      if (counter[a] < out_shape[a]) break;
      src -= src_strides[a] * out_shape[a];
      counter[a] = 0;
    }
  }
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.at((*gather)[i]);
  auto xi = x.impl();
  return make_result(std::move(out_shape), std::move(out), OpKind::kPermute, {xi},
                     [xi, gather](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < o.grad.size(); ++i) g[(*gather)[i]] += o.grad[i];
                     });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, float value) {
  if (mask.size() != x.numel()) throw std::invalid_argument("masked_fill: mask size mismatch");
  std::vector<float> out(x.data().begin(), x.data().end());
  for (size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  auto xi = x.impl();
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return make_result(x.shape(), std::move(out), OpKind::kMaskedFill, {xi},
                     [xi, saved = std::move(saved)](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < g.size(); ++i)
                         if (!saved[i]) g[i] += o.grad[i];
                     });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  auto xi = x.impl();
  return make_result({1}, {static_cast<float>(total)}, OpKind::kSum, {xi},
                     [xi](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (float& v : g) v += o.grad[0];
                     });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  const double n = static_cast<double>(x.numel());
  auto xi = x.impl();
  return make_result({1}, {static_cast<float>(total / n)}, OpKind::kMean, {xi},
                     [xi, n](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       const float share = static_cast<float>(o.grad[0] / n);
                       for (float& v : g) v += share;
                     });
}

Tensor weighted_sum(const Tensor& x, std::span<const float> weights) {
  if (weights.size() != x.numel()) throw std::invalid_argument("weighted_sum: weight count mismatch");
  double total = 0.0;
  for (size_t i = 0; i < weights.size(); ++i)
    if (weights[i] != 0.0f) total += double{weights[i]} * x.at(i);
  auto xi = x.impl();
  auto saved = std::make_shared<std::vector<float>>(weights.begin(), weights.end());
  return make_result({1}, {static_cast<float>(total)}, OpKind::kWeightedSum, {xi},
                     [xi, saved](const TensorImpl& o) {
                       auto g = grad_buffer(*xi);
                       for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * (*saved)[i];
                     });
}

}  // namespace mixce
