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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mixce/types.h"

namespace mixce {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind {
  kLeaf,
  kAdd,
  kAddBias,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kBatchMatMul,
  kRelu,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kEmbedding,
  kDropout,
  kReshape,
  kPermute,
  kMaskedFill,
  kSum,
  kMean,
  kWeightedSum,
};

const char* op_name(OpKind op);

struct TensorImpl;

// Backward rule for one recorded operation. The closure holds whatever
// forward values the rule needs; `out` carries the upstream gradient.
struct GraphNode {
  OpKind op = OpKind::kLeaf;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a backward pass reaches it
  bool requires_grad = false;
  std::shared_ptr<GraphNode> node;
};

// Handle to a dense float tensor. Copies share storage; use clone() for a
// deep copy and detach() to drop graph linkage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> data,
                     bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const;
  size_t numel() const { return impl_->data.size(); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> mutable_data() { return impl_->data; }
  float item() const;
  float at(size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  std::span<float> mutable_grad();
  void zero_grad();

  const GraphNode* node() const { return impl_->node.get(); }
  bool is_leaf() const { return impl_->node == nullptr; }

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Graph recording is on by default; while a NoGradGuard is alive on the
// current thread no operation records a graph node.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Accumulates d(loss)/d(t) into every requires_grad leaf reachable from the
// scalar `loss`. Leaf gradients add up across calls until zeroed.
void backward(const Tensor& loss);

// Central-difference check of the gradient of `f` at `x`. Returns the max
// over coordinates of |analytic - numeric| / max(1, |analytic|).
// Throws if two evaluations of f at the same point disagree.
double check_gradients(const std::function<Tensor(const Tensor&)>& f,
                       Tensor x, double h = 1e-3);

// ---- operations -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// x[..., k] @ w[k, n] (or w[n, k] when transpose_w).
Tensor matmul(const Tensor& x, const Tensor& w, bool transpose_w = false);
// a[g, m, k] @ b[g, k, n] (or b[g, n, k] when transpose_b).
Tensor batch_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

// Rows of `weight[v, d]` gathered by `ids`; result shape is out_shape + {d}.
Tensor embedding(const Tensor& weight, std::span<const int> ids,
                 const Shape& out_shape);

// Inverted dropout. Identity when rng is null or p == 0.
Tensor dropout(const Tensor& x, float p, Rng* rng);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
// Positions where mask != 0 are replaced by `value`; mask has numel(x) entries.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask,
                   float value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum_i w[i] * x[i] with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const float> weights);

}  // namespace mixce
