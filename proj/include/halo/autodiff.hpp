// Copyright 2026 The Halo Authors. All Rights Reserved.
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

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "halo/param_store.hpp"
#include "halo/tensor.hpp"

namespace halo::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Accumulates into input_grads[i] (nullptr when input i needs no gradient).
using BackwardFn = std::function<void(const Tensor& out_grad,
                                      std::span<Tensor* const> input_grads)>;

// Linear record of operations for reverse-mode differentiation. Nodes are
// appended in evaluation order, so reverse insertion order is a valid
// topological order for the backward sweep. Not thread-safe; use one tape per
// concurrent evaluation.
class Tape {
 public:
  // With record_gradients=false parameters enter as constants and no
  // backward closures are kept (inference).
  explicit Tape(bool record_gradients = true)
      : grad_enabled_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to store[path]. Repeated calls with the same store/path return
  // the same node.
  Var parameter(const ParamStore& store, const std::string& path);
  // Records an op. When no input requires a gradient the result is a constant
  // and fn is dropped.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);
  // Copy of v that blocks gradient flow.
  Var detach(Var v);

  // Exact gradients of a scalar loss for every parameter in `store`.
  // Parameters the loss does not reach get zero tensors.
  Gradients backward(Var loss, const ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const ParamStore* store = nullptr;
    std::string path;
  };

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  bool grad_enabled_ = true;
  std::deque<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::string>, std::size_t> param_ids_;
};

// ---- Differentiable operations ----------------------------------------------
// Shapes: "N x M" means a rank-2 tensor. Errors are DimensionError.

Var matmul(Var a, Var b);                // (N x K) * (K x M)
Var add_bias(Var x, Var bias);           // (N x M) + (M) broadcast over rows
Var add(Var a, Var b);                   // same shape
Var sub(Var a, Var b);                   // same shape
Var mul(Var a, Var b);                   // elementwise, same shape
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
// Clamps into [lo, hi]; gradient is zero where clamping is active.
Var clamp(Var a, double lo, double hi);
Var sum(Var a);                          // -> scalar
Var mean(Var a);                         // -> scalar
Var reshape(Var a, Shape shape);
Var concat_cols(const std::vector<Var>& parts);   // each N x Mi
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
// Per-row Euclidean norm of an N x M tensor -> (N). Subgradient 0 at a zero
// row.
Var row_norm(Var a);
// Elementwise smooth-L1 with transition at `delta`.
Var smooth_l1(Var a, double delta = 1.0);
// Per-row softmax cross-entropy -> (N). `targets[i]` indexes the columns of
// `logits`, or equals logits.cols() to select an implicit extra logit fixed at
// zero when `implicit_zero_logit` is set.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets,
                          bool implicit_zero_logit);
// features: G x K x D, mask: G x K (nonzero = participating entry).
// Output G x D holds the per-channel max over participating entries. The
// gradient is routed to the lowest-index argmax. Throws EmptyGroupError for a
// group without participating entries.
Var grouped_max_pool(Var features, const Tensor& mask);

}  // namespace halo::ad
