/*
 * Copyright 2026 The crowdground Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cg {

// Reverse-mode autodiff over dense 64-bit float tensors. Every value the
// model touches (parameters, activations, losses) is a Tensor; the tape is
// the set of nodes reachable from a loss, ordered by creation id.
//
// Single-threaded per graph: a model instance and its tape must not be
// mutated from two threads. Read-only tensors may be shared across threads.

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated lazily, same length as data
    std::vector<NodePtr> parents;
    // Accumulates d(loss)/d(parent) into each parent's grad buffer given
    // this node's grad buffer. Null for leaves.
    std::function<void(TensorNode&)> backward_fn;
    uint64_t id = 0;  // creation order; parents always have smaller ids
    bool backward_done = false;  // set on a node used as a backward root

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Thread-local autograd mode. Ops record parents/backward functions only
// when enabled and some input requires grad.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from(const Shape& shape, std::vector<double> data);
    static Tensor scalar(double value);
    // Leaf with requires_grad set; the unit every optimizer update touches.
    static Tensor param(const Shape& shape, std::vector<double> data);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[size_t(i)]; }
    int rank() const { return int(n_->shape.size()); }
    int64_t numel() const { return int64_t(n_->data.size()); }
    bool requires_grad() const { return n_->requires_grad; }

    const std::vector<double>& data() const { return n_->data; }
    std::vector<double>& mutable_data() { return n_->data; }
    const std::vector<double>& grad() const;

    double item() const;
    double at(int i) const { return n_->data[size_t(i)]; }
    double at(int i, int j) const { return n_->data[size_t(i) * size_t(n_->shape[1]) + size_t(j)]; }

    // Same data, detached from the tape (no parents, no grad requirement).
    Tensor detach() const;

    void zero_grad() const;
    // Reverse-topological accumulation from a scalar loss. A second call on
    // the same root without rebuilding the graph is rejected.
    void backward() const;

    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

// The tape for one backward pass: reachable nodes in creation order.
// Invariant (checked in debug/tests): each node's parents precede it.
std::vector<TensorNode*> tape_topo_order(const NodePtr& root);

// Extension point for custom ops (also how tests inject deliberately broken
// backward functions): forwards are plain data, backward_fn sees this node's
// grad and accumulates into parents.
Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn);

// ---- elementwise / structural ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& t, double k, double c);  // k*t + c
Tensor add_rowvec(const Tensor& mat, const Tensor& vec);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);
Tensor reshape(const Tensor& t, const Shape& shape);
Tensor concat_rows(const std::vector<Tensor>& parts);  // 1-D parts act as single rows
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& t, int r0, int r1);
Tensor slice_cols(const Tensor& t, int c0, int c1);
Tensor interleave_rows(const Tensor& a, const Tensor& b);
Tensor sum_all(const Tensor& t);
Tensor mean_all(const Tensor& t);

// ---- nonlinearities / reductions ----
Tensor gelu(const Tensor& t);  // exact erf-based x * Phi(x)
Tensor softmax_rows(const Tensor& t);      // last axis, max-shifted
Tensor log_softmax_rows(const Tensor& t);  // stable log softmax
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// out[i] = mat[i, cols[i]]
Tensor gather_rows(const Tensor& mat, const std::vector<int>& cols);
// out row k = table[ids[k], :]; backward scatter-adds into the table
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
// out[k] = idx[k] >= 0 ? t.flat[idx[k]] : 0; the im2col workhorse
Tensor gather_flat(const Tensor& t, std::vector<int64_t> idx, Shape out_shape);

// a.b / (|a||b|); zero-norm input yields constant 0 with zero gradient and
// bumps cosine_zero_norm_count().
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
uint64_t cosine_zero_norm_count();

// ---- verification ----
struct GradCheckReport {
    double max_rel_err = 0.0;
    int checked_coords = 0;
    // coordinate of the worst error: (input index, flat offset)
    int worst_input = -1;
    int64_t worst_offset = -1;
};

// Compares analytic gradients of a scalar-valued f against central finite
// differences at `point`. When max_coords_per_input > 0, a seeded random
// subset of coordinates per input is probed (needed for composite losses
// with ~1e5 parameters); otherwise every coordinate is checked.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-3).
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> point, double eps,
                           int max_coords_per_input = -1, uint64_t seed = 17);

}  // namespace cg
