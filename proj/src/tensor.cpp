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

#include "cg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cg/rng.hpp"

namespace cg {

namespace {

std::atomic<uint64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;
std::atomic<uint64_t> g_cosine_zero_norm{0};

NodePtr new_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<TensorNode>();
    if (int64_t(data.size()) != shape_numel(shape))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// rows/cols view of a tensor treated as a 2-D array (1-D acts as one row)
void as_2d(const Tensor& t, int& rows, int& cols) {
    if (t.rank() == 1) {
        rows = 1;
        cols = t.dim(0);
    } else if (t.rank() == 2) {
        rows = t.dim(0);
        cols = t.dim(1);
    } else {
        throw std::invalid_argument("expected 1-D or 2-D tensor, got " + shape_str(t.shape()));
    }
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) {
        if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(const Shape& shape) {
    return Tensor(new_node(shape, std::vector<double>(size_t(shape_numel(shape)), 0.0)));
}

Tensor Tensor::full(const Shape& shape, double value) {
    return Tensor(new_node(shape, std::vector<double>(size_t(shape_numel(shape)), value)));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data) {
    return Tensor(new_node(shape, std::move(data)));
}

Tensor Tensor::scalar(double value) { return Tensor(new_node(Shape{}, {value})); }

Tensor Tensor::param(const Shape& shape, std::vector<double> data) {
    auto n = new_node(shape, std::move(data));
    n->requires_grad = true;
    return Tensor(n);
}

const std::vector<double>& Tensor::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
    return n_->data[0];
}

Tensor Tensor::detach() const {
    auto n = new_node(n_->shape, n_->data);
    return Tensor(n);
}

void Tensor::zero_grad() const {
    n_->grad.assign(n_->data.size(), 0.0);
    n_->backward_done = false;
}

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
    auto n = new_node(std::move(shape), std::move(data));
    bool need = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p.node()->requires_grad) need = true;
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(n);
}

std::vector<TensorNode*> tape_topo_order(const NodePtr& root) {
    // Creation ids give a valid topological order: parents are always built
    // before children. Collect reachable nodes, then sort by id.
    std::vector<TensorNode*> nodes;
    std::vector<TensorNode*> stack{root.get()};
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        if (n->backward_done && n != root.get()) {
            // visited marker is repurposed below; never hit in practice
        }
        nodes.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad) stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->id < b->id; });
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    return nodes;
}

void Tensor::backward() const {
    if (numel() != 1)
        throw std::invalid_argument("backward() requires a scalar loss, got " + shape_str(shape()));
    if (n_->backward_done)
        throw std::logic_error("backward() called twice on the same root without reset");
    n_->backward_done = true;
    auto order = tape_topo_order(n_);
    n_->ensure_grad();
    n_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backward_fn) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->ensure_grad();
        n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = n.parents[size_t(k)];
            if (!p->requires_grad) continue;
            for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
        if (pb->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
    });
}

Tensor affine(const Tensor& t, double k, double c) {
    std::vector<double> out(t.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = k * t.data()[i] + c;
    return make_op(t.shape(), std::move(out), {t}, [k](TensorNode& n) {
        auto& p = n.parents[0];
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += k * n.grad[i];
    });
}

Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    int rows, cols;
    as_2d(mat, rows, cols);
    if (vec.rank() != 1 || vec.dim(0) != cols)
        throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(mat.shape()) +
                                    " vs " + shape_str(vec.shape()));
    std::vector<double> out(mat.data().size());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out[size_t(i) * size_t(cols) + size_t(j)] =
                mat.data()[size_t(i) * size_t(cols) + size_t(j)] + vec.data()[size_t(j)];
    return make_op(mat.shape(), std::move(out), {mat, vec}, [rows, cols](TensorNode& n) {
        auto& pm = n.parents[0];
        auto& pv = n.parents[1];
        if (pm->requires_grad)
            for (size_t i = 0; i < n.grad.size(); ++i) pm->grad[i] += n.grad[i];
        if (pv->requires_grad)
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    pv->grad[size_t(j)] += n.grad[size_t(i) * size_t(cols) + size_t(j)];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(size_t(m) * size_t(n), 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + size_t(i) * size_t(n);
        const double* arow = A + size_t(i) * size_t(k);
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = B + size_t(kk) * size_t(n);
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& nd) {
        auto& pa = nd.parents[0];
        auto& pb = nd.parents[1];
        const double* G = nd.grad.data();
        if (pa->requires_grad) {
            // dA[i,kk] += sum_j G[i,j] * B[kk,j]
            const double* B = pb->data.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = G + size_t(i) * size_t(n);
                double* garow = pa->grad.data() + size_t(i) * size_t(k);
                for (int kk = 0; kk < k; ++kk) {
                    const double* brow = B + size_t(kk) * size_t(n);
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    garow[kk] += acc;
                }
            }
        }
        if (pb->requires_grad) {
            // dB[kk,j] += sum_i A[i,kk] * G[i,j]
            const double* A = pa->data.data();
            for (int i = 0; i < m; ++i) {
                const double* arow = A + size_t(i) * size_t(k);
                const double* grow = G + size_t(i) * size_t(n);
                for (int kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    if (av == 0.0) continue;
                    double* gbrow = pb->grad.data() + size_t(kk) * size_t(n);
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& t) {
    if (t.rank() != 2) throw std::invalid_argument("transpose: expected 2-D, got " + shape_str(t.shape()));
    const int m = t.dim(0), n = t.dim(1);
    std::vector<double> out(size_t(m) * size_t(n));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[size_t(j) * size_t(m) + size_t(i)] = t.data()[size_t(i) * size_t(n) + size_t(j)];
    return make_op({n, m}, std::move(out), {t}, [m, n](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                p->grad[size_t(i) * size_t(n) + size_t(j)] +=
                    nd.grad[size_t(j) * size_t(m) + size_t(i)];
    });
}

Tensor reshape(const Tensor& t, const Shape& shape) {
    if (shape_numel(shape) != t.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(t.shape()) + " -> " +
                                    shape_str(shape));
    return make_op(shape, t.data(), {t}, [](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    int cols = -1, total_rows = 0;
    for (const auto& p : parts) {
        int r, c;
        as_2d(p, r, c);
        if (cols < 0) cols = c;
        if (c != cols)
            throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()));
        total_rows += r;
    }
    std::vector<double> out;
    out.reserve(size_t(total_rows) * size_t(cols));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_op({total_rows, cols}, std::move(out), parts, [](TensorNode& nd) {
        size_t off = 0;
        for (auto& p : nd.parents) {
            if (p->requires_grad)
                for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += nd.grad[off + i];
            off += p->data.size();
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int rows = -1, total_cols = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        int r, c;
        as_2d(p, r, c);
        if (rows < 0) rows = r;
        if (r != rows)
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
        widths.push_back(c);
        total_cols += c;
    }
    std::vector<double> out(size_t(rows) * size_t(total_cols));
    int coff = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const int c = widths[pi];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j)
                out[size_t(i) * size_t(total_cols) + size_t(coff + j)] =
                    parts[pi].data()[size_t(i) * size_t(c) + size_t(j)];
        coff += c;
    }
    return make_op({rows, total_cols}, std::move(out), parts,
                   [rows, total_cols, widths](TensorNode& nd) {
                       int coff = 0;
                       for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
                           auto& p = nd.parents[pi];
                           const int c = widths[pi];
                           if (p->requires_grad)
                               for (int i = 0; i < rows; ++i)
                                   for (int j = 0; j < c; ++j)
                                       p->grad[size_t(i) * size_t(c) + size_t(j)] +=
                                           nd.grad[size_t(i) * size_t(total_cols) + size_t(coff + j)];
                           coff += c;
                       }
                   });
}

Tensor slice_rows(const Tensor& t, int r0, int r1) {
    int rows, cols;
    as_2d(t, rows, cols);
    if (r0 < 0 || r1 > rows || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," +
                                    std::to_string(r1) + ") for " + shape_str(t.shape()));
    std::vector<double> out(t.data().begin() + int64_t(r0) * cols,
                            t.data().begin() + int64_t(r1) * cols);
    return make_op({r1 - r0, cols}, std::move(out), {t}, [r0, cols](TensorNode& nd) {
        auto& p = nd.parents[0];
        const size_t off = size_t(r0) * size_t(cols);
        for (size_t i = 0; i < nd.grad.size(); ++i) p->grad[off + i] += nd.grad[i];
    });
}

Tensor slice_cols(const Tensor& t, int c0, int c1) {
    int rows, cols;
    as_2d(t, rows, cols);
    if (c0 < 0 || c1 > cols || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + shape_str(t.shape()));
    const int w = c1 - c0;
    std::vector<double> out(size_t(rows) * size_t(w));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < w; ++j)
            out[size_t(i) * size_t(w) + size_t(j)] = t.data()[size_t(i) * size_t(cols) + size_t(c0 + j)];
    return make_op({rows, w}, std::move(out), {t}, [rows, cols, c0, w](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j)
                p->grad[size_t(i) * size_t(cols) + size_t(c0 + j)] +=
                    nd.grad[size_t(i) * size_t(w) + size_t(j)];
    });
}

Tensor interleave_rows(const Tensor& a, const Tensor& b) {
    check_same_shape("interleave_rows", a, b);
    if (a.rank() != 2) throw std::invalid_argument("interleave_rows: expected 2-D");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(size_t(2 * m) * size_t(n));
    for (int i = 0; i < m; ++i) {
        std::copy_n(a.data().begin() + int64_t(i) * n, n, out.begin() + int64_t(2 * i) * n);
        std::copy_n(b.data().begin() + int64_t(i) * n, n, out.begin() + int64_t(2 * i + 1) * n);
    }
    return make_op({2 * m, n}, std::move(out), {a, b}, [m, n](TensorNode& nd) {
        auto& pa = nd.parents[0];
        auto& pb = nd.parents[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                if (pa->requires_grad)
                    pa->grad[size_t(i) * size_t(n) + size_t(j)] +=
                        nd.grad[size_t(2 * i) * size_t(n) + size_t(j)];
                if (pb->requires_grad)
                    pb->grad[size_t(i) * size_t(n) + size_t(j)] +=
                        nd.grad[size_t(2 * i + 1) * size_t(n) + size_t(j)];
            }
    });
}

Tensor sum_all(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return make_op(Shape{}, {s}, {t}, [](TensorNode& nd) {
        auto& p = nd.parents[0];
        const double g = nd.grad[0];
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

Tensor mean_all(const Tensor& t) {
    const double inv = 1.0 / double(t.numel());
    double s = 0.0;
    for (double v : t.data()) s += v;
    return make_op(Shape{}, {s * inv}, {t}, [inv](TensorNode& nd) {
        auto& p = nd.parents[0];
        const double g = nd.grad[0] * inv;
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

// ---------------------------------------------------------------------------
// nonlinearities / reductions
// ---------------------------------------------------------------------------

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& t) {
    std::vector<double> out(t.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = t.data()[i];
        out[i] = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_op(t.shape(), std::move(out), {t}, [](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (size_t i = 0; i < nd.grad.size(); ++i) {
            const double x = p->data[i];
            const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            p->grad[i] += nd.grad[i] * (phi + x * pdf);
        }
    });
}

Tensor softmax_rows(const Tensor& t) {
    int rows, cols;
    as_2d(t, rows, cols);
    std::vector<double> out(t.data().size());
    for (int i = 0; i < rows; ++i) {
        const double* x = t.data().data() + size_t(i) * size_t(cols);
        double* y = out.data() + size_t(i) * size_t(cols);
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < cols; ++j) y[j] *= inv;
    }
    return make_op(t.shape(), std::move(out), {t}, [rows, cols](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (int i = 0; i < rows; ++i) {
            const double* y = nd.data.data() + size_t(i) * size_t(cols);
            const double* g = nd.grad.data() + size_t(i) * size_t(cols);
            double dot = 0.0;
            for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
            double* px = p->grad.data() + size_t(i) * size_t(cols);
            for (int j = 0; j < cols; ++j) px[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor log_softmax_rows(const Tensor& t) {
    int rows, cols;
    as_2d(t, rows, cols);
    std::vector<double> out(t.data().size());
    for (int i = 0; i < rows; ++i) {
        const double* x = t.data().data() + size_t(i) * size_t(cols);
        double* y = out.data() + size_t(i) * size_t(cols);
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (int j = 0; j < cols; ++j) y[j] = x[j] - lse;
    }
    return make_op(t.shape(), std::move(out), {t}, [rows, cols](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (int i = 0; i < rows; ++i) {
            const double* ls = nd.data.data() + size_t(i) * size_t(cols);
            const double* g = nd.grad.data() + size_t(i) * size_t(cols);
            double gsum = 0.0;
            for (int j = 0; j < cols; ++j) gsum += g[j];
            double* px = p->grad.data() + size_t(i) * size_t(cols);
            for (int j = 0; j < cols; ++j) px[j] += g[j] - std::exp(ls[j]) * gsum;
        }
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    int rows, cols;
    as_2d(x, rows, cols);
    if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols)
        throw std::invalid_argument("layer_norm_rows: gain/bias must be [" + std::to_string(cols) +
                                    "], got " + shape_str(gain.shape()) + " and " +
                                    shape_str(bias.shape()));
    std::vector<double> out(x.data().size());
    std::vector<double> mu(size_t(rows), 0.0), ivar(size_t(rows), 0.0);
    for (int i = 0; i < rows; ++i) {
        const double* xr = x.data().data() + size_t(i) * size_t(cols);
        double m = 0.0;
        for (int j = 0; j < cols; ++j) m += xr[j];
        m /= cols;
        double v = 0.0;
        for (int j = 0; j < cols; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= cols;
        mu[size_t(i)] = m;
        ivar[size_t(i)] = 1.0 / std::sqrt(v + eps);
        double* yr = out.data() + size_t(i) * size_t(cols);
        for (int j = 0; j < cols; ++j)
            yr[j] = (xr[j] - m) * ivar[size_t(i)] * gain.data()[size_t(j)] + bias.data()[size_t(j)];
    }
    return make_op(x.shape(), std::move(out), {x, gain, bias},
                   [rows, cols, mu, ivar](TensorNode& nd) {
                       auto& px = nd.parents[0];
                       auto& pg = nd.parents[1];
                       auto& pb = nd.parents[2];
                       for (int i = 0; i < rows; ++i) {
                           const double* xr = px->data.data() + size_t(i) * size_t(cols);
                           const double* g = nd.grad.data() + size_t(i) * size_t(cols);
                           const double m = mu[size_t(i)], iv = ivar[size_t(i)];
                           // dxhat, plus reductions for the mean/var terms
                           double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                           for (int j = 0; j < cols; ++j) {
                               const double xhat = (xr[j] - m) * iv;
                               const double dxhat = g[j] * pg->data[size_t(j)];
                               sum_dxhat += dxhat;
                               sum_dxhat_xhat += dxhat * xhat;
                               if (pg->requires_grad) pg->grad[size_t(j)] += g[j] * xhat;
                               if (pb->requires_grad) pb->grad[size_t(j)] += g[j];
                           }
                           if (px->requires_grad) {
                               double* gx = px->grad.data() + size_t(i) * size_t(cols);
                               for (int j = 0; j < cols; ++j) {
                                   const double xhat = (xr[j] - m) * iv;
                                   const double dxhat = g[j] * pg->data[size_t(j)];
                                   gx[j] += iv * (dxhat - sum_dxhat / cols -
                                                  xhat * sum_dxhat_xhat / cols);
                               }
                           }
                       }
                   });
}

Tensor gather_rows(const Tensor& mat, const std::vector<int>& cols_idx) {
    int rows, cols;
    as_2d(mat, rows, cols);
    if (int(cols_idx.size()) != rows)
        throw std::invalid_argument("gather_rows: need one column index per row");
    std::vector<double> out(size_t(rows), 0.0);
    for (int i = 0; i < rows; ++i) {
        const int c = cols_idx[size_t(i)];
        if (c < 0 || c >= cols)
            throw std::invalid_argument("gather_rows: column " + std::to_string(c) +
                                        " out of range for " + shape_str(mat.shape()));
        out[size_t(i)] = mat.at(i, c);
    }
    return make_op({rows}, std::move(out), {mat}, [rows, cols, cols_idx](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (int i = 0; i < rows; ++i)
            p->grad[size_t(i) * size_t(cols) + size_t(cols_idx[size_t(i)])] += nd.grad[size_t(i)];
    });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    int vocab, d;
    as_2d(table, vocab, d);
    std::vector<double> out(ids.size() * size_t(d));
    for (size_t k = 0; k < ids.size(); ++k) {
        const int id = ids[k];
        if (id < 0 || id >= vocab)
            throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                        " out of range for " + shape_str(table.shape()));
        std::copy_n(table.data().begin() + int64_t(id) * d, d, out.begin() + int64_t(k) * d);
    }
    return make_op({int(ids.size()), d}, std::move(out), {table}, [d, ids](TensorNode& nd) {
        auto& p = nd.parents[0];
        for (size_t k = 0; k < ids.size(); ++k)
            for (int j = 0; j < d; ++j)
                p->grad[size_t(ids[k]) * size_t(d) + size_t(j)] +=
                    nd.grad[k * size_t(d) + size_t(j)];
    });
}

Tensor gather_flat(const Tensor& t, std::vector<int64_t> idx, Shape out_shape) {
    if (shape_numel(out_shape) != int64_t(idx.size()))
        throw std::invalid_argument("gather_flat: index count does not match output shape");
    std::vector<double> out(idx.size());
    const int64_t n = t.numel();
    for (size_t k = 0; k < idx.size(); ++k) {
        const int64_t i = idx[k];
        if (i >= n) throw std::invalid_argument("gather_flat: index out of range");
        out[k] = i < 0 ? 0.0 : t.data()[size_t(i)];
    }
    return make_op(std::move(out_shape), std::move(out), {t},
                   [idx = std::move(idx)](TensorNode& nd) {
                       auto& p = nd.parents[0];
                       for (size_t k = 0; k < idx.size(); ++k)
                           if (idx[k] >= 0) p->grad[size_t(idx[k])] += nd.grad[k];
                   });
}

uint64_t cosine_zero_norm_count() { return g_cosine_zero_norm.load(); }

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("cosine_similarity: expected equal-length vectors, got " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < a.dim(0); ++i) {
        dot += a.at(i) * b.at(i);
        na2 += a.at(i) * a.at(i);
        nb2 += b.at(i) * b.at(i);
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    // zero-norm guard: defined as similarity 0 with zero gradient
    if (na * nb < 1e-12) {
        g_cosine_zero_norm.fetch_add(1, std::memory_order_relaxed);
        return make_op(Shape{}, {0.0}, {a, b}, [](TensorNode&) {});
    }
    const double denom = na * nb;
    const double cosv = dot / denom;
    return make_op(Shape{}, {cosv}, {a, b}, [na, nb, cosv](TensorNode& nd) {
        auto& pa = nd.parents[0];
        auto& pb = nd.parents[1];
        const double g = nd.grad[0];
        const int n = int(pa->data.size());
        for (int i = 0; i < n; ++i) {
            const double av = pa->data[size_t(i)], bv = pb->data[size_t(i)];
            if (pa->requires_grad)
                pa->grad[size_t(i)] += g * (bv / (na * nb) - cosv * av / (na * na));
            if (pb->requires_grad)
                pb->grad[size_t(i)] += g * (av / (na * nb) - cosv * bv / (nb * nb));
        }
    });
}

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> point, double eps, int max_coords_per_input,
                           uint64_t seed) {
    // analytic pass
    for (auto& t : point) t.zero_grad();
    Tensor loss = f(point);
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(point.size());
    for (auto& t : point) analytic.push_back(t.grad());

    GradCheckReport rep;
    Rng rng(seed);
    NoGradGuard ng;
    for (size_t pi = 0; pi < point.size(); ++pi) {
        auto& t = point[pi];
        const int64_t n = t.numel();
        std::vector<int64_t> coords;
        if (max_coords_per_input > 0 && n > max_coords_per_input) {
            for (int c = 0; c < max_coords_per_input; ++c)
                coords.push_back(int64_t(rng.next_below(uint64_t(n))));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        } else {
            coords.resize(size_t(n));
            for (int64_t c = 0; c < n; ++c) coords[size_t(c)] = c;
        }
        for (int64_t c : coords) {
            double& slot = t.mutable_data()[size_t(c)];
            const double orig = slot;
            slot = orig + eps;
            const double fp = f(point).item();
            slot = orig - eps;
            const double fm = f(point).item();
            slot = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][size_t(c)];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-3});
            ++rep.checked_coords;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_input = int(pi);
                rep.worst_offset = c;
            }
        }
    }
    return rep;
}

}  // namespace cg
