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

#include "cg/cues.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cg {

namespace {
std::atomic<uint64_t> g_sce_empty{0};
}

Tensor TextEmbedder::embed(const std::string& expression) const {
    std::istringstream is(expression);
    std::string token;
    std::vector<double> acc(size_t(d_t_), 0.0);
    int count = 0;
    while (is >> token) {
        Rng rng(mix_seed(salt_, fnv1a(token)));
        for (int i = 0; i < d_t_; ++i) acc[size_t(i)] += rng.normal();
        ++count;
    }
    if (count == 0)
        throw std::invalid_argument("text_embed: empty expression");
    double norm2 = 0.0;
    for (int i = 0; i < d_t_; ++i) {
        acc[size_t(i)] /= count;
        norm2 += acc[size_t(i)] * acc[size_t(i)];
    }
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12)
        throw std::runtime_error("text_embed: degenerate zero-norm embedding for '" + expression +
                                 "'");
    for (auto& v : acc) v /= norm;
    return Tensor::from({d_t_}, std::move(acc));
}

SemanticCueExtractor::SemanticCueExtractor(int d_o, int d_t, uint64_t seed) : d_t_(d_t) {
    l1_ = Linear::make("sce.l1", d_o, 2 * d_o, seed);
    l2_ = Linear::make("sce.l2", 2 * d_o, 2 * d_o, seed);
    l3_ = Linear::make("sce.l3", 2 * d_o, d_t, seed);
    l4_ = Linear::make("sce.l4", d_t, d_t, seed);
}

Tensor SemanticCueExtractor::forward(const Tensor& features) const {
    Tensor h = gelu(l1_.apply(features));
    h = gelu(l2_.apply(h));
    h = gelu(l3_.apply(h));
    return l4_.apply(h);
}

void SemanticCueExtractor::reg(ParamRegistry& r) const {
    l1_.reg(r, "sce.l1");
    l2_.reg(r, "sce.l2");
    l3_.reg(r, "sce.l3");
    l4_.reg(r, "sce.l4");
}

uint64_t sce_loss_empty_count() { return g_sce_empty.load(); }

Tensor sce_loss(const Tensor& cues, const std::vector<int>& gt_indices,
                const std::vector<Tensor>& texts) {
    if (gt_indices.size() != texts.size())
        throw std::invalid_argument("sce_loss: need one text embedding per ground-truth index");
    if (gt_indices.empty()) {
        // the mean is undefined at |G|=0; contribute 0 and log once
        if (g_sce_empty.fetch_add(1) == 0)
            std::fprintf(stderr, "[cues] warning: empty ground-truth set, sce loss set to 0\n");
        return Tensor::scalar(0.0);
    }
    const int d = cues.dim(1);
    Tensor total = Tensor::scalar(0.0);
    for (size_t k = 0; k < gt_indices.size(); ++k) {
        const int i = gt_indices[k];
        if (i < 0 || i >= cues.dim(0))
            throw std::invalid_argument("sce_loss: ground-truth index out of range");
        Tensor cue = reshape(slice_rows(cues, i, i + 1), {d});
        Tensor cos = cosine_similarity(cue, texts[k]);
        total = add(total, affine(cos, -1.0, 1.0));  // 1 - cos
    }
    return affine(total, 1.0 / double(gt_indices.size()), 0.0);
}

SemanticCueProjector::SemanticCueProjector(int d_t, int d_llm, uint64_t seed) {
    l1_ = Linear::make("scp.l1", d_t, d_llm, seed);
    l2_ = Linear::make("scp.l2", d_llm, d_llm, seed);
}

Tensor SemanticCueProjector::forward(const Tensor& cues) const {
    return l2_.apply(gelu(l1_.apply(cues)));
}

void SemanticCueProjector::reg(ParamRegistry& r) const {
    l1_.reg(r, "scp.l1");
    l2_.reg(r, "scp.l2");
}

LowRankCrossAttention::LowRankCrossAttention(int d_llm, int rank, int heads,
                                             ResidualSource residual, uint64_t seed)
    : d_llm_(d_llm), rank_(rank), heads_(heads), residual_(residual) {
    if (rank % heads != 0)
        throw std::invalid_argument("cross-attention rank " + std::to_string(rank) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    const int rh = rank / heads;
    const double scale = 1.0 / std::sqrt(double(d_llm));
    for (int h = 0; h < heads; ++h) {
        const std::string base = "xattn.head" + std::to_string(h);
        wq_.push_back(init_gaussian(base + ".wq", {d_llm, rh}, seed, scale));
        wk_.push_back(init_gaussian(base + ".wk", {d_llm, rh}, seed, scale));
        wv_.push_back(init_gaussian(base + ".wv", {d_llm, rh}, seed, scale));
    }
    wo_ = init_zeros({rank, d_llm});  // identity start: refined == object tokens
}

Tensor LowRankCrossAttention::forward(const Tensor& queries, const Tensor& obj_tokens) const {
    if (queries.rank() != 2 || obj_tokens.rank() != 2 || queries.dim(0) != obj_tokens.dim(0) ||
        queries.dim(1) != d_llm_ || obj_tokens.dim(1) != d_llm_)
        throw std::invalid_argument("cross-attention: bad shapes " + shape_str(queries.shape()) +
                                    " vs " + shape_str(obj_tokens.shape()));
    const int m = queries.dim(0);
    if (m == 0) return Tensor::zeros({0, d_llm_});
    const int rh = rank_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(double(rh));
    std::vector<Tensor> head_outs;
    head_outs.reserve(size_t(heads_));
    for (int h = 0; h < heads_; ++h) {
        Tensor q = matmul(queries, wq_[size_t(h)]);
        Tensor k = matmul(obj_tokens, wk_[size_t(h)]);
        Tensor v = matmul(obj_tokens, wv_[size_t(h)]);
        Tensor scores = affine(matmul(q, transpose(k)), inv_sqrt, 0.0);
        head_outs.push_back(matmul(softmax_rows(scores), v));
    }
    Tensor merged = heads_ == 1 ? head_outs[0] : concat_cols(head_outs);
    Tensor delta = matmul(merged, wo_);
    return add(residual_ == ResidualSource::kObject ? obj_tokens : queries, delta);
}

void LowRankCrossAttention::reg(ParamRegistry& r) const {
    for (int h = 0; h < heads_; ++h) {
        const std::string base = "xattn.head" + std::to_string(h);
        r.add(base + ".wq", wq_[size_t(h)]);
        r.add(base + ".wk", wk_[size_t(h)]);
        r.add(base + ".wv", wv_[size_t(h)]);
    }
    r.add("xattn.wo", wo_);
}

}  // namespace cg
