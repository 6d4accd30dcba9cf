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

#include <string>
#include <vector>

#include "cg/nn.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Semantic-cue branch: a cue extractor distills per-region features into
// text-embedding space, a cosine loss aligns cues with frozen expression
// embeddings, and a low-rank cross-attention block (cues as queries, object
// tokens as keys/values, external residual) refines the object tokens.

// Frozen deterministic text embedder. Tokens map to fixed pseudo-random
// Gaussian vectors seeded by hash(salt, token); an expression embeds as the
// l2-normalized mean of its token vectors. No gradients, no learned state.
class TextEmbedder {
public:
    TextEmbedder(int d_t, uint64_t salt) : d_t_(d_t), salt_(salt) {}

    // error on empty/whitespace-only expressions; unit norm otherwise
    Tensor embed(const std::string& expression) const;
    int dim() const { return d_t_; }
    uint64_t salt() const { return salt_; }

private:
    int d_t_;
    uint64_t salt_;
};

// 4 affine layers, GELU after layers 1-3, widths d_o -> 2d_o -> 2d_o -> d_t -> d_t
class SemanticCueExtractor {
public:
    SemanticCueExtractor(int d_o, int d_t, uint64_t seed);
    Tensor forward(const Tensor& features) const;  // [m, d_o] -> [m, d_t]
    void reg(ParamRegistry& r) const;
    int d_t() const { return d_t_; }

private:
    int d_t_;
    Linear l1_, l2_, l3_, l4_;
};

// Mean over ground-truth-sourced entries of (1 - cos(cue_i, t_i)); proposed
// regions contribute nothing. Differentiable into cues only (texts frozen).
// Empty index set yields a constant 0 contribution (logged once).
Tensor sce_loss(const Tensor& cues, const std::vector<int>& gt_indices,
                const std::vector<Tensor>& texts);
uint64_t sce_loss_empty_count();

// 2-layer map d_t -> d_llm -> d_llm with GELU between
class SemanticCueProjector {
public:
    SemanticCueProjector(int d_t, int d_llm, uint64_t seed);
    Tensor forward(const Tensor& cues) const;  // [m, d_t] -> [m, d_llm]
    void reg(ParamRegistry& r) const;

private:
    Linear l1_, l2_;
};

enum class ResidualSource { kObject, kCue };

// Low-rank multi-head cross-attention with an external residual path.
// Queries come from projected cues, keys/values from object tokens; per-head
// rank is rank/heads, the up-projection starts at zero so the block is an
// exact identity on object tokens at initialization.
class LowRankCrossAttention {
public:
    LowRankCrossAttention(int d_llm, int rank, int heads, ResidualSource residual,
                          uint64_t seed);

    // queries [m, d_llm], obj_tokens [m, d_llm] -> refined tokens [m, d_llm];
    // output order matches input region order
    Tensor forward(const Tensor& queries, const Tensor& obj_tokens) const;
    void reg(ParamRegistry& r) const;
    int rank() const { return rank_; }
    int heads() const { return heads_; }

private:
    int d_llm_, rank_, heads_;
    ResidualSource residual_;
    std::vector<Tensor> wq_, wk_, wv_;  // per head [d_llm, rank/heads]
    Tensor wo_;                          // [rank, d_llm], zero-init
};

}  // namespace cg
