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
#include "cg/vocab.hpp"

namespace cg {

struct DecoderConfig {
    int d_llm = 64;
    int n_layers = 2;
    int n_heads = 4;
    int ffn_mult = 4;
    int context_len = 512;
};

// Tiny causal pre-norm transformer decoder with learned positions. The
// incremental inference path reproduces the batched forward bitwise (the
// causal mask underflows to exact zeros, so prefix sums agree).
class TransformerDecoder {
public:
    TransformerDecoder(const DecoderConfig& cfg, int vocab_size, uint64_t seed);

    const DecoderConfig& config() const { return cfg_; }
    int vocab_size() const { return vocab_size_; }

    // token ids -> embedding rows [L, d] (no positions)
    Tensor embed_tokens(const std::vector<int>& ids) const;
    // embedded rows [L, d] -> logits [L, V]; adds position embeddings,
    // strictly causal
    Tensor forward_rows(const Tensor& rows) const;

    void reg(ParamRegistry& r) const;

    // plain-array incremental state for greedy decoding
    struct Cache {
        std::vector<std::vector<double>> k, v;  // per layer, len*d
        int len = 0;
    };
    Cache make_cache() const;
    // feeds one embedded row (data of length d) at the next position and
    // returns logits over the vocabulary
    std::vector<double> step(Cache& cache, const std::vector<double>& row) const;

private:
    struct Layer {
        Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b, w1, b1, w2, b2;
    };

    DecoderConfig cfg_;
    int vocab_size_;
    Tensor tok_emb_;  // [V, d]
    Tensor pos_emb_;  // [context_len, d]
    std::vector<Layer> layers_;
    Tensor lnf_g_, lnf_b_, head_w_, head_b_;
};

// Embedded multimodal sequence:
// [<bos>][image tokens][for each region: index-token embedding, refined
// object token][instruction tokens][response tokens...]
struct MultimodalSequence {
    Tensor rows;                 // [L, d], no positions yet
    std::vector<int> token_ids;  // -1 at non-vocabulary positions
    int prefix_len = 0;          // generation starts after this many rows
    std::vector<int> target_ids;      // target_ids[p] = token at p+1 (or -1)
    std::vector<bool> response_mask;  // positions whose next token is response
};

// Builds the training/inference layout. Response ids may be empty
// (inference). Errors when the sequence exceeds the context length.
MultimodalSequence build_input_sequence(const TransformerDecoder& decoder,
                                        const Vocabulary& vocab, const Tensor& image_tokens,
                                        const Tensor& refined_tokens,
                                        const std::vector<int>& instruction_ids,
                                        const std::vector<int>& response_ids);

// Mean over masked positions of -log softmax probability of the target id.
// Errors on an empty mask; `sum_reduction` restores the pure-sum form.
Tensor ar_loss(const Tensor& logits, const std::vector<int>& target_ids,
               const std::vector<bool>& response_mask, bool sum_reduction = false);

struct DecodeResult {
    std::vector<int> ids;
    std::vector<double> probs;  // softmax probability of each emitted token
};

// Argmax decoding (ties to the lowest id) until <eos> or max_len tokens.
DecodeResult greedy_decode(const TransformerDecoder& decoder, const Vocabulary& vocab,
                           const MultimodalSequence& prefix, int max_len);

}  // namespace cg
