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

#include "cg/grammar.hpp"

#include <stdexcept>

namespace cg {

std::vector<int> format_grounding_target(const Vocabulary& vocab, const std::string& phrase,
                                         const std::vector<int>& indices, bool append_eos) {
    const std::vector<int> words = vocab.encode_words(phrase);
    if (words.empty()) throw std::invalid_argument("grounding target: empty phrase");
    for (int w : words)
        if (!vocab.is_word(w))
            throw std::invalid_argument("grounding target: phrase contains special token '" +
                                        vocab.token(w) + "'");
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 1 || indices[i] > vocab.max_regions())
            throw std::invalid_argument("grounding target: index " + std::to_string(indices[i]) +
                                        " outside [1, " + std::to_string(vocab.max_regions()) +
                                        "]");
        if (i > 0 && indices[i] <= indices[i - 1])
            throw std::invalid_argument("grounding target: indices must be strictly ascending");
    }
    std::vector<int> ids;
    ids.push_back(vocab.g_open());
    ids.insert(ids.end(), words.begin(), words.end());
    ids.push_back(vocab.g_close());
    ids.push_back(vocab.o_open());
    for (int k : indices) ids.push_back(vocab.obj_id(k));
    ids.push_back(vocab.o_close());
    if (append_eos) ids.push_back(vocab.eos());
    return ids;
}

GroundingOutput parse_grounding_output(const Vocabulary& vocab, const std::vector<int>& ids,
                                       const std::vector<double>* probs) {
    if (probs && probs->size() != ids.size())
        throw std::invalid_argument("parse_grounding_output: probs must parallel ids");
    GroundingOutput out;
    size_t pos = 0;
    const size_t n = ids.size();
    auto valid_id = [&](size_t p) { return ids[p] >= 0 && ids[p] < vocab.size(); };

    while (pos < n) {
        if (valid_id(pos) && ids[pos] == vocab.eos()) break;  // clean end
        GroundingGroup group;
        // <g>
        if (!valid_id(pos) || ids[pos] != vocab.g_open()) {
            out.any_malformed = true;
            break;  // out-of-grammar tail dropped
        }
        ++pos;
        // phrase words
        std::vector<int> words;
        while (pos < n && valid_id(pos) && vocab.is_word(ids[pos])) words.push_back(ids[pos++]);
        group.phrase = vocab.decode(words);
        if (pos >= n || !valid_id(pos) || ids[pos] != vocab.g_close() || words.empty()) {
            group.malformed = true;
            out.any_malformed = true;
            if (!words.empty()) out.groups.push_back(std::move(group));
            break;
        }
        ++pos;
        // <o>
        if (pos >= n || !valid_id(pos) || ids[pos] != vocab.o_open()) {
            group.malformed = true;
            out.any_malformed = true;
            out.groups.push_back(std::move(group));
            break;
        }
        ++pos;
        // index tokens, any order
        while (pos < n && valid_id(pos) && vocab.is_obj(ids[pos])) {
            group.indices.push_back(vocab.obj_index(ids[pos]));
            group.confidences.push_back(probs ? (*probs)[pos] : 1.0);
            ++pos;
        }
        if (pos >= n || !valid_id(pos) || ids[pos] != vocab.o_close()) {
            // truncated group: recovered with the flag set
            group.malformed = true;
            out.any_malformed = true;
            out.groups.push_back(std::move(group));
            break;
        }
        ++pos;
        out.groups.push_back(std::move(group));
    }
    return out;
}

}  // namespace cg
