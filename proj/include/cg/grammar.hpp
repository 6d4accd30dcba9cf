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

#include "cg/vocab.hpp"

namespace cg {

// Grounding output grammar: <g>phrase</g><o><objK>...<objL></o>, repeated.

struct GroundingGroup {
    std::string phrase;
    std::vector<int> indices;        // 1-based region indices
    std::vector<double> confidences;  // parallel to indices when probs given
    bool malformed = false;
};

struct GroundingOutput {
    std::vector<GroundingGroup> groups;
    bool any_malformed = false;
};

// Canonical serialization. Requires a nonempty phrase of known words and
// strictly ascending in-range indices; append_eos adds the end token.
std::vector<int> format_grounding_target(const Vocabulary& vocab, const std::string& phrase,
                                         const std::vector<int>& indices, bool append_eos = true);

// Longest-valid-prefix parse; never throws on model output. A truncated or
// out-of-grammar tail is dropped and the affected group flagged. Index
// tokens are accepted in any order. `probs`, when given, must parallel
// `ids` and supplies per-index confidences.
GroundingOutput parse_grounding_output(const Vocabulary& vocab, const std::vector<int>& ids,
                                       const std::vector<double>* probs = nullptr);

}  // namespace cg
