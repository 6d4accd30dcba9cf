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
#include <unordered_map>
#include <vector>

namespace cg {

// Closed vocabulary: grammar specials, N contiguous region-index tokens,
// then the caption/instruction words. Ids are positions in the token list;
// the list is the wire format (JSON array, id = position).
class Vocabulary {
public:
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kBos = "<bos>";
    static constexpr const char* kEos = "<eos>";
    static constexpr const char* kGOpen = "<g>";
    static constexpr const char* kGClose = "</g>";
    static constexpr const char* kOOpen = "<o>";
    static constexpr const char* kOClose = "</o>";

    // canonical vocabulary for a given region budget
    static Vocabulary build(int max_regions);
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int size() const { return int(tokens_.size()); }
    int id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    const std::string& token(int id) const;

    int pad() const { return pad_; }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int g_open() const { return g_open_; }
    int g_close() const { return g_close_; }
    int o_open() const { return o_open_; }
    int o_close() const { return o_close_; }

    int max_regions() const { return max_regions_; }
    // 1-based region index -> token id
    int obj_id(int k) const;
    bool is_obj(int id) const { return id >= obj_base_ && id < obj_base_ + max_regions_; }
    // token id -> 1-based region index
    int obj_index(int id) const { return id - obj_base_ + 1; }
    bool is_word(int id) const;  // plain caption/instruction word

    // whitespace tokenization against the closed vocabulary
    std::vector<int> encode_words(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    const std::vector<std::string>& tokens() const { return tokens_; }
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    void finish();  // builds the index and locates specials

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int pad_ = -1, bos_ = -1, eos_ = -1;
    int g_open_ = -1, g_close_ = -1, o_open_ = -1, o_close_ = -1;
    int obj_base_ = -1, max_regions_ = 0;
};

}  // namespace cg
