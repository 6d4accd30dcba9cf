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

#include "cg/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cg/scene.hpp"

namespace cg {

Vocabulary Vocabulary::build(int max_regions) {
    std::vector<std::string> toks{kPad, kBos, kEos, kGOpen, kGClose, kOOpen, kOClose};
    for (int k = 1; k <= max_regions; ++k) toks.push_back("<obj" + std::to_string(k) + ">");
    toks.push_back("the");
    for (const char* s : {"small", "medium", "large"}) toks.emplace_back(s);
    for (const auto& c : kColorNames) toks.push_back(c);
    for (const auto& c : kCategoryNames) toks.push_back(c);
    toks.emplace_back("find:");
    toks.emplace_back("describe:");
    return from_tokens(std::move(toks));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.finish();
    return v;
}

void Vocabulary::finish() {
    index_.clear();
    for (int i = 0; i < int(tokens_.size()); ++i) {
        if (!index_.emplace(tokens_[size_t(i)], i).second)
            throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[size_t(i)] +
                                        "'");
    }
    auto need = [&](const char* t) {
        auto it = index_.find(t);
        if (it == index_.end())
            throw std::invalid_argument("vocabulary: missing special token " + std::string(t));
        return it->second;
    };
    pad_ = need(kPad);
    bos_ = need(kBos);
    eos_ = need(kEos);
    g_open_ = need(kGOpen);
    g_close_ = need(kGClose);
    o_open_ = need(kOOpen);
    o_close_ = need(kOClose);
    // index tokens must be contiguous <obj1>..<objN>
    obj_base_ = -1;
    max_regions_ = 0;
    for (int k = 1;; ++k) {
        auto it = index_.find("<obj" + std::to_string(k) + ">");
        if (it == index_.end()) break;
        if (k == 1)
            obj_base_ = it->second;
        else if (it->second != obj_base_ + k - 1)
            throw std::invalid_argument("vocabulary: index tokens are not contiguous");
        ++max_regions_;
    }
    if (max_regions_ == 0) throw std::invalid_argument("vocabulary: no index tokens");
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end())
        throw std::invalid_argument("vocabulary: unknown token '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size())
        throw std::invalid_argument("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[size_t(id)];
}

int Vocabulary::obj_id(int k) const {
    if (k < 1 || k > max_regions_)
        throw std::invalid_argument("vocabulary: region index " + std::to_string(k) +
                                    " outside [1, " + std::to_string(max_regions_) + "]");
    return obj_base_ + k - 1;
}

bool Vocabulary::is_word(int id) const {
    if (id < 0 || id >= size()) return false;
    if (id == pad_ || id == bos_ || id == eos_) return false;
    if (id == g_open_ || id == g_close_ || id == o_open_ || id == o_close_) return false;
    return !is_obj(id);
}

std::vector<int> Vocabulary::encode_words(const std::string& text) const {
    std::istringstream is(text);
    std::string tok;
    std::vector<int> ids;
    while (is >> tok) ids.push_back(id(tok));
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
    out << nlohmann::json(tokens_).dump() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
    nlohmann::json j;
    in >> j;
    return from_tokens(j.get<std::vector<std::string>>());
}

}  // namespace cg
