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

#include <stdexcept>

#include "cg/rng.hpp"

namespace cg {

namespace {
const char kB64Table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace

std::string base64_encode(const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= n; i += 3) {
        const uint32_t v = uint32_t(p[i]) << 16 | uint32_t(p[i + 1]) << 8 | uint32_t(p[i + 2]);
        out.push_back(kB64Table[(v >> 18) & 63]);
        out.push_back(kB64Table[(v >> 12) & 63]);
        out.push_back(kB64Table[(v >> 6) & 63]);
        out.push_back(kB64Table[v & 63]);
    }
    if (i + 1 == n) {
        const uint32_t v = uint32_t(p[i]) << 16;
        out.push_back(kB64Table[(v >> 18) & 63]);
        out.push_back(kB64Table[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == n) {
        const uint32_t v = uint32_t(p[i]) << 16 | uint32_t(p[i + 1]) << 8;
        out.push_back(kB64Table[(v >> 18) & 63]);
        out.push_back(kB64Table[(v >> 12) & 63]);
        out.push_back(kB64Table[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + size_t(k)];
            if (c == '=') {
                vals[k] = 0;
                ++pad;
            } else {
                vals[k] = b64_value(c);
                if (vals[k] < 0) throw std::invalid_argument("base64: invalid character");
                if (pad) throw std::invalid_argument("base64: data after padding");
            }
        }
        const uint32_t v = uint32_t(vals[0]) << 18 | uint32_t(vals[1]) << 12 |
                           uint32_t(vals[2]) << 6 | uint32_t(vals[3]);
        out.push_back((v >> 16) & 0xff);
        if (pad < 2) out.push_back((v >> 8) & 0xff);
        if (pad < 1) out.push_back(v & 0xff);
    }
    return out;
}

}  // namespace cg
