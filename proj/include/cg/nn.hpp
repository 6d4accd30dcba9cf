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
#include <utility>
#include <vector>

#include "cg/rng.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Parameters are seeded by hash(global_seed, name), so initialization does
// not depend on construction order and two builds with the same seed share
// identical non-overlapping parameter sets.
inline Tensor init_gaussian(const std::string& name, const Shape& shape, uint64_t seed,
                            double scale) {
    Rng rng(mix_seed(seed, fnv1a(name)));
    std::vector<double> d(size_t(shape_numel(shape)), 0.0);
    for (auto& v : d) v = rng.normal(0.0, scale);
    return Tensor::param(shape, std::move(d));
}

inline Tensor init_zeros(const Shape& shape) {
    return Tensor::param(shape, std::vector<double>(size_t(shape_numel(shape)), 0.0));
}

struct ParamRegistry {
    std::vector<std::pair<std::string, Tensor>> items;
    void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }
    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }
};

struct Linear {
    Tensor w, b;

    static Linear make(const std::string& name, int in, int out, uint64_t seed) {
        return {init_gaussian(name + ".w", {in, out}, seed, 1.0 / std::sqrt(double(in))),
                init_zeros({out})};
    }
    Tensor apply(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
    void reg(ParamRegistry& r, const std::string& name) const {
        r.add(name + ".w", w);
        r.add(name + ".b", b);
    }
};

}  // namespace cg
