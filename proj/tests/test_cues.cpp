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

#include <doctest.h>

#include <cmath>

#include "cg/cues.hpp"
#include "cg/scene.hpp"

using namespace cg;

namespace {
constexpr uint64_t kSalt = 1009;  // default hash salt from the stock config

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int i = 0; i < a.dim(0); ++i) s += a.at(i) * b.at(i);
    return s;
}

Tensor random_rows(int m, int n, uint64_t seed, double scale = 0.6) {
    Rng rng(seed);
    std::vector<double> d(size_t(m) * size_t(n));
    for (auto& v : d) v = rng.normal(0, scale);
    return Tensor::param({m, n}, std::move(d));
}
}  // namespace

TEST_CASE("text embeddings: deterministic, unit norm, empty rejected") {
    TextEmbedder emb(32, kSalt);
    Tensor a = emb.embed("the small red vehicle");
    Tensor b = emb.embed("the small red vehicle");
    CHECK(a.data() == b.data());
    CHECK(std::abs(std::sqrt(dot(a, a)) - 1.0) < 1e-9);
    CHECK_THROWS_AS(emb.embed(""), std::invalid_argument);
    CHECK_THROWS_AS(emb.embed("   "), std::invalid_argument);
    // different expressions embed differently
    Tensor c = emb.embed("the small blue vehicle");
    CHECK(std::abs(dot(a, c)) < 0.999);
}

TEST_CASE("category name embeddings are near-orthogonal at d_t=32") {
    TextEmbedder emb(32, kSalt);
    std::vector<Tensor> vecs;
    for (const auto& name : kCategoryNames) vecs.push_back(emb.embed(name));
    for (size_t i = 0; i < vecs.size(); ++i)
        for (size_t j = i + 1; j < vecs.size(); ++j)
            CHECK(std::abs(dot(vecs[i], vecs[j])) < 0.5);
}

TEST_CASE("cue extractor: shape, determinism, gradients") {
    SemanticCueExtractor sce(16, 8, 201);
    Tensor o = random_rows(3, 16, 41);
    Tensor c1 = sce.forward(o);
    CHECK(c1.shape() == Shape{3, 8});
    CHECK(sce.forward(o).data() == c1.data());

    // gradient w.r.t. features and all four layers' weights
    ParamRegistry r;
    sce.reg(r);
    std::vector<Tensor> point{o};
    for (auto& [name, t] : r.items) point.push_back(t);
    auto f = [&](const std::vector<Tensor>& in) {
        Tensor cues = sce.forward(in[0]);
        return mean_all(mul(cues, cues));
    };
    auto rep = grad_check(f, point, 1e-6);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("sce loss anchors: aligned 0, orthogonal 1, anti-aligned 2") {
    TextEmbedder emb(8, kSalt);
    Tensor t0 = emb.embed("person");
    Tensor t1 = emb.embed("vehicle");

    // aligned: cues equal to (scaled) text embeddings
    std::vector<double> rows;
    for (int i = 0; i < 8; ++i) rows.push_back(2.5 * t0.at(i));
    for (int i = 0; i < 8; ++i) rows.push_back(0.7 * t1.at(i));
    Tensor aligned = Tensor::param({2, 8}, rows);
    CHECK(sce_loss(aligned, {0, 1}, {t0, t1}).item() == doctest::Approx(0.0).epsilon(1e-12));

    // anti-aligned
    std::vector<double> neg;
    for (double v : rows) neg.push_back(-v);
    CHECK(sce_loss(Tensor::param({2, 8}, neg), {0, 1}, {t0, t1}).item() ==
          doctest::Approx(2.0).epsilon(1e-12));

    // orthogonal: build an explicit orthogonal pair
    Tensor e0 = Tensor::from({2}, {1, 0});
    Tensor e1 = Tensor::from({2}, {0, 1});
    Tensor cues = Tensor::param({2, 2}, {0, 3, 5, 0});  // row0 = (0,3) orth to e0
    CHECK(sce_loss(cues, {0, 1}, {e0, e1}).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sce loss: empty set contributes zero with a flag") {
    const uint64_t before = sce_loss_empty_count();
    Tensor cues = random_rows(3, 8, 42);
    Tensor l = sce_loss(cues, {}, {});
    CHECK(l.item() == 0.0);
    CHECK(sce_loss_empty_count() == before + 1);
}

TEST_CASE("sce loss properties: range, scale invariance, permutation invariance") {
    TextEmbedder emb(16, kSalt);
    std::vector<Tensor> texts{emb.embed("the small red person"), emb.embed("vehicle"),
                              emb.embed("the large blue bicycle")};
    Tensor cues = random_rows(5, 16, 43);
    std::vector<int> gset{0, 2, 4};
    const double base = sce_loss(cues, gset, texts).item();
    CHECK(base >= 0.0);
    CHECK(base <= 2.0 + 1e-12);

    // positive rescaling of any cue leaves the loss unchanged
    std::vector<double> scaled = cues.data();
    for (int j = 0; j < 16; ++j) scaled[size_t(2 * 16 + j)] *= 7.3;
    const double after = sce_loss(Tensor::param({5, 16}, scaled), gset, texts).item();
    CHECK(after == doctest::Approx(base).epsilon(1e-12));

    // permuting regions (and the index set consistently) leaves it unchanged
    std::vector<int> perm{3, 0, 4, 1, 2};  // new position of old row i
    std::vector<double> pd(5 * 16, 0.0);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 16; ++j) pd[size_t(perm[size_t(i)] * 16 + j)] = cues.at(i, j);
    std::vector<int> pg;
    for (int g : gset) pg.push_back(perm[size_t(g)]);
    const double permuted = sce_loss(Tensor::param({5, 16}, pd), pg, texts).item();
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("sce loss gradient through the extractor passes finite differences") {
    SemanticCueExtractor sce(12, 8, 202);
    TextEmbedder emb(8, kSalt);
    std::vector<Tensor> texts{emb.embed("person"), emb.embed("the small red vehicle")};
    Tensor o = random_rows(4, 12, 44);
    ParamRegistry r;
    sce.reg(r);
    std::vector<Tensor> point{o};
    for (auto& [n, t] : r.items) point.push_back(t);
    auto f = [&](const std::vector<Tensor>& in) {
        return sce_loss(sce.forward(in[0]), {1, 3}, texts);
    };
    auto rep = grad_check(f, point, 1e-6);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("cue projector: width, zero path, gradient") {
    SemanticCueProjector scp(8, 24, 203);
    Tensor out = scp.forward(Tensor::zeros({3, 8}));
    CHECK(out.shape() == Shape{3, 24});
    for (double v : out.data()) CHECK(v == 0.0);  // zero biases at init

    Tensor cues = random_rows(3, 8, 45);
    ParamRegistry r;
    scp.reg(r);
    std::vector<Tensor> point{cues};
    for (auto& [n, t] : r.items) point.push_back(t);
    auto f = [&](const std::vector<Tensor>& in) {
        Tensor y = scp.forward(in[0]);
        return mean_all(mul(y, y));
    };
    CHECK(grad_check(f, point, 1e-6).max_rel_err < 1e-4);
}

TEST_CASE("cross-attention is an exact identity at initialization") {
    LowRankCrossAttention xattn(16, 8, 4, ResidualSource::kObject, 204);
    Tensor q = random_rows(5, 16, 46);
    Tensor obj = random_rows(5, 16, 47);
    Tensor refined = xattn.forward(q, obj);
    CHECK(refined.data() == obj.data());  // bitwise
}

TEST_CASE("cross-attention on a single region reduces to the softmax singleton") {
    LowRankCrossAttention xattn(6, 4, 2, ResidualSource::kObject, 205);
    ParamRegistry r;
    xattn.reg(r);
    // make the up-projection nonzero
    auto& wo = const_cast<Tensor&>(*r.find("xattn.wo")).mutable_data();
    Rng rng(48);
    for (auto& v : wo) v = rng.normal(0, 0.3);
    Tensor q = random_rows(1, 6, 49);
    Tensor obj = random_rows(1, 6, 50);
    Tensor refined = xattn.forward(q, obj);
    // oracle: attention weight is exactly 1, so out = obj + concat(V_h) * Wo
    const Tensor w_o = *r.find("xattn.wo");
    std::vector<double> merged;
    for (int h = 0; h < 2; ++h) {
        const Tensor wv = *r.find("xattn.head" + std::to_string(h) + ".wv");
        for (int c = 0; c < 2; ++c) {
            double s = 0.0;
            for (int i = 0; i < 6; ++i) s += obj.at(0, i) * wv.at(i, c);
            merged.push_back(s);
        }
    }
    for (int j = 0; j < 6; ++j) {
        double want = obj.at(0, j);
        for (int c = 0; c < 4; ++c) want += merged[size_t(c)] * w_o.at(c, j);
        CHECK(refined.at(0, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("cross-attention matches a long-double reference on a random instance") {
    const int d = 8, rank = 4, heads = 2, m = 3;
    LowRankCrossAttention xattn(d, rank, heads, ResidualSource::kObject, 206);
    ParamRegistry r;
    xattn.reg(r);
    Rng rng(51);
    auto& wo = const_cast<Tensor&>(*r.find("xattn.wo")).mutable_data();
    for (auto& v : wo) v = rng.normal(0, 0.4);
    Tensor q = random_rows(m, d, 52);
    Tensor obj = random_rows(m, d, 53);
    Tensor refined = xattn.forward(q, obj);

    // plain per-element reference at extended precision
    const int rh = rank / heads;
    std::vector<long double> merged(size_t(m) * size_t(rank), 0.0L);
    for (int h = 0; h < heads; ++h) {
        const Tensor wq = *r.find("xattn.head" + std::to_string(h) + ".wq");
        const Tensor wk = *r.find("xattn.head" + std::to_string(h) + ".wk");
        const Tensor wv = *r.find("xattn.head" + std::to_string(h) + ".wv");
        std::vector<long double> Q(size_t(m) * size_t(rh), 0.0L), K = Q, V = Q;
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < rh; ++c)
                for (int k = 0; k < d; ++k) {
                    Q[size_t(i * rh + c)] += (long double)q.at(i, k) * wq.at(k, c);
                    K[size_t(i * rh + c)] += (long double)obj.at(i, k) * wk.at(k, c);
                    V[size_t(i * rh + c)] += (long double)obj.at(i, k) * wv.at(k, c);
                }
        for (int i = 0; i < m; ++i) {
            std::vector<long double> row(size_t(m), 0.0L);
            long double mx = -1e30L;
            for (int j = 0; j < m; ++j) {
                long double s = 0.0L;
                for (int c = 0; c < rh; ++c) s += Q[size_t(i * rh + c)] * K[size_t(j * rh + c)];
                row[size_t(j)] = s / sqrtl((long double)rh);
                mx = std::max(mx, row[size_t(j)]);
            }
            long double z = 0.0L;
            for (int j = 0; j < m; ++j) {
                row[size_t(j)] = expl(row[size_t(j)] - mx);
                z += row[size_t(j)];
            }
            for (int c = 0; c < rh; ++c) {
                long double acc = 0.0L;
                for (int j = 0; j < m; ++j) acc += row[size_t(j)] / z * V[size_t(j * rh + c)];
                merged[size_t(i * rank + h * rh + c)] = acc;
            }
        }
    }
    const Tensor w_o = *r.find("xattn.wo");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
            long double want = obj.at(i, j);
            for (int c = 0; c < rank; ++c) want += merged[size_t(i * rank + c)] * w_o.at(c, j);
            CHECK(std::abs(refined.at(i, j) - double(want)) < 1e-12);
        }
}

TEST_CASE("cross-attention permutation equivariance") {
    const int d = 10, m = 4;
    LowRankCrossAttention xattn(d, 8, 2, ResidualSource::kObject, 207);
    ParamRegistry r;
    xattn.reg(r);
    Rng rng(54);
    auto& wo = const_cast<Tensor&>(*r.find("xattn.wo")).mutable_data();
    for (auto& v : wo) v = rng.normal(0, 0.4);
    Tensor q = random_rows(m, d, 55);
    Tensor obj = random_rows(m, d, 56);
    Tensor base = xattn.forward(q, obj);

    const std::vector<int> perm{2, 0, 3, 1};  // output row perm[i] <- input row i
    std::vector<double> qp(size_t(m) * d), op(size_t(m) * d);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
            qp[size_t(perm[size_t(i)] * d + j)] = q.at(i, j);
            op[size_t(perm[size_t(i)] * d + j)] = obj.at(i, j);
        }
    Tensor permuted = xattn.forward(Tensor::from({m, d}, qp), Tensor::from({m, d}, op));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j)
            CHECK(permuted.at(perm[size_t(i)], j) == doctest::Approx(base.at(i, j)).epsilon(1e-12));
}

TEST_CASE("cross-attention gradient and empty input") {
    LowRankCrossAttention xattn(8, 4, 2, ResidualSource::kObject, 208);
    ParamRegistry r;
    xattn.reg(r);
    auto& wo = const_cast<Tensor&>(*r.find("xattn.wo")).mutable_data();
    Rng rng(57);
    for (auto& v : wo) v = rng.normal(0, 0.3);

    Tensor empty = xattn.forward(Tensor::zeros({0, 8}), Tensor::zeros({0, 8}));
    CHECK(empty.shape() == Shape{0, 8});

    Tensor q = random_rows(3, 8, 58);
    Tensor obj = random_rows(3, 8, 59);
    std::vector<Tensor> point{q, obj};
    for (auto& [n, t] : r.items) point.push_back(t);
    auto f = [&](const std::vector<Tensor>& in) {
        Tensor y = xattn.forward(in[0], in[1]);
        return mean_all(mul(y, y));
    };
    CHECK(grad_check(f, point, 1e-6).max_rel_err < 1e-4);
}

TEST_CASE("cue residual source variant") {
    LowRankCrossAttention xattn(8, 4, 2, ResidualSource::kCue, 209);
    Tensor q = random_rows(3, 8, 60);
    Tensor obj = random_rows(3, 8, 61);
    // at init (wo = 0) the cue-residual variant returns the queries instead
    Tensor out = xattn.forward(q, obj);
    CHECK(out.data() == q.data());
}
