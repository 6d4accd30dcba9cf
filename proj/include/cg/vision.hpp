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

#include <cstdint>
#include <string>
#include <vector>

#include "cg/box.hpp"
#include "cg/nn.hpp"
#include "cg/scene.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Visual pipeline: image encoding/projection, region proposal with NMS and
// max-N filtering, RoIAlign feature extraction, region encoding/projection
// into the decoder embedding space.

// Greedy NMS: repeatedly keep the highest-score box, suppress boxes with
// IoU > threshold. Ties broken by lower original index; output sorted by
// descending score.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold);

// Bilinear RoIAlign, one sample per output cell at the sub-cell center,
// computed in lerp form so a constant map pools to the constant exactly.
// Differentiable w.r.t. the feature map. Boxes thinner than one feature
// cell are clamped to one cell width (flag reported when non-null).
Tensor roi_align(const Tensor& fm, const Box& box, int pooled, bool* clamped = nullptr);

enum class Provenance { kProposed, kGroundTruth };

struct RegionSet {
    std::vector<Box> boxes;
    std::vector<double> objectness;
    std::vector<Provenance> provenance;
    // caption for ground-truth entries, empty otherwise
    std::vector<std::string> expressions;
    // source GT object index, -1 for false positives
    std::vector<int> source_object;
    // indices of ground-truth-sourced entries (training only; empty at
    // inference)
    std::vector<int> gt_indices;

    size_t size() const { return boxes.size(); }
    void push(const Box& b, double score, Provenance prov, std::string expr = "",
              int source = -1) {
        boxes.push_back(b);
        objectness.push_back(score);
        provenance.push_back(prov);
        expressions.push_back(std::move(expr));
        source_object.push_back(source);
    }
    void check_invariants(int max_regions) const;
};

struct ProposerConfig {
    double p_rec = 0.85;    // per-object recall probability
    double sigma_jit = 0.02;  // coordinate noise, relative to box extent
    int n_fp = 2;           // uniform false positives per scene
    int max_regions = 16;   // the predefined maximum N
    double nms_iou = 0.75;
};

// Frozen oracle-jitter proposer: emits a jittered copy of each GT box with
// probability p_rec plus uniform false positives, scores them, then NMS and
// max-N filtering by objectness.
RegionSet propose_regions(const Scene& scene, const ProposerConfig& cfg, uint64_t seed);

// Tiny trainable patch-convolution encoder, two k3 stride-2 stages (stride 4
// total), GELU between.
class ConvEncoder {
public:
    ConvEncoder(int in_channels, int mid_channels, int out_channels, int height, int width,
                uint64_t seed);

    // raster [C,H,W] in [0,1] -> feature map [C_f, H/4, W/4]
    Tensor forward(const Tensor& raster) const;
    void reg(ParamRegistry& r) const;

    int out_channels() const { return out_channels_; }
    int out_height() const { return height_ / 4; }
    int out_width() const { return width_ / 4; }

private:
    int in_channels_, mid_channels_, out_channels_, height_, width_;
    Tensor w1_, b1_, w2_, b2_;  // [C*9, C_out] weights
    std::vector<int64_t> im2col1_, im2col2_;
};

// Flattens feature map positions to rows and linearly maps C_f -> d_llm.
// Optional 4x mean pooling (2x2 blocks) shrinks 256 tokens to 64.
class ImageProjector {
public:
    ImageProjector(int fm_channels, int fm_h, int fm_w, int d_llm, bool pool4, uint64_t seed);

    Tensor forward(const Tensor& fm) const;  // -> [n_tokens, d_llm]
    int n_tokens() const { return pool4_ ? (fm_h_ * fm_w_) / 4 : fm_h_ * fm_w_; }
    void reg(ParamRegistry& r) const;

private:
    int fm_channels_, fm_h_, fm_w_;
    bool pool4_;
    Linear proj_;
    std::vector<int64_t> chw_to_hwc_;
    Tensor pool_;  // constant block-mean matrix when pooling
};

// RoIAlign -> flatten (C_f * P^2) -> linear + GELU -> d_o
class RegionEncoder {
public:
    RegionEncoder(int fm_channels, int pooled, int d_o, uint64_t seed);

    Tensor forward_one(const Tensor& fm, const Box& box) const;  // -> [d_o]
    // boxes stacked as rows -> [m, d_o]
    Tensor forward(const Tensor& fm, const std::vector<Box>& boxes) const;
    void reg(ParamRegistry& r) const;
    int pooled() const { return pooled_; }

private:
    int fm_channels_, pooled_, d_o_;
    Linear enc_;
};

// 2-layer map d_o -> d_llm with GELU between
class RegionProjector {
public:
    RegionProjector(int d_o, int d_llm, uint64_t seed);
    Tensor forward(const Tensor& features) const;  // [m, d_o] -> [m, d_llm]
    void reg(ParamRegistry& r) const;

private:
    Linear l1_, l2_;
};

}  // namespace cg
