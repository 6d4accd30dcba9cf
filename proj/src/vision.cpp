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

#include "cg/vision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cg {

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold) {
    if (boxes.size() != scores.size())
        throw std::invalid_argument("nms: " + std::to_string(boxes.size()) + " boxes vs " +
                                    std::to_string(scores.size()) + " scores");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[size_t(a)] != scores[size_t(b)]) return scores[size_t(a)] > scores[size_t(b)];
        return a < b;
    });
    std::vector<int> kept;
    std::vector<bool> suppressed(boxes.size(), false);
    for (int idx : order) {
        if (suppressed[size_t(idx)]) continue;
        kept.push_back(idx);
        for (int other : order)
            if (!suppressed[size_t(other)] && other != idx &&
                iou(boxes[size_t(idx)], boxes[size_t(other)]) > iou_threshold)
                suppressed[size_t(other)] = true;
    }
    return kept;
}

Tensor roi_align(const Tensor& fm, const Box& box, int pooled, bool* clamped) {
    if (fm.rank() != 3) throw std::invalid_argument("roi_align: feature map must be [C,H,W]");
    if (pooled < 1) throw std::invalid_argument("roi_align: pooled size must be >= 1");
    box.check_valid("roi_align");
    const int C = fm.dim(0), H = fm.dim(1), W = fm.dim(2);

    Box b = box;
    const double min_w = 1.0 / W, min_h = 1.0 / H;
    if (b.width() < min_w) {
        const double c = b.cx();
        b.x1 = std::clamp(c - min_w / 2, 0.0, 1.0 - min_w);
        b.x2 = b.x1 + min_w;
        if (clamped) *clamped = true;
    }
    if (b.height() < min_h) {
        const double c = b.cy();
        b.y1 = std::clamp(c - min_h / 2, 0.0, 1.0 - min_h);
        b.y2 = b.y1 + min_h;
        if (clamped) *clamped = true;
    }

    struct Sample {
        int x0, x1, y0, y1;
        double wx, wy;
    };
    std::vector<Sample> samples(size_t(pooled) * size_t(pooled));
    for (int py = 0; py < pooled; ++py)
        for (int px = 0; px < pooled; ++px) {
            const double u = b.x1 + (px + 0.5) * b.width() / pooled;
            const double v = b.y1 + (py + 0.5) * b.height() / pooled;
            // cell (i,j) center sits at ((j+0.5)/W, (i+0.5)/H)
            double fx = u * W - 0.5;
            double fy = v * H - 0.5;
            fx = std::clamp(fx, 0.0, double(W - 1));
            fy = std::clamp(fy, 0.0, double(H - 1));
            Sample s;
            s.x0 = int(std::floor(fx));
            s.y0 = int(std::floor(fy));
            s.x1 = std::min(s.x0 + 1, W - 1);
            s.y1 = std::min(s.y0 + 1, H - 1);
            s.wx = fx - s.x0;
            s.wy = fy - s.y0;
            samples[size_t(py) * size_t(pooled) + size_t(px)] = s;
        }

    std::vector<double> out(size_t(C) * samples.size());
    const auto& d = fm.data();
    const auto plane = size_t(H) * size_t(W);
    for (int c = 0; c < C; ++c)
        for (size_t k = 0; k < samples.size(); ++k) {
            const Sample& s = samples[k];
            const double v00 = d[size_t(c) * plane + size_t(s.y0) * size_t(W) + size_t(s.x0)];
            const double v01 = d[size_t(c) * plane + size_t(s.y0) * size_t(W) + size_t(s.x1)];
            const double v10 = d[size_t(c) * plane + size_t(s.y1) * size_t(W) + size_t(s.x0)];
            const double v11 = d[size_t(c) * plane + size_t(s.y1) * size_t(W) + size_t(s.x1)];
            // lerp form: exact for constant maps
            const double top = v00 + s.wx * (v01 - v00);
            const double bot = v10 + s.wx * (v11 - v10);
            out[size_t(c) * samples.size() + k] = top + s.wy * (bot - top);
        }
    return make_op({C, pooled, pooled}, std::move(out), {fm},
                   [C, W, plane, samples](TensorNode& nd) {
                       auto& p = nd.parents[0];
                       for (int c = 0; c < C; ++c)
                           for (size_t k = 0; k < samples.size(); ++k) {
                               const Sample& s = samples[k];
                               const double g = nd.grad[size_t(c) * samples.size() + k];
                               double* gp = p->grad.data() + size_t(c) * plane;
                               gp[size_t(s.y0) * size_t(W) + size_t(s.x0)] +=
                                   g * (1 - s.wx) * (1 - s.wy);
                               gp[size_t(s.y0) * size_t(W) + size_t(s.x1)] +=
                                   g * s.wx * (1 - s.wy);
                               gp[size_t(s.y1) * size_t(W) + size_t(s.x0)] +=
                                   g * (1 - s.wx) * s.wy;
                               gp[size_t(s.y1) * size_t(W) + size_t(s.x1)] += g * s.wx * s.wy;
                           }
                   });
}

void RegionSet::check_invariants(int max_regions) const {
    if (boxes.size() != objectness.size() || boxes.size() != provenance.size() ||
        boxes.size() != expressions.size() || boxes.size() != source_object.size())
        throw std::logic_error("RegionSet: parallel arrays out of sync");
    if (int(boxes.size()) > max_regions)
        throw std::logic_error("RegionSet: " + std::to_string(boxes.size()) +
                               " regions exceed the maximum " + std::to_string(max_regions));
    for (const auto& b : boxes) b.check_valid("RegionSet");
    for (double s : objectness)
        if (s < 0.0 || s > 1.0) throw std::logic_error("RegionSet: objectness outside [0,1]");
    for (int g : gt_indices)
        if (g < 0 || g >= int(boxes.size()))
            throw std::logic_error("RegionSet: gt index out of range");
}

RegionSet propose_regions(const Scene& scene, const ProposerConfig& cfg, uint64_t seed) {
    Rng rng(mix_seed(seed, fnv1a("proposer")));
    RegionSet cand;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        if (!rng.bernoulli(cfg.p_rec)) continue;
        const Box& gt = scene.objects[i].box;
        const double w = gt.width(), h = gt.height();
        // truncated relative jitter keeps IoU with the source above 0.5
        auto jit = [&](double extent) {
            return std::clamp(rng.normal(0.0, cfg.sigma_jit), -2.0 * cfg.sigma_jit,
                              2.0 * cfg.sigma_jit) *
                   extent;
        };
        const double dx1 = jit(w), dx2 = jit(w), dy1 = jit(h), dy2 = jit(h);
        Box b{gt.x1 + dx1, gt.y1 + dy1, gt.x2 + dx2, gt.y2 + dy2};
        b.x1 = std::clamp(b.x1, 0.0, 1.0);
        b.y1 = std::clamp(b.y1, 0.0, 1.0);
        b.x2 = std::clamp(b.x2, 0.0, 1.0);
        b.y2 = std::clamp(b.y2, 0.0, 1.0);
        const double min_ext = 1.0 / 64.0;
        if (b.width() < min_ext) {
            const double c = std::clamp(b.cx(), min_ext / 2, 1.0 - min_ext / 2);
            b.x1 = c - min_ext / 2;
            b.x2 = c + min_ext / 2;
        }
        if (b.height() < min_ext) {
            const double c = std::clamp(b.cy(), min_ext / 2, 1.0 - min_ext / 2);
            b.y1 = c - min_ext / 2;
            b.y2 = c + min_ext / 2;
        }
        const double rel =
            (std::abs(dx1) / w + std::abs(dx2) / w + std::abs(dy1) / h + std::abs(dy2) / h) / 4.0;
        const double score = 0.9 - 2.0 * rel;
        cand.push(b, score, Provenance::kProposed, "", int(i));
    }
    for (int f = 0; f < cfg.n_fp; ++f) {
        const double w = rng.uniform(0.04, 0.35);
        const double h = rng.uniform(0.04, 0.35);
        const double cx = rng.uniform(w / 2, 1.0 - w / 2);
        const double cy = rng.uniform(h / 2, 1.0 - h / 2);
        cand.push({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, rng.uniform(0.1, 0.6),
                  Provenance::kProposed);
    }

    const std::vector<int> kept = nms(cand.boxes, cand.objectness, cfg.nms_iou);
    RegionSet out;
    for (int idx : kept) {
        if (int(out.size()) >= cfg.max_regions) break;  // kept is score-sorted
        out.push(cand.boxes[size_t(idx)], cand.objectness[size_t(idx)],
                 cand.provenance[size_t(idx)], cand.expressions[size_t(idx)],
                 cand.source_object[size_t(idx)]);
    }
    out.check_invariants(cfg.max_regions);
    return out;
}

// ---------------------------------------------------------------------------
// encoders / projectors
// ---------------------------------------------------------------------------

namespace {

// im2col index map for a k3 stride-2 pad-1 convolution, input [C,H,W] ->
// rows (H/2 * W/2) x cols (C*9); -1 marks padding
std::vector<int64_t> build_im2col(int C, int H, int W) {
    const int HO = H / 2, WO = W / 2;
    std::vector<int64_t> idx;
    idx.reserve(size_t(HO) * size_t(WO) * size_t(C) * 9);
    for (int oy = 0; oy < HO; ++oy)
        for (int ox = 0; ox < WO; ++ox)
            for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const int iy = oy * 2 - 1 + ky;
                        const int ix = ox * 2 - 1 + kx;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                            idx.push_back(-1);
                        else
                            idx.push_back(int64_t(c) * H * W + int64_t(iy) * W + ix);
                    }
    return idx;
}

std::vector<int64_t> build_chw_to_hwc(int C, int H, int W) {
    std::vector<int64_t> idx;
    idx.reserve(size_t(C) * size_t(H) * size_t(W));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) idx.push_back(int64_t(c) * H * W + int64_t(y) * W + x);
    return idx;
}

}  // namespace

ConvEncoder::ConvEncoder(int in_channels, int mid_channels, int out_channels, int height,
                         int width, uint64_t seed)
    : in_channels_(in_channels),
      mid_channels_(mid_channels),
      out_channels_(out_channels),
      height_(height),
      width_(width) {
    if (height % 4 != 0 || width % 4 != 0)
        throw std::invalid_argument("ConvEncoder: raster dims must be divisible by 4");
    const int in1 = in_channels * 9, in2 = mid_channels * 9;
    w1_ = init_gaussian("encoder.conv1.w", {in1, mid_channels}, seed, 1.0 / std::sqrt(in1));
    b1_ = init_zeros({mid_channels});
    w2_ = init_gaussian("encoder.conv2.w", {in2, out_channels}, seed, 1.0 / std::sqrt(in2));
    b2_ = init_zeros({out_channels});
    im2col1_ = build_im2col(in_channels, height, width);
    im2col2_ = build_im2col(mid_channels, height / 2, width / 2);
}

Tensor ConvEncoder::forward(const Tensor& raster) const {
    if (raster.rank() != 3 || raster.dim(0) != in_channels_ || raster.dim(1) != height_ ||
        raster.dim(2) != width_)
        throw std::invalid_argument("ConvEncoder: expected [" + std::to_string(in_channels_) +
                                    "," + std::to_string(height_) + "," + std::to_string(width_) +
                                    "] raster, got " + shape_str(raster.shape()));
    const int H1 = height_ / 2, W1 = width_ / 2;
    const int H2 = height_ / 4, W2 = width_ / 4;

    Tensor cols1 = gather_flat(raster, im2col1_, {H1 * W1, in_channels_ * 9});
    Tensor a1 = gelu(add_rowvec(matmul(cols1, w1_), b1_));  // [H1*W1, Cmid]
    // to [Cmid, H1, W1] for the second im2col
    Tensor chw = reshape(transpose(a1), {mid_channels_, H1, W1});
    Tensor cols2 = gather_flat(chw, im2col2_, {H2 * W2, mid_channels_ * 9});
    Tensor a2 = add_rowvec(matmul(cols2, w2_), b2_);  // [H2*W2, Cout]
    return reshape(transpose(a2), {out_channels_, H2, W2});
}

void ConvEncoder::reg(ParamRegistry& r) const {
    r.add("encoder.conv1.w", w1_);
    r.add("encoder.conv1.b", b1_);
    r.add("encoder.conv2.w", w2_);
    r.add("encoder.conv2.b", b2_);
}

ImageProjector::ImageProjector(int fm_channels, int fm_h, int fm_w, int d_llm, bool pool4,
                               uint64_t seed)
    : fm_channels_(fm_channels), fm_h_(fm_h), fm_w_(fm_w), pool4_(pool4) {
    proj_ = Linear::make("img_proj", fm_channels, d_llm, seed);
    chw_to_hwc_ = build_chw_to_hwc(fm_channels, fm_h, fm_w);
    if (pool4) {
        if (fm_h % 2 != 0 || fm_w % 2 != 0)
            throw std::invalid_argument("ImageProjector: pooling needs even feature dims");
        const int n_in = fm_h * fm_w, n_out = n_in / 4;
        std::vector<double> p(size_t(n_out) * size_t(n_in), 0.0);
        for (int by = 0; by < fm_h / 2; ++by)
            for (int bx = 0; bx < fm_w / 2; ++bx) {
                const int row = by * (fm_w / 2) + bx;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int src = (by * 2 + dy) * fm_w + (bx * 2 + dx);
                        p[size_t(row) * size_t(n_in) + size_t(src)] = 0.25;
                    }
            }
        pool_ = Tensor::from({n_out, n_in}, std::move(p));
    }
}

Tensor ImageProjector::forward(const Tensor& fm) const {
    if (fm.rank() != 3 || fm.dim(0) != fm_channels_ || fm.dim(1) != fm_h_ || fm.dim(2) != fm_w_)
        throw std::invalid_argument("ImageProjector: bad feature map " + shape_str(fm.shape()));
    Tensor rows = gather_flat(fm, chw_to_hwc_, {fm_h_ * fm_w_, fm_channels_});
    if (pool4_) rows = matmul(pool_, rows);  // block means
    return proj_.apply(rows);
}

void ImageProjector::reg(ParamRegistry& r) const { proj_.reg(r, "img_proj"); }

RegionEncoder::RegionEncoder(int fm_channels, int pooled, int d_o, uint64_t seed)
    : fm_channels_(fm_channels), pooled_(pooled), d_o_(d_o) {
    enc_ = Linear::make("region_enc", fm_channels * pooled * pooled, d_o, seed);
}

Tensor RegionEncoder::forward_one(const Tensor& fm, const Box& box) const {
    Tensor roi = roi_align(fm, box, pooled_);
    Tensor flat = reshape(roi, {1, fm_channels_ * pooled_ * pooled_});
    return reshape(gelu(enc_.apply(flat)), {d_o_});
}

Tensor RegionEncoder::forward(const Tensor& fm, const std::vector<Box>& boxes) const {
    std::vector<Tensor> rows;
    rows.reserve(boxes.size());
    for (const auto& b : boxes)
        rows.push_back(reshape(roi_align(fm, b, pooled_), {1, fm_channels_ * pooled_ * pooled_}));
    Tensor stacked = concat_rows(rows);  // [m, C*P*P]
    return gelu(enc_.apply(stacked));
}

void RegionEncoder::reg(ParamRegistry& r) const { enc_.reg(r, "region_enc"); }

RegionProjector::RegionProjector(int d_o, int d_llm, uint64_t seed) {
    l1_ = Linear::make("region_proj.l1", d_o, d_llm, seed);
    l2_ = Linear::make("region_proj.l2", d_llm, d_llm, seed);
}

Tensor RegionProjector::forward(const Tensor& features) const {
    return l2_.apply(gelu(l1_.apply(features)));
}

void RegionProjector::reg(ParamRegistry& r) const {
    l1_.reg(r, "region_proj.l1");
    l2_.reg(r, "region_proj.l2");
}

}  // namespace cg
