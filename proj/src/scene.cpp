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

#include "cg/scene.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cg/rng.hpp"

namespace cg {

using json = nlohmann::json;

const std::vector<std::string> kCategoryNames = {"person", "people", "vehicle", "bicycle",
                                                 "motorcycle"};
const std::vector<std::string> kColorNames = {"red", "green", "blue", "yellow", "purple",
                                              "orange"};
const std::vector<std::array<double, 3>> kColorPalette = {
    {0.85, 0.16, 0.14}, {0.16, 0.72, 0.22}, {0.18, 0.32, 0.86},
    {0.90, 0.84, 0.18}, {0.60, 0.20, 0.76}, {0.95, 0.55, 0.12},
};

namespace {
constexpr double kBackground = 0.08;
}

const char* size_class_name(SizeClass s) {
    switch (s) {
        case SizeClass::kSmall: return "small";
        case SizeClass::kMedium: return "medium";
        default: return "large";
    }
}

SizeClass size_class_from_name(const std::string& name) {
    if (name == "small") return SizeClass::kSmall;
    if (name == "medium") return SizeClass::kMedium;
    if (name == "large") return SizeClass::kLarge;
    throw std::invalid_argument("unknown size class '" + name + "'");
}

std::string make_caption(int category_id, int color_id, SizeClass size_class) {
    if (category_id < 0 || category_id >= int(kCategoryNames.size()))
        throw std::invalid_argument("make_caption: no template for category id " +
                                    std::to_string(category_id));
    if (color_id < 0 || color_id >= int(kColorNames.size()))
        throw std::invalid_argument("make_caption: no template for color id " +
                                    std::to_string(color_id));
    return "the " + std::string(size_class_name(size_class)) + " " +
           kColorNames[size_t(color_id)] + " " + kCategoryNames[size_t(category_id)];
}

SceneStats compute_stats(const std::vector<SceneObject>& objects, double small_area_thr) {
    SceneStats st;
    const size_t k = objects.size();
    if (k == 0) return st;
    double occ_sum = 0.0;
    int small = 0;
    for (size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (size_t j = 0; j < k; ++j)
            if (j != i) worst = std::max(worst, iou(objects[i].box, objects[j].box));
        occ_sum += worst;
        if (objects[i].box.area() < small_area_thr) ++small;
    }
    st.occlusion = occ_sum / double(k);
    st.small_fraction = double(small) / double(k);
    return st;
}

double Scene::occlusion_fraction(int obj_index) const {
    const Box& b = objects[size_t(obj_index)].box;
    const int px1 = std::clamp(int(std::floor(b.x1 * width)), 0, width - 1);
    const int px2 = std::clamp(int(std::ceil(b.x2 * width)), px1 + 1, width);
    const int py1 = std::clamp(int(std::floor(b.y1 * height)), 0, height - 1);
    const int py2 = std::clamp(int(std::ceil(b.y2 * height)), py1 + 1, height);
    int total = 0, covered = 0;
    for (int y = py1; y < py2; ++y)
        for (int x = px1; x < px2; ++x) {
            ++total;
            const double fx1 = double(x) / width, fx2 = double(x + 1) / width;
            const double fy1 = double(y) / height, fy2 = double(y + 1) / height;
            for (size_t j = size_t(obj_index) + 1; j < objects.size(); ++j) {
                const Box& o = objects[j].box;
                if (fx1 < o.x2 && fx2 > o.x1 && fy1 < o.y2 && fy2 > o.y1) {
                    ++covered;
                    break;
                }
            }
        }
    return total == 0 ? 0.0 : double(covered) / double(total);
}

void GeneratorConfig::validate() const {
    if (occlusion_target < 0.0 || occlusion_target > 0.7)
        throw std::invalid_argument("occlusion_target must be in [0, 0.7]");
    if (small_fraction < 0.0 || small_fraction > 1.0)
        throw std::invalid_argument("small_fraction must be in [0, 1]");
    if (n_min < 1 || n_max < n_min) throw std::invalid_argument("bad object count range");
    if (n_categories < 1 || n_categories > int(kCategoryNames.size()))
        throw std::invalid_argument("n_categories must be in [1, " +
                                    std::to_string(kCategoryNames.size()) + "]");
    for (int c : colors)
        if (c < 0 || c >= int(kColorNames.size()))
            throw std::invalid_argument("color id " + std::to_string(c) + " out of palette");
    if (colors.empty()) throw std::invalid_argument("colors must be nonempty");
    if (small_area_thr <= 0 || large_area_thr <= small_area_thr)
        throw std::invalid_argument("need 0 < small_area_thr < large_area_thr");
}

GeneratorConfig GeneratorConfig::zero_shot_variant() const {
    GeneratorConfig z = *this;
    z.occlusion_target = zs_occlusion_target;
    z.small_fraction = zs_small_fraction;
    z.colors = zs_colors;
    z.photometric = true;
    return z;
}

namespace {

struct GlyphSpec {
    double aspect;  // typical width/height
};

// person, people, vehicle, bicycle, motorcycle
const GlyphSpec kGlyphs[5] = {{0.45}, {1.0}, {1.8}, {1.25}, {0.8}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Samples dims for a size class; bands leave a margin to the thresholds so
// the class invariants hold exactly.
void sample_dims(SizeClass sc, int category, const GeneratorConfig& cfg, Rng& rng, double& w,
                 double& h) {
    double area;
    switch (sc) {
        case SizeClass::kSmall:
            area = rng.uniform(cfg.small_area_thr * 0.35, cfg.small_area_thr * 0.92);
            break;
        case SizeClass::kMedium:
            area = rng.uniform(cfg.small_area_thr * 1.25, cfg.large_area_thr * 0.9);
            break;
        default:
            area = rng.uniform(cfg.large_area_thr * 1.1, cfg.large_area_thr * 3.2);
            break;
    }
    const double aspect = kGlyphs[category].aspect * rng.uniform(0.85, 1.18);
    w = std::min(0.6, std::sqrt(area * aspect));
    h = std::min(0.6, area / w);
}

void place_box(SceneObject& obj, double cx, double cy, double w, double h) {
    cx = std::clamp(cx, w / 2, 1.0 - w / 2);
    cy = std::clamp(cy, h / 2, 1.0 - h / 2);
    obj.box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

void move_towards(SceneObject& obj, const SceneObject& target, double step) {
    const double w = obj.box.width(), h = obj.box.height();
    const double cx = obj.box.cx() + (target.box.cx() - obj.box.cx()) * step;
    const double cy = obj.box.cy() + (target.box.cy() - obj.box.cy()) * step;
    place_box(obj, cx, cy, w, h);
}

void move_away(SceneObject& obj, const SceneObject& other, double step, Rng& rng) {
    double dx = obj.box.cx() - other.box.cx();
    double dy = obj.box.cy() - other.box.cy();
    const double len = std::hypot(dx, dy);
    if (len < 1e-9) {
        dx = rng.uniform(-1, 1);
        dy = rng.uniform(-1, 1);
    } else {
        dx /= len;
        dy /= len;
    }
    const double w = obj.box.width(), h = obj.box.height();
    place_box(obj, obj.box.cx() + dx * step, obj.box.cy() + dy * step, w, h);
}

// ---- glyph rasterization -------------------------------------------------

struct RasterView {
    std::vector<float>& data;
    int h, w;
    void set(int x, int y, const std::array<double, 3>& rgb) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        for (int c = 0; c < 3; ++c)
            data[size_t(c) * size_t(h) * size_t(w) + size_t(y) * size_t(w) + size_t(x)] =
                float(clamp01(rgb[size_t(c)]));
    }
};

std::array<double, 3> shade(const std::array<double, 3>& rgb, double k) {
    return {clamp01(rgb[0] * k), clamp01(rgb[1] * k), clamp01(rgb[2] * k)};
}

// Glyphs carry internal structure that survives box-normalized pooling
// (two bars, window block, round/diamond corners) plus a 1-pixel border, so
// category and size class remain recoverable from region features.
void draw_glyph(RasterView& rv, const SceneObject& obj) {
    const auto fill = kColorPalette[size_t(obj.color_id)];
    const auto border = shade(fill, 0.45);
    const auto accent = shade(fill, 1.6);
    const int x1 = int(std::lround(obj.box.x1 * rv.w));
    const int y1 = int(std::lround(obj.box.y1 * rv.h));
    const int x2 = std::max(x1 + 1, int(std::lround(obj.box.x2 * rv.w)));
    const int y2 = std::max(y1 + 1, int(std::lround(obj.box.y2 * rv.h)));
    const int bw = x2 - x1, bh = y2 - y1;

    auto border_or_fill = [&](int x, int y, bool inside) {
        if (!inside) return;
        const bool edge = x == x1 || x == x2 - 1 || y == y1 || y == y2 - 1;
        rv.set(x, y, edge ? border : fill);
    };

    switch (obj.category_id) {
        case 0: {  // person: solid bar
            for (int y = y1; y < y2; ++y)
                for (int x = x1; x < x2; ++x) border_or_fill(x, y, true);
            break;
        }
        case 1: {  // people: two bars with a gap
            const int gap0 = x1 + std::max(1, int(bw * 0.4));
            const int gap1 = x2 - std::max(1, int(bw * 0.4));
            for (int y = y1; y < y2; ++y)
                for (int x = x1; x < x2; ++x) {
                    const bool in_gap = x >= gap0 && x < gap1;
                    if (!in_gap) border_or_fill(x, y, true);
                }
            break;
        }
        case 2: {  // vehicle: slab with a lighter window block
            const int wx1 = x1 + int(bw * 0.25), wx2 = x1 + std::max(int(bw * 0.25) + 1, int(bw * 0.7));
            const int wy1 = y1 + int(bh * 0.2), wy2 = y1 + std::max(int(bh * 0.2) + 1, int(bh * 0.55));
            for (int y = y1; y < y2; ++y)
                for (int x = x1; x < x2; ++x) {
                    const bool edge = x == x1 || x == x2 - 1 || y == y1 || y == y2 - 1;
                    if (edge)
                        rv.set(x, y, border);
                    else if (x >= wx1 && x < wx2 && y >= wy1 && y < wy2)
                        rv.set(x, y, accent);
                    else
                        rv.set(x, y, fill);
                }
            break;
        }
        case 3: {  // bicycle: ellipse
            const double cx = (x1 + x2 - 1) * 0.5, cy = (y1 + y2 - 1) * 0.5;
            const double rx = std::max(0.5, bw * 0.5), ry = std::max(0.5, bh * 0.5);
            for (int y = y1; y < y2; ++y)
                for (int x = x1; x < x2; ++x) {
                    const double nx = (x - cx) / rx, ny = (y - cy) / ry;
                    const double r2 = nx * nx + ny * ny;
                    if (r2 <= 1.0) {
                        const double ring = 1.0 - std::min(1.0, 1.2 / std::max(rx, ry));
                        rv.set(x, y, r2 >= ring ? border : fill);
                    }
                }
            break;
        }
        default: {  // motorcycle: diamond
            const double cx = (x1 + x2 - 1) * 0.5, cy = (y1 + y2 - 1) * 0.5;
            const double rx = std::max(0.5, bw * 0.5), ry = std::max(0.5, bh * 0.5);
            for (int y = y1; y < y2; ++y)
                for (int x = x1; x < x2; ++x) {
                    const double d = std::abs(x - cx) / rx + std::abs(y - cy) / ry;
                    if (d <= 1.0) {
                        const double ring = 1.0 - std::min(1.0, 1.4 / std::max(rx, ry));
                        rv.set(x, y, d >= ring ? border : fill);
                    }
                }
            break;
        }
    }
}

}  // namespace

Scene generate_scene(const GeneratorConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, fnv1a("scene")));
    Scene scene;
    scene.channels = cfg.channels;
    scene.height = cfg.height;
    scene.width = cfg.width;
    scene.seed = seed;

    const int k = rng.uniform_int(cfg.n_min, cfg.n_max);

    // size classes: exact small count from the fraction, remainder split
    // between medium and large
    const int n_small = int(std::lround(cfg.small_fraction * k));
    std::vector<SizeClass> classes;
    for (int i = 0; i < n_small; ++i) classes.push_back(SizeClass::kSmall);
    for (int i = n_small; i < k; ++i)
        classes.push_back(rng.bernoulli(0.5) ? SizeClass::kMedium : SizeClass::kLarge);
    rng.shuffle(classes);

    scene.objects.resize(size_t(k));
    double area_sum = 0.0;
    for (int i = 0; i < k; ++i) {
        auto& obj = scene.objects[size_t(i)];
        obj.category_id = rng.uniform_int(0, cfg.n_categories - 1);
        obj.color_id = cfg.colors[size_t(rng.next_below(cfg.colors.size()))];
        obj.size_class = classes[size_t(i)];
        obj.draw_order = i;
        obj.caption = make_caption(obj.category_id, obj.color_id, obj.size_class);
        double w, h;
        sample_dims(obj.size_class, obj.category_id, cfg, rng, w, h);
        place_box(obj, rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h);
        area_sum += obj.box.area();
    }

    // quick packing bound: non-overlapping layouts cannot exist when the
    // total glyph area approaches the canvas
    if (cfg.occlusion_target == 0.0 && area_sum > 0.55)
        throw InfeasibleConfigError("infeasible generator config: " + std::to_string(k) +
                                    " objects with total area " + std::to_string(area_sum) +
                                    " cannot be placed without overlap");

    // pre-pair objects and aim each pair at the occlusion target, then refine
    if (cfg.occlusion_target > 0.0 && k >= 2) {
        std::vector<int> order(size_t(k), 0);
        for (int i = 0; i < k; ++i) order[size_t(i)] = i;
        rng.shuffle(order);
        for (int p = 0; p + 1 < k; p += 2) {
            auto& a = scene.objects[size_t(order[size_t(p)])];
            auto& b = scene.objects[size_t(order[size_t(p + 1)])];
            // shift b so that IoU(a, b) lands near the target for same-size
            // pairs; the refinement loop corrects the rest
            const double t = std::min(0.95, cfg.occlusion_target * rng.uniform(0.8, 1.2));
            const double w = b.box.width(), h = b.box.height();
            const double dx = a.box.width() * (1 - t) / (1 + t);
            place_box(b, a.box.cx() + dx, a.box.cy() + rng.uniform(-0.1, 0.1) * h, w, h);
        }
    }

    const double lo = cfg.occlusion_target * 0.8;
    const double hi = cfg.occlusion_target * 1.2;
    double best_dist = 1e18;
    std::vector<SceneObject> best = scene.objects;
    bool ok = false;
    for (int iter = 0; iter < cfg.retry_cap; ++iter) {
        const SceneStats st = compute_stats(scene.objects, cfg.small_area_thr);
        const double dist = std::abs(st.occlusion - cfg.occlusion_target);
        if (dist < best_dist) {
            best_dist = dist;
            best = scene.objects;
        }
        if (cfg.occlusion_target == 0.0 ? st.occlusion == 0.0
                                        : (st.occlusion >= lo && st.occlusion <= hi)) {
            ok = true;
            break;
        }
        if (k < 2) break;
        if (cfg.occlusion_target == 0.0) {
            // strict no-overlap contract: re-place one object of the most
            // overlapped pair
            int wi = -1, wj = -1;
            double worst = 0.0;
            for (int a = 0; a < k; ++a)
                for (int b = a + 1; b < k; ++b) {
                    const double v = iou(scene.objects[size_t(a)].box, scene.objects[size_t(b)].box);
                    if (v > worst) {
                        worst = v;
                        wi = a;
                        wj = b;
                    }
                }
            if (wi < 0) continue;
            auto& obj = scene.objects[size_t(rng.bernoulli(0.5) ? wi : wj)];
            const double w = obj.box.width(), h = obj.box.height();
            place_box(obj, rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h);
            continue;
        }
        const int i = rng.uniform_int(0, k - 1);
        int j = rng.uniform_int(0, k - 2);
        if (j >= i) ++j;
        if (st.occlusion < lo)
            move_towards(scene.objects[size_t(i)], scene.objects[size_t(j)], rng.uniform(0.3, 0.8));
        else
            move_away(scene.objects[size_t(i)], scene.objects[size_t(j)], rng.uniform(0.05, 0.2),
                      rng);
    }
    if (!ok) {
        if (cfg.occlusion_target == 0.0) {
            // deterministic shelf packing as the last resort
            std::vector<int> by_height(size_t(k), 0);
            for (int i = 0; i < k; ++i) by_height[size_t(i)] = i;
            std::sort(by_height.begin(), by_height.end(), [&](int a, int b) {
                return scene.objects[size_t(a)].box.height() >
                       scene.objects[size_t(b)].box.height();
            });
            const double margin = 0.01;
            double x = margin, y = margin, row_h = 0.0;
            bool packed = true;
            for (int idx : by_height) {
                auto& obj = scene.objects[size_t(idx)];
                const double w = obj.box.width(), h = obj.box.height();
                if (x + w + margin > 1.0) {
                    x = margin;
                    y += row_h + margin;
                    row_h = 0.0;
                }
                if (y + h + margin > 1.0) {
                    packed = false;
                    break;
                }
                obj.box = {x, y, x + w, y + h};
                x += w + margin;
                row_h = std::max(row_h, h);
            }
            if (!packed)
                throw InfeasibleConfigError(
                    "could not realize a zero-occlusion layout within the retry cap");
        } else {
            scene.objects = best;  // best-effort, flagged
            scene.stats_within_tolerance = false;
        }
    }

    scene.stats = compute_stats(scene.objects, cfg.small_area_thr);

    // raster: background, then glyphs back-to-front
    scene.raster.assign(size_t(cfg.channels) * size_t(cfg.height) * size_t(cfg.width),
                        float(kBackground));
    RasterView rv{scene.raster, cfg.height, cfg.width};
    for (const auto& obj : scene.objects) draw_glyph(rv, obj);

    if (cfg.photometric) {
        const double contrast = rng.uniform(0.82, 1.18);
        const double brightness = rng.uniform(-0.07, 0.07);
        for (auto& v : scene.raster)
            v = float(clamp01((double(v) - 0.5) * contrast + 0.5 + brightness));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// wire format
// ---------------------------------------------------------------------------

std::string scene_to_json_line(const Scene& scene) {
    json objs = json::array();
    for (const auto& o : scene.objects) {
        objs.push_back({{"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}},
                        {"cat", o.category_id},
                        {"color", o.color_id},
                        {"size", size_class_name(o.size_class)},
                        {"caption", o.caption}});
    }
    json j{{"seed", scene.seed},
           {"raster", base64_encode(scene.raster.data(), scene.raster.size() * sizeof(float))},
           {"objects", objs}};
    return j.dump();
}

Scene scene_from_json_line(const std::string& line, const GeneratorConfig& cfg) {
    const json j = json::parse(line);
    Scene scene;
    scene.channels = cfg.channels;
    scene.height = cfg.height;
    scene.width = cfg.width;
    scene.seed = j.at("seed").get<uint64_t>();
    const auto bytes = base64_decode(j.at("raster").get<std::string>());
    if (bytes.size() != size_t(cfg.channels) * size_t(cfg.height) * size_t(cfg.width) * 4)
        throw std::runtime_error("raster payload size mismatch");
    scene.raster.resize(bytes.size() / 4);
    std::memcpy(scene.raster.data(), bytes.data(), bytes.size());
    int order = 0;
    for (const auto& jo : j.at("objects")) {
        SceneObject o;
        const auto& b = jo.at("box");
        o.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                 b.at(3).get<double>()};
        o.category_id = jo.at("cat").get<int>();
        o.color_id = jo.at("color").get<int>();
        o.size_class = size_class_from_name(jo.at("size").get<std::string>());
        o.caption = jo.at("caption").get<std::string>();
        o.draw_order = order++;
        scene.objects.push_back(std::move(o));
    }
    scene.stats = compute_stats(scene.objects, cfg.small_area_thr);
    return scene;
}

namespace {
void write_split(const GeneratorConfig& cfg, const std::string& path, uint64_t split_seed,
                 int count) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (int i = 0; i < count; ++i) {
        const uint64_t scene_seed = mix_seed(split_seed, uint64_t(i));
        out << scene_to_json_line(generate_scene(cfg, scene_seed)) << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}
}  // namespace

void generate_dataset(const GeneratorConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    write_split(cfg, (dir / "train.jsonl").string(), mix_seed(cfg.seed, fnv1a("train")),
                cfg.train_size);
    write_split(cfg, (dir / "val.jsonl").string(), mix_seed(cfg.seed, fnv1a("val")),
                cfg.val_size);
    write_split(cfg, (dir / "test.jsonl").string(), mix_seed(cfg.seed, fnv1a("test")),
                cfg.test_size);
    const GeneratorConfig zs = cfg.zero_shot_variant();
    write_split(zs, (dir / "zeroshot.jsonl").string(), mix_seed(cfg.seed, fnv1a("zeroshot")),
                cfg.zeroshot_size);
}

std::vector<Scene> load_scenes(const std::string& path, const GeneratorConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<Scene> scenes;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        scenes.push_back(scene_from_json_line(line, cfg));
    }
    return scenes;
}

}  // namespace cg
