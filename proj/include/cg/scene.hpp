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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cg/box.hpp"

namespace cg {

// Procedural crowded-scene generator: colored glyphs (one shape family per
// category) on a flat background, drawn back-to-front so overlaps genuinely
// occlude pixels. Occlusion and small-object statistics are controllable,
// captions come from a closed template vocabulary.

enum class SizeClass { kSmall = 0, kMedium = 1, kLarge = 2 };

const char* size_class_name(SizeClass s);
SizeClass size_class_from_name(const std::string& name);

extern const std::vector<std::string> kCategoryNames;  // glyph families
extern const std::vector<std::string> kColorNames;
// fill RGB per color id
extern const std::vector<std::array<double, 3>> kColorPalette;

struct SceneObject {
    Box box;
    int category_id = 0;
    int color_id = 0;
    SizeClass size_class = SizeClass::kMedium;
    std::string caption;
    int draw_order = 0;  // later = drawn on top
};

struct SceneStats {
    // mean over objects of the max IoU with any other object; 0 iff all
    // pairwise IoUs are 0
    double occlusion = 0.0;
    double small_fraction = 0.0;
};

struct Scene {
    int channels = 3, height = 64, width = 64;
    std::vector<float> raster;  // C*H*W, row-major, values in [0,1]
    std::vector<SceneObject> objects;
    uint64_t seed = 0;
    SceneStats stats;
    bool stats_within_tolerance = true;

    float pixel(int c, int y, int x) const {
        return raster[size_t(c) * size_t(height) * size_t(width) + size_t(y) * size_t(width) +
                      size_t(x)];
    }
    // fraction of this object's box covered by objects drawn later
    double occlusion_fraction(int obj_index) const;
};

struct GeneratorConfig {
    int n_min = 4, n_max = 8;
    double occlusion_target = 0.3;  // in [0, 0.7]
    double small_fraction = 0.5;
    double small_area_thr = 0.012;  // area < thr => small
    double large_area_thr = 0.05;   // area >= thr => large
    int n_categories = 5;
    std::vector<int> colors = {0, 1, 2, 3};
    int channels = 3, height = 64, width = 64;
    int retry_cap = 200;
    bool photometric = false;  // per-scene brightness/contrast perturbation
    // splits
    int train_size = 2000, val_size = 200, test_size = 300, zeroshot_size = 300;
    uint64_t seed = 42;
    // zero-shot variant knobs (shifted distribution, disjoint colors)
    double zs_occlusion_target = 0.45;
    double zs_small_fraction = 0.65;
    std::vector<int> zs_colors = {4, 5};

    void validate() const;
    // the shifted configuration used for the zero-shot split
    GeneratorConfig zero_shot_variant() const;
};

struct InfeasibleConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string make_caption(int category_id, int color_id, SizeClass size_class);

SceneStats compute_stats(const std::vector<SceneObject>& objects, double small_area_thr);

Scene generate_scene(const GeneratorConfig& cfg, uint64_t seed);

// JSON-lines wire format, one scene per line:
// {"seed":u64,"raster":"<base64 f32>","objects":[{"box":[x1,y1,x2,y2],
//  "cat":int,"color":int,"size":"small|medium|large","caption":str}]}
std::string scene_to_json_line(const Scene& scene);
Scene scene_from_json_line(const std::string& line, const GeneratorConfig& cfg);

// Writes train/val/test/zeroshot .jsonl files under out_dir.
void generate_dataset(const GeneratorConfig& cfg, const std::string& out_dir);
std::vector<Scene> load_scenes(const std::string& path, const GeneratorConfig& cfg);

}  // namespace cg
