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

#include <filesystem>
#include <fstream>
#include <set>

#include "cg/rng.hpp"
#include "cg/scene.hpp"

using namespace cg;

namespace {
GeneratorConfig tiny_cfg() {
    GeneratorConfig cfg;
    cfg.n_min = 3;
    cfg.n_max = 6;
    cfg.train_size = 4;
    cfg.val_size = 2;
    cfg.test_size = 2;
    cfg.zeroshot_size = 2;
    return cfg;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(all);
}
}  // namespace

TEST_CASE("caption template fill") {
    CHECK(make_caption(2, 0, SizeClass::kSmall) == "the small red vehicle");
    CHECK(make_caption(0, 2, SizeClass::kLarge) == "the large blue person");
    // identical attributes give identical captions
    CHECK(make_caption(1, 1, SizeClass::kMedium) == make_caption(1, 1, SizeClass::kMedium));
    CHECK_THROWS_AS(make_caption(99, 0, SizeClass::kSmall), std::invalid_argument);
    CHECK_THROWS_AS(make_caption(0, 99, SizeClass::kSmall), std::invalid_argument);
}

TEST_CASE("caption vocabulary covers the full attribute grid distinctly") {
    std::set<std::string> captions;
    for (size_t cat = 0; cat < kCategoryNames.size(); ++cat)
        for (size_t col = 0; col < kColorNames.size(); ++col)
            for (SizeClass s : {SizeClass::kSmall, SizeClass::kMedium, SizeClass::kLarge})
                captions.insert(make_caption(int(cat), int(col), s));
    CHECK(captions.size() == kCategoryNames.size() * kColorNames.size() * 3);
}

TEST_CASE("zero occlusion target means zero pairwise IoU") {
    GeneratorConfig cfg = tiny_cfg();
    cfg.occlusion_target = 0.0;
    for (uint64_t s = 0; s < 20; ++s) {
        Scene scene = generate_scene(cfg, s);
        for (size_t i = 0; i < scene.objects.size(); ++i)
            for (size_t j = i + 1; j < scene.objects.size(); ++j)
                CHECK(iou(scene.objects[i].box, scene.objects[j].box) == 0.0);
    }
}

TEST_CASE("same config and seed reproduce a bitwise identical scene") {
    GeneratorConfig cfg = tiny_cfg();
    Scene a = generate_scene(cfg, 123);
    Scene b = generate_scene(cfg, 123);
    CHECK(a.raster == b.raster);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t i = 0; i < a.objects.size(); ++i) {
        CHECK(a.objects[i].box.x1 == b.objects[i].box.x1);
        CHECK(a.objects[i].caption == b.objects[i].caption);
    }
    Scene c = generate_scene(cfg, 124);
    CHECK(a.raster != c.raster);
}

TEST_CASE("scene invariants: boxes inside the unit square, size classes honest") {
    GeneratorConfig cfg = tiny_cfg();
    for (uint64_t s = 0; s < 50; ++s) {
        Scene scene = generate_scene(cfg, s);
        for (const auto& o : scene.objects) {
            CHECK(o.box.valid());
            if (o.size_class == SizeClass::kSmall) CHECK(o.box.area() < cfg.small_area_thr);
            if (o.size_class == SizeClass::kMedium) {
                CHECK(o.box.area() >= cfg.small_area_thr);
                CHECK(o.box.area() < cfg.large_area_thr);
            }
            if (o.size_class == SizeClass::kLarge) CHECK(o.box.area() >= cfg.large_area_thr);
        }
        for (float v : scene.raster) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        // stored stats match a recompute
        const SceneStats st = compute_stats(scene.objects, cfg.small_area_thr);
        CHECK(scene.stats.occlusion == st.occlusion);
        CHECK(scene.stats.small_fraction == st.small_fraction);
    }
}

TEST_CASE("raster occlusion follows draw order") {
    // place two overlapping objects manually via a high occlusion config and
    // check overlap pixels carry the later object's color family
    GeneratorConfig cfg = tiny_cfg();
    cfg.n_min = cfg.n_max = 2;
    cfg.occlusion_target = 0.5;
    cfg.small_fraction = 0.0;
    int checked = 0;
    for (uint64_t s = 0; s < 30 && checked < 3; ++s) {
        Scene scene;
        try {
            scene = generate_scene(cfg, s);
        } catch (const InfeasibleConfigError&) {
            continue;
        }
        const auto& a = scene.objects[0];
        const auto& b = scene.objects[1];
        if (iou(a.box, b.box) < 0.2) continue;
        if (a.color_id == b.color_id) continue;
        if (b.category_id != 0) continue;  // person glyph fills its box fully
        // center of the intersection region
        const double ix = (std::max(a.box.x1, b.box.x1) + std::min(a.box.x2, b.box.x2)) / 2;
        const double iy = (std::max(a.box.y1, b.box.y1) + std::min(a.box.y2, b.box.y2)) / 2;
        const int px = int(ix * scene.width), py = int(iy * scene.height);
        const auto want = kColorPalette[size_t(b.color_id)];
        // either fill or border shade of the later object
        const double r = scene.pixel(0, py, px);
        const bool matches_later =
            std::abs(r - want[0]) < 0.02 || std::abs(r - want[0] * 0.45) < 0.02 ||
            std::abs(r - std::min(1.0, want[0] * 1.6)) < 0.02;
        CHECK(matches_later);
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("corpus statistics converge to configured targets") {
    GeneratorConfig cfg;
    cfg.n_min = 4;
    cfg.n_max = 8;
    cfg.occlusion_target = 0.3;
    cfg.small_fraction = 0.5;
    double occ = 0.0, small = 0.0;
    const int n = 1000;
    int flagged = 0;
    for (int i = 0; i < n; ++i) {
        Scene s = generate_scene(cfg, mix_seed(7, uint64_t(i)));
        occ += s.stats.occlusion;
        small += s.stats.small_fraction;
        if (!s.stats_within_tolerance) ++flagged;
    }
    occ /= n;
    small /= n;
    CHECK(std::abs(small - 0.5) < 0.05);
    CHECK(std::abs(occ - 0.3) < 0.05);
    CHECK(flagged < n / 10);
}

TEST_CASE("infeasible config raises an explicit error") {
    GeneratorConfig cfg;
    cfg.n_min = cfg.n_max = 50;
    cfg.occlusion_target = 0.0;
    cfg.small_fraction = 0.0;
    CHECK_THROWS_AS(generate_scene(cfg, 1), InfeasibleConfigError);
}

TEST_CASE("config validation rejects bad fields") {
    GeneratorConfig cfg;
    cfg.occlusion_target = 0.9;
    CHECK_THROWS(cfg.validate());
    cfg = GeneratorConfig{};
    cfg.small_fraction = -0.1;
    CHECK_THROWS(cfg.validate());
    cfg = GeneratorConfig{};
    cfg.colors = {17};
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("scene json round trip") {
    GeneratorConfig cfg = tiny_cfg();
    Scene a = generate_scene(cfg, 5);
    const std::string line = scene_to_json_line(a);
    Scene b = scene_from_json_line(line, cfg);
    CHECK(a.raster == b.raster);
    CHECK(a.seed == b.seed);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t i = 0; i < a.objects.size(); ++i) {
        CHECK(a.objects[i].box.x1 == b.objects[i].box.x1);
        CHECK(a.objects[i].box.y2 == b.objects[i].box.y2);
        CHECK(a.objects[i].caption == b.objects[i].caption);
        CHECK(a.objects[i].category_id == b.objects[i].category_id);
    }
    // serialization is stable
    CHECK(scene_to_json_line(b) == line);
}

TEST_CASE("generate_dataset writes deterministic splits with correct sizes") {
    GeneratorConfig cfg = tiny_cfg();
    cfg.train_size = 6;
    cfg.val_size = 3;
    cfg.test_size = 2;
    cfg.zeroshot_size = 2;
    const std::string dir1 = (std::filesystem::temp_directory_path() / "cg_scene_t1").string();
    const std::string dir2 = (std::filesystem::temp_directory_path() / "cg_scene_t2").string();
    generate_dataset(cfg, dir1);
    generate_dataset(cfg, dir2);
    for (const char* split : {"train", "val", "test", "zeroshot"}) {
        const auto p1 = dir1 + "/" + split + ".jsonl";
        const auto p2 = dir2 + "/" + split + ".jsonl";
        CHECK(file_hash(p1) == file_hash(p2));
    }
    CHECK(load_scenes(dir1 + "/train.jsonl", cfg).size() == 6);
    CHECK(load_scenes(dir1 + "/val.jsonl", cfg).size() == 3);
    CHECK(load_scenes(dir1 + "/test.jsonl", cfg).size() == 2);
    CHECK(load_scenes(dir1 + "/zeroshot.jsonl", cfg).size() == 2);
    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("zero-shot split uses a disjoint color subset but the same categories") {
    GeneratorConfig cfg = tiny_cfg();
    const GeneratorConfig zs = cfg.zero_shot_variant();
    std::set<int> train_colors(cfg.colors.begin(), cfg.colors.end());
    std::set<int> zs_colors(zs.colors.begin(), zs.colors.end());
    std::set<int> inter;
    for (int c : zs_colors)
        if (train_colors.count(c)) inter.insert(c);
    CHECK(inter.empty());
    CHECK(zs.n_categories == cfg.n_categories);
    // generated zero-shot scenes only use the shifted palette
    Scene s = generate_scene(zs, 3);
    for (const auto& o : s.objects) CHECK(zs_colors.count(o.color_id) == 1);
}

TEST_CASE("occlusion fraction reflects later-drawn coverage") {
    GeneratorConfig cfg = tiny_cfg();
    cfg.n_min = cfg.n_max = 2;
    cfg.occlusion_target = 0.4;
    cfg.small_fraction = 0.0;
    bool saw_occluded = false;
    for (uint64_t s = 0; s < 20; ++s) {
        Scene scene = generate_scene(cfg, s);
        // the later object is never occluded by construction
        CHECK(scene.occlusion_fraction(int(scene.objects.size()) - 1) == 0.0);
        if (scene.occlusion_fraction(0) > 0.1) saw_occluded = true;
    }
    CHECK(saw_occluded);
}
