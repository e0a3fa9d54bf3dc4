#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>

#include "doctest.h"
#include "numkit/rng.hpp"
#include "scenegen/scenegen.hpp"

using namespace scenegen;

namespace {

// Independent occupancy oracle: re-test every pixel against every object in
// descending z until one claims it. Never touches render()'s owner pass.
int oracle_owner(const SceneSpec& scene, int x, int y) {
  const ObjectSpec* best = nullptr;
  for (const ObjectSpec& o : scene.objects)
    if (shape_contains(o, x, y) && (!best || o.z > best->z)) best = &o;
  return best ? best->id : -1;
}

GenConfig default_config() { return GenConfig{}; }

EditOp make_delete(int id) {
  EditOp e;
  e.kind = EditKind::DELETE;
  e.target_id = id;
  return e;
}

}  // namespace

TEST_CASE("gen_scene: deterministic, well-formed, ids sequential") {
  GenConfig cfg = default_config();
  SceneSpec a = gen_scene(7, cfg);
  SceneSpec b = gen_scene(7, cfg);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.objects.size() >= static_cast<std::size_t>(cfg.min_objects));
  CHECK(a.objects.size() <= static_cast<std::size_t>(cfg.max_objects));
  std::set<int> ids;
  for (const auto& o : a.objects) {
    ids.insert(o.id);
    CHECK(o.cx >= 0);
    CHECK(o.cx < a.width);
    CHECK(o.cy >= 0);
    CHECK(o.cy < a.height);
    CHECK(o.size >= cfg.min_size);
    CHECK(o.size <= cfg.max_size);
  }
  CHECK(ids.size() == a.objects.size());

  SceneSpec c = gen_scene(8, cfg);
  CHECK(to_json(a) != to_json(c));
}

TEST_CASE("gen_scene: every object visible and ADD-eligible background stays positive") {
  GenConfig cfg = default_config();
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SceneSpec s = gen_scene(seed, cfg);
    auto [raster, masks] = render(s);
    (void)raster;
    std::size_t object_pixels = 0;
    for (const auto& m : masks) {
      CHECK(m.pixel_count() > 0);
      object_pixels += m.pixel_count();
    }
    CHECK(object_pixels < static_cast<std::size_t>(s.width) * s.height);
  }
}

TEST_CASE("render: empty scene is pure background with zero masks") {
  SceneSpec s;
  s.width = s.height = 32;
  s.background = 1;
  auto [raster, masks] = render(s);
  CHECK(masks.empty());
  const auto bg = background_rgb(1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(raster.at(x, y)[0] == bg[0]);
      CHECK(raster.at(x, y)[1] == bg[1]);
      CHECK(raster.at(x, y)[2] == bg[2]);
    }
}

TEST_CASE("render: centered disk mask pixel count tracks pi r^2 within 5%") {
  for (int size : {6, 8, 10, 12, 14, 16}) {
    SceneSpec s;
    s.width = s.height = 64;
    s.objects.push_back({0, Shape::circle, 2, 32, 32, size, 0});
    auto [raster, masks] = render(s);
    (void)raster;
    const double r = size / 2.0;
    const double area = M_PI * r * r;
    const double count = masks[0].pixel_count();
    CHECK(std::fabs(count - area) / area < 0.05);
  }
}

TEST_CASE("render: masks partition object pixels under occlusion") {
  // Two overlapping squares: the later z wins every shared pixel.
  SceneSpec s;
  s.width = s.height = 32;
  s.objects.push_back({0, Shape::square, 0, 12, 16, 10, 0});
  s.objects.push_back({1, Shape::square, 1, 16, 16, 10, 1});
  auto [raster, masks] = render(s);
  (void)raster;
  REQUIRE(masks.size() == 2);
  for (std::size_t i = 0; i < masks[0].grid.size(); ++i)
    CHECK((masks[0].grid[i] & masks[1].grid[i]) == 0);
  // overlap exists and belongs to object 1
  int m1 = masks[1].pixel_count();
  CHECK(m1 == 11 * 11);  // untouched top square: size 10 -> 11px-wide footprint
  CHECK(masks[0].pixel_count() < 11 * 11);
  CHECK(masks[0].pixel_count() > 0);
}

TEST_CASE("render: ownership agrees with a per-pixel z-order oracle") {
  GenConfig cfg = default_config();
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    SceneSpec s = gen_scene(seed, cfg);
    auto [raster, masks] = render(s);
    (void)raster;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const int owner = oracle_owner(s, x, y);
        for (const auto& m : masks) {
          const bool in_mask = m.grid[static_cast<std::size_t>(y) * s.width + x] != 0;
          CHECK(in_mask == (owner == m.object_id));
        }
      }
  }
}

TEST_CASE("apply_edit: DELETE removes exactly the target") {
  GenConfig cfg = default_config();
  cfg.min_objects = cfg.max_objects = 3;
  SceneSpec s = gen_scene(21, cfg);
  SceneSpec after = apply_edit(s, make_delete(1));
  CHECK(after.objects.size() == 2);
  CHECK(after.find(1) == nullptr);
  CHECK(after.find(0) != nullptr);
  CHECK(after.find(2) != nullptr);
  nlohmann::json ja = to_json(after), js = to_json(s);
  CHECK(ja.at("objects")[0] == js.at("objects")[0]);
  CHECK(ja.at("objects")[1] == js.at("objects")[2]);
}

TEST_CASE("apply_edit: DELETE pixel diff confined to the target's mask") {
  GenConfig cfg = default_config();
  for (std::uint64_t seed = 300; seed < 330; ++seed) {
    SceneSpec s = gen_scene(seed, cfg);
    auto [before, masks] = render(s);
    const int victim = static_cast<int>(seed % s.objects.size());
    SceneSpec s2 = apply_edit(s, make_delete(s.objects[victim].id));
    auto [after, masks2] = render(s2);
    (void)masks2;
    const ObjectMask& m = masks[victim];
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const bool differs = std::memcmp(before.at(x, y), after.at(x, y), 3) != 0;
        if (differs) CHECK(m.grid[static_cast<std::size_t>(y) * s.width + x] == 1);
      }
  }
}

TEST_CASE("apply_edit: SWAP is an involution that preserves attributes") {
  GenConfig cfg = default_config();
  cfg.min_objects = cfg.max_objects = 3;
  SceneSpec s = gen_scene(33, cfg);
  EditOp e;
  e.kind = EditKind::SWAP;
  e.pair_ids = {0, 2};
  SceneSpec once = apply_edit(s, e);
  CHECK(once.find(0)->cx == s.find(2)->cx);
  CHECK(once.find(0)->cy == s.find(2)->cy);
  CHECK(once.find(2)->cx == s.find(0)->cx);
  CHECK(once.find(0)->color == s.find(0)->color);
  CHECK(once.find(0)->shape == s.find(0)->shape);
  CHECK(once.find(0)->size == s.find(0)->size);
  CHECK(to_json(apply_edit(once, e)) == to_json(s));
  CHECK(to_json(once).at("objects")[1] == to_json(s).at("objects")[1]);  // bystander untouched
}

TEST_CASE("apply_edit: MODIFY changes only the listed attribute") {
  GenConfig cfg = default_config();
  SceneSpec s = gen_scene(44, cfg);
  EditOp e;
  e.kind = EditKind::MODIFY;
  e.target_id = 0;
  e.new_color = (s.find(0)->color + 1) % kNumColors;
  SceneSpec after = apply_edit(s, e);
  CHECK(after.find(0)->color == *e.new_color);
  CHECK(after.find(0)->shape == s.find(0)->shape);
  CHECK(after.find(0)->size == s.find(0)->size);
  CHECK(after.find(0)->cx == s.find(0)->cx);
  for (std::size_t i = 1; i < s.objects.size(); ++i)
    CHECK(to_json(after).at("objects")[i] == to_json(s).at("objects")[i]);

  // recolor diff stays inside the target's (unchanged-geometry) mask
  auto [before_px, masks] = render(s);
  auto [after_px, masks2] = render(after);
  (void)masks2;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const bool differs = std::memcmp(before_px.at(x, y), after_px.at(x, y), 3) != 0;
      if (differs)
        CHECK(masks[0].grid[static_cast<std::size_t>(y) * s.width + x] == 1);
    }
}

TEST_CASE("apply_edit: ADD accepts background-only placements and rejects overlaps") {
  SceneSpec s;
  s.width = s.height = 64;
  s.objects.push_back({0, Shape::square, 0, 16, 16, 12, 0});

  EditOp good;
  good.kind = EditKind::ADD;
  good.new_object = {1, Shape::circle, 1, 46, 46, 10, 1};
  SceneSpec after = apply_edit(s, good);
  CHECK(after.objects.size() == 2);

  EditOp bad;
  bad.kind = EditKind::ADD;
  bad.new_object = {1, Shape::circle, 1, 18, 18, 10, 1};
  CHECK_THROWS_AS(apply_edit(s, bad), std::runtime_error);

  EditOp dup;
  dup.kind = EditKind::ADD;
  dup.new_object = {0, Shape::circle, 1, 46, 46, 10, 1};
  CHECK_THROWS_AS(apply_edit(s, dup), std::runtime_error);
}

TEST_CASE("describe_edit: frozen templates") {
  SceneSpec s;
  s.width = s.height = 64;
  s.objects.push_back({0, Shape::circle, color_from_name("red"), 20, 20, 8, 0});
  s.objects.push_back({1, Shape::square, color_from_name("blue"), 44, 44, 8, 1});

  CHECK(describe_edit(make_delete(0), s) == "the red circle was removed");

  EditOp add;
  add.kind = EditKind::ADD;
  add.new_object = {2, Shape::star, color_from_name("blue"), 8, 8, 8, 2};
  CHECK(describe_edit(add, s) == "a blue star was added in the upper left");

  EditOp swap;
  swap.kind = EditKind::SWAP;
  swap.pair_ids = {0, 1};
  CHECK(describe_edit(swap, s) == "the red circle and the blue square swapped places");

  EditOp recolor;
  recolor.kind = EditKind::MODIFY;
  recolor.target_id = 0;
  recolor.new_color = color_from_name("green");
  CHECK(describe_edit(recolor, s) == "the red circle became green");

  EditOp reshape;
  reshape.kind = EditKind::MODIFY;
  reshape.target_id = 0;
  reshape.new_shape = Shape::triangle;
  CHECK(describe_edit(reshape, s) == "the red circle became a triangle");

  EditOp grow;
  grow.kind = EditKind::MODIFY;
  grow.target_id = 0;
  grow.new_size = 14;
  CHECK(describe_edit(grow, s) == "the red circle became larger");
  grow.new_size = 6;
  CHECK(describe_edit(grow, s) == "the red circle became smaller");
}

TEST_CASE("describe_edit: distinct (kind,color,shape) triples give distinct sentences") {
  SceneSpec s;
  s.width = s.height = 64;
  int id = 0;
  for (int c = 0; c < kNumColors; ++c)
    for (int sh = 0; sh < kNumShapes; ++sh)
      s.objects.push_back({id, static_cast<Shape>(sh), c, 6 + (id % 8) * 7, 6 + (id / 8) * 13, 4,
                           id}),
          ++id;
  std::set<std::string> sentences;
  int count = 0;
  for (const ObjectSpec& o : s.objects) {
    sentences.insert(describe_edit(make_delete(o.id), s));
    EditOp add;
    add.kind = EditKind::ADD;
    add.new_object = {99, o.shape, o.color, 32, 32, 8, 99};
    sentences.insert(describe_edit(add, s));
    count += 2;
  }
  CHECK(static_cast<int>(sentences.size()) == count);
}

TEST_CASE("caption: templates and parse-back object count") {
  SceneSpec empty;
  empty.width = empty.height = 64;
  CHECK(caption(empty) == "an empty scene");

  SceneSpec one = empty;
  one.objects.push_back({0, Shape::star, color_from_name("purple"), 30, 30, 10, 0});
  CHECK(caption(one) == "a scene with a purple star");

  GenConfig cfg = default_config();
  for (std::uint64_t seed = 500; seed < 560; ++seed) {
    SceneSpec s = gen_scene(seed, cfg);
    const std::string text = caption(s);
    // parse-back: count " a <color> <shape>" groups
    std::size_t mentions = 0, pos = 0;
    while ((pos = text.find(" a ", pos)) != std::string::npos) {
      ++mentions;
      pos += 3;
    }
    CHECK(mentions == s.objects.size());
  }
}

TEST_CASE("region_phrase: 3x3 quantization") {
  CHECK(region_phrase(2, 2, 64, 64) == "upper left");
  CHECK(region_phrase(32, 2, 64, 64) == "upper center");
  CHECK(region_phrase(62, 2, 64, 64) == "upper right");
  CHECK(region_phrase(2, 32, 64, 64) == "middle left");
  CHECK(region_phrase(32, 32, 64, 64) == "center");
  CHECK(region_phrase(62, 62, 64, 64) == "lower right");
}

TEST_CASE("serialization: scene and edit JSON round-trips, PPM round-trips") {
  GenConfig cfg = default_config();
  SceneSpec s = gen_scene(77, cfg);
  CHECK(to_json(scene_from_json(to_json(s))) == to_json(s));

  EditOp e;
  e.kind = EditKind::MODIFY;
  e.target_id = 0;
  e.new_shape = Shape::star;
  nlohmann::json je = to_json(e);
  EditOp back = edit_from_json(je);
  CHECK(to_json(back) == je);

  auto [raster, masks] = render(s);
  (void)masks;
  const std::string path = "scene_test.ppm";
  write_ppm(path, raster);
  Raster rt = read_ppm(path);
  CHECK(rt.width == raster.width);
  CHECK(rt.height == raster.height);
  CHECK(rt.pixels == raster.pixels);
  std::remove(path.c_str());
}

TEST_CASE("random edits: all post-conditions hold across 1000 cases") {
  GenConfig cfg = default_config();
  numkit::Rng rng(909);
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 1000; ++seed) {
    SceneSpec s = gen_scene(seed, cfg);
    const int kind = rng.uniform_int(0, 3);
    EditOp e;
    if (kind == 0) {  // MODIFY one attribute
      e.kind = EditKind::MODIFY;
      const ObjectSpec& t = s.objects[rng.uniform_int(0, (int)s.objects.size() - 1)];
      e.target_id = t.id;
      const int attr = rng.uniform_int(0, 2);
      if (attr == 0)
        e.new_color = (t.color + rng.uniform_int(1, kNumColors - 1)) % kNumColors;
      else if (attr == 1)
        e.new_shape = static_cast<Shape>((static_cast<int>(t.shape) + rng.uniform_int(1, 3)) % 4);
      else
        e.new_size = t.size == 6 ? 10 : 6;
      SceneSpec after = apply_edit(s, e);
      CHECK(after.objects.size() == s.objects.size());
      const ObjectSpec& nt = *after.find(t.id);
      if (e.new_color) CHECK(nt.color == *e.new_color);
      if (e.new_shape) CHECK(nt.shape == *e.new_shape);
      if (e.new_size) CHECK(nt.size == *e.new_size);
      if (!e.new_color) CHECK(nt.color == t.color);
      if (!e.new_shape) CHECK(nt.shape == t.shape);
      if (!e.new_size) CHECK(nt.size == t.size);
    } else if (kind == 1 && s.objects.size() >= 2) {  // SWAP
      e.kind = EditKind::SWAP;
      e.pair_ids = {s.objects[0].id, s.objects[1].id};
      SceneSpec after = apply_edit(s, e);
      std::multiset<std::string> attrs_before, attrs_after;
      for (const auto& o : s.objects)
        attrs_before.insert(std::string(color_name(o.color)) + shape_name(o.shape) +
                            std::to_string(o.size));
      for (const auto& o : after.objects)
        attrs_after.insert(std::string(color_name(o.color)) + shape_name(o.shape) +
                           std::to_string(o.size));
      CHECK(attrs_before == attrs_after);
      CHECK(after.find(e.pair_ids[0])->cx == s.find(e.pair_ids[1])->cx);
    } else if (kind == 2) {  // DELETE
      e.kind = EditKind::DELETE;
      e.target_id = s.objects[rng.uniform_int(0, (int)s.objects.size() - 1)].id;
      SceneSpec after = apply_edit(s, e);
      CHECK(after.objects.size() + 1 == s.objects.size());
      CHECK(after.find(e.target_id) == nullptr);
    } else {  // ADD on background, rejection-sampled placement
      auto [raster, masks] = render(s);
      (void)raster;
      std::vector<std::uint8_t> occupied(static_cast<std::size_t>(s.width) * s.height, 0);
      for (const auto& m : masks)
        for (std::size_t i = 0; i < m.grid.size(); ++i)
          if (m.grid[i]) occupied[i] = 1;
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        ObjectSpec nu;
        nu.id = 100;
        nu.z = 100;
        nu.shape = static_cast<Shape>(rng.uniform_int(0, 3));
        nu.color = rng.uniform_int(0, kNumColors - 1);
        nu.size = 2 * rng.uniform_int(3, 8);
        const int half = nu.size / 2 + 1;
        nu.cx = rng.uniform_int(half, s.width - 1 - half);
        nu.cy = rng.uniform_int(half, s.height - 1 - half);
        bool clear = true;
        for (int y = nu.cy - half; y <= nu.cy + half && clear; ++y)
          for (int x = nu.cx - half; x <= nu.cx + half && clear; ++x)
            if (shape_contains(nu, x, y) && occupied[static_cast<std::size_t>(y) * s.width + x])
              clear = false;
        if (!clear) continue;
        e.kind = EditKind::ADD;
        e.new_object = nu;
        SceneSpec after = apply_edit(s, e);
        CHECK(after.objects.size() == s.objects.size() + 1);
        // new object's visible pixels were all background before
        auto [raster2, masks2] = render(after);
        (void)raster2;
        const ObjectMask& nm = masks2.back();
        for (std::size_t i = 0; i < nm.grid.size(); ++i)
          if (nm.grid[i]) CHECK(occupied[i] == 0);
        placed = true;
      }
      if (!placed) continue;  // crowded scene: skip, do not count
    }
    ++checked;
  }
  CHECK(checked == 1000);
}
