#include "scenegen/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "numkit/rng.hpp"

namespace scenegen {

namespace {

constexpr const char* kShapeNames[kNumShapes] = {"circle", "square", "triangle", "star"};

constexpr const char* kColorNames[kNumColors] = {"red",    "blue",   "green", "yellow",
                                                 "orange", "purple", "pink",  "brown"};

constexpr std::array<std::uint8_t, 3> kColorRgb[kNumColors] = {
    {220, 50, 50}, {50, 80, 220}, {40, 160, 70},  {235, 220, 60},
    {240, 140, 40}, {140, 70, 200}, {240, 130, 180}, {125, 80, 45}};

constexpr std::array<std::uint8_t, 3> kBackgroundRgb[kNumBackgrounds] = {
    {205, 205, 205}, {40, 40, 40}, {110, 120, 135}};

// Winding-number point-in-polygon; vertices in order, implicit closing edge.
bool in_polygon(const std::vector<std::pair<double, double>>& poly, double px, double py) {
  int winding = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    auto [x1, y1] = poly[i];
    auto [x2, y2] = poly[(i + 1) % poly.size()];
    if (y1 <= py) {
      if (y2 > py && (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1) > 0) ++winding;
    } else if (y2 <= py && (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1) < 0) {
      --winding;
    }
  }
  return winding != 0;
}

std::vector<std::pair<double, double>> star_polygon(double cx, double cy, double outer) {
  // Five-pointed star, point up: alternate outer/inner radius every 36 deg.
  const double inner = 0.5 * outer;
  std::vector<std::pair<double, double>> poly;
  poly.reserve(10);
  for (int i = 0; i < 10; ++i) {
    const double ang = -M_PI / 2.0 + i * M_PI / 5.0;
    const double r = (i % 2 == 0) ? outer : inner;
    poly.emplace_back(cx + r * std::cos(ang), cy + r * std::sin(ang));
  }
  return poly;
}

bool in_triangle(double dx, double dy, double half) {
  // Upward isoceles triangle inscribed in the size x size box.
  const double x1 = 0.0, y1 = -half;
  const double x2 = -half, y2 = half;
  const double x3 = half, y3 = half;
  auto side = [&](double ax, double ay, double bx, double by) {
    return (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
  };
  const double d1 = side(x1, y1, x2, y2);
  const double d2 = side(x2, y2, x3, y3);
  const double d3 = side(x3, y3, x1, y1);
  const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(has_neg && has_pos);
}

void validate_scene(const SceneSpec& scene) {
  if (scene.width <= 0 || scene.height <= 0)
    throw std::runtime_error("scene: non-positive canvas " + std::to_string(scene.width) + "x" +
                             std::to_string(scene.height));
  if (scene.background < 0 || scene.background >= kNumBackgrounds)
    throw std::runtime_error("scene: unknown background category " +
                             std::to_string(scene.background));
  std::set<int> ids;
  for (const ObjectSpec& o : scene.objects) {
    if (!ids.insert(o.id).second)
      throw std::runtime_error("scene: duplicate object id " + std::to_string(o.id));
    if (o.cx < 0 || o.cx >= scene.width || o.cy < 0 || o.cy >= scene.height)
      throw std::runtime_error("scene: object " + std::to_string(o.id) + " center (" +
                               std::to_string(o.cx) + "," + std::to_string(o.cy) +
                               ") outside canvas");
    if (o.size <= 0)
      throw std::runtime_error("scene: object " + std::to_string(o.id) + " has size " +
                               std::to_string(o.size));
    if (o.color < 0 || o.color >= kNumColors)
      throw std::runtime_error("scene: object " + std::to_string(o.id) + " has color id " +
                               std::to_string(o.color));
  }
}

}  // namespace

const char* shape_name(Shape s) { return kShapeNames[static_cast<int>(s)]; }

Shape shape_from_name(const std::string& name) {
  for (int i = 0; i < kNumShapes; ++i)
    if (name == kShapeNames[i]) return static_cast<Shape>(i);
  throw std::runtime_error("scene: unknown shape '" + name + "'");
}

const char* color_name(int color) {
  if (color < 0 || color >= kNumColors)
    throw std::runtime_error("scene: unknown color id " + std::to_string(color));
  return kColorNames[color];
}

int color_from_name(const std::string& name) {
  for (int i = 0; i < kNumColors; ++i)
    if (name == kColorNames[i]) return i;
  throw std::runtime_error("scene: unknown color '" + name + "'");
}

std::array<std::uint8_t, 3> color_rgb(int color) {
  color_name(color);  // range check
  return kColorRgb[color];
}

std::array<std::uint8_t, 3> background_rgb(int background) {
  if (background < 0 || background >= kNumBackgrounds)
    throw std::runtime_error("scene: unknown background category " + std::to_string(background));
  return kBackgroundRgb[background];
}

const char* edit_kind_name(EditKind k) {
  switch (k) {
    case EditKind::MODIFY: return "modify";
    case EditKind::SWAP: return "swap";
    case EditKind::DELETE: return "delete";
    case EditKind::ADD: return "add";
  }
  throw std::runtime_error("edit: unknown kind");
}

const ObjectSpec* SceneSpec::find(int id) const {
  for (const ObjectSpec& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

int ObjectMask::pixel_count() const {
  int n = 0;
  for (std::uint8_t v : grid) n += v;
  return n;
}

bool shape_contains(const ObjectSpec& obj, int x, int y) {
  const double dx = x - static_cast<double>(obj.cx);
  const double dy = y - static_cast<double>(obj.cy);
  const double half = obj.size / 2.0;
  switch (obj.shape) {
    case Shape::circle:
      return dx * dx + dy * dy <= half * half;
    case Shape::square:
      return std::fabs(dx) <= half && std::fabs(dy) <= half;
    case Shape::triangle:
      return in_triangle(dx, dy, half);
    case Shape::star:
      return in_polygon(star_polygon(0.0, 0.0, half), dx, dy);
  }
  return false;
}

SceneSpec gen_scene(std::uint64_t seed, const GenConfig& config) {
  if (config.min_objects < 1 || config.max_objects < config.min_objects)
    throw std::runtime_error("gen_scene: bad object count range [" +
                             std::to_string(config.min_objects) + "," +
                             std::to_string(config.max_objects) + "]");
  if (config.canvas < config.max_size * 2)
    throw std::runtime_error("gen_scene: canvas " + std::to_string(config.canvas) +
                             " too small for objects up to " + std::to_string(config.max_size));

  numkit::Rng rng = numkit::Rng(seed).fork(0x5ce7e);
  const int n = rng.uniform_int(config.min_objects, config.max_objects);

  for (int attempt = 0; attempt < 100; ++attempt) {
    SceneSpec scene;
    scene.width = scene.height = config.canvas;
    scene.background = rng.uniform_int(0, kNumBackgrounds - 1);

    std::set<std::pair<int, int>> used;  // (color, shape) pairs stay unique
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      ObjectSpec obj;
      obj.id = i;
      obj.z = i;
      int tries = 0;
      do {
        obj.color = rng.uniform_int(0, kNumColors - 1);
        obj.shape = static_cast<Shape>(rng.uniform_int(0, kNumShapes - 1));
        if (++tries > 200) {
          ok = false;
          break;
        }
      } while (used.count({obj.color, static_cast<int>(obj.shape)}));
      if (!ok) break;
      used.insert({obj.color, static_cast<int>(obj.shape)});
      obj.size = 2 * rng.uniform_int(config.min_size / 2, config.max_size / 2);
      const int half = obj.size / 2 + 1;
      obj.cx = rng.uniform_int(half, config.canvas - 1 - half);
      obj.cy = rng.uniform_int(half, config.canvas - 1 - half);
      scene.objects.push_back(obj);
    }
    if (!ok) continue;

    // Reject layouts where occlusion erases an object completely.
    auto [raster, masks] = render(scene);
    (void)raster;
    bool all_visible = true;
    for (const ObjectMask& m : masks)
      if (m.pixel_count() == 0) all_visible = false;
    if (all_visible) return scene;
  }
  throw std::runtime_error("gen_scene: could not place " + std::to_string(n) +
                           " objects without full occlusion on a " +
                           std::to_string(config.canvas) + "px canvas");
}

std::pair<Raster, std::vector<ObjectMask>> render(const SceneSpec& scene) {
  validate_scene(scene);
  const int w = scene.width, h = scene.height;

  Raster raster;
  raster.width = w;
  raster.height = h;
  raster.pixels.assign(static_cast<std::size_t>(w) * h * 3, 0);
  const auto bg = background_rgb(scene.background);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t* px = raster.at(x, y);
      px[0] = bg[0];
      px[1] = bg[1];
      px[2] = bg[2];
    }

  std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);
  std::vector<const ObjectSpec*> order;
  for (const ObjectSpec& o : scene.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(),
                   [](const ObjectSpec* a, const ObjectSpec* b) { return a->z < b->z; });

  for (const ObjectSpec* o : order) {
    const int half = o->size / 2 + 1;
    const int x0 = std::max(0, o->cx - half), x1 = std::min(w - 1, o->cx + half);
    const int y0 = std::max(0, o->cy - half), y1 = std::min(h - 1, o->cy + half);
    const auto rgb = color_rgb(o->color);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (shape_contains(*o, x, y)) {
          owner[static_cast<std::size_t>(y) * w + x] = o->id;
          std::uint8_t* px = raster.at(x, y);
          px[0] = rgb[0];
          px[1] = rgb[1];
          px[2] = rgb[2];
        }
  }

  std::vector<ObjectMask> masks;
  masks.reserve(scene.objects.size());
  for (const ObjectSpec& o : scene.objects) {
    ObjectMask m;
    m.object_id = o.id;
    m.width = w;
    m.height = h;
    m.grid.assign(static_cast<std::size_t>(w) * h, 0);
    for (std::size_t i = 0; i < owner.size(); ++i)
      if (owner[i] == o.id) m.grid[i] = 1;
    masks.push_back(std::move(m));
  }
  return {std::move(raster), std::move(masks)};
}

SceneSpec apply_edit(const SceneSpec& scene, const EditOp& edit) {
  validate_scene(scene);
  SceneSpec out = scene;
  switch (edit.kind) {
    case EditKind::DELETE: {
      if (!scene.find(edit.target_id))
        throw std::runtime_error("apply_edit: DELETE target id " +
                                 std::to_string(edit.target_id) + " not in scene");
      out.objects.erase(std::remove_if(out.objects.begin(), out.objects.end(),
                                       [&](const ObjectSpec& o) { return o.id == edit.target_id; }),
                        out.objects.end());
      return out;
    }
    case EditKind::SWAP: {
      ObjectSpec *a = nullptr, *b = nullptr;
      for (ObjectSpec& o : out.objects) {
        if (o.id == edit.pair_ids[0]) a = &o;
        if (o.id == edit.pair_ids[1]) b = &o;
      }
      if (!a || !b || a == b)
        throw std::runtime_error("apply_edit: SWAP needs two distinct existing ids, got (" +
                                 std::to_string(edit.pair_ids[0]) + "," +
                                 std::to_string(edit.pair_ids[1]) + ")");
      std::swap(a->cx, b->cx);
      std::swap(a->cy, b->cy);
      return out;
    }
    case EditKind::MODIFY: {
      ObjectSpec* t = nullptr;
      for (ObjectSpec& o : out.objects)
        if (o.id == edit.target_id) t = &o;
      if (!t)
        throw std::runtime_error("apply_edit: MODIFY target id " +
                                 std::to_string(edit.target_id) + " not in scene");
      if (!edit.new_color && !edit.new_shape && !edit.new_size)
        throw std::runtime_error("apply_edit: MODIFY lists no replacement attribute");
      if (edit.new_color) t->color = *edit.new_color;
      if (edit.new_shape) t->shape = *edit.new_shape;
      if (edit.new_size) t->size = *edit.new_size;
      return out;
    }
    case EditKind::ADD: {
      if (scene.find(edit.new_object.id))
        throw std::runtime_error("apply_edit: ADD reuses existing id " +
                                 std::to_string(edit.new_object.id));
      // The new object may only cover pixels that are BACKGROUND before the
      // edit: render the current scene and test every pixel the shape takes.
      auto [raster, masks] = render(scene);
      (void)raster;
      std::vector<std::uint8_t> occupied(static_cast<std::size_t>(scene.width) * scene.height, 0);
      for (const ObjectMask& m : masks)
        for (std::size_t i = 0; i < m.grid.size(); ++i)
          if (m.grid[i]) occupied[i] = 1;
      const ObjectSpec& nu = edit.new_object;
      const int half = nu.size / 2 + 1;
      for (int y = std::max(0, nu.cy - half); y <= std::min(scene.height - 1, nu.cy + half); ++y)
        for (int x = std::max(0, nu.cx - half); x <= std::min(scene.width - 1, nu.cx + half); ++x)
          if (shape_contains(nu, x, y) &&
              occupied[static_cast<std::size_t>(y) * scene.width + x])
            throw std::runtime_error(
                "apply_edit: ADD placement overlaps a non-background pixel at (" +
                std::to_string(x) + "," + std::to_string(y) + ")");
      out.objects.push_back(nu);
      return out;
    }
  }
  throw std::runtime_error("apply_edit: unknown edit kind");
}

nlohmann::json to_json(const SceneSpec& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const ObjectSpec& o : scene.objects)
    objs.push_back({{"id", o.id},
                    {"shape", shape_name(o.shape)},
                    {"color", color_name(o.color)},
                    {"cx", o.cx},
                    {"cy", o.cy},
                    {"size", o.size},
                    {"z", o.z}});
  return {{"width", scene.width},
          {"height", scene.height},
          {"background", scene.background},
          {"objects", objs}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec scene;
  scene.width = j.at("width").get<int>();
  scene.height = j.at("height").get<int>();
  scene.background = j.at("background").get<int>();
  for (const auto& jo : j.at("objects")) {
    ObjectSpec o;
    o.id = jo.at("id").get<int>();
    o.shape = shape_from_name(jo.at("shape").get<std::string>());
    o.color = color_from_name(jo.at("color").get<std::string>());
    o.cx = jo.at("cx").get<int>();
    o.cy = jo.at("cy").get<int>();
    o.size = jo.at("size").get<int>();
    o.z = jo.at("z").get<int>();
    scene.objects.push_back(o);
  }
  validate_scene(scene);
  return scene;
}

nlohmann::json to_json(const EditOp& edit) {
  nlohmann::json j;
  j["kind"] = edit_kind_name(edit.kind);
  switch (edit.kind) {
    case EditKind::DELETE:
      j["target_id"] = edit.target_id;
      break;
    case EditKind::SWAP:
      j["pair_ids"] = edit.pair_ids;
      break;
    case EditKind::MODIFY:
      j["target_id"] = edit.target_id;
      if (edit.new_color) j["new_color"] = color_name(*edit.new_color);
      if (edit.new_shape) j["new_shape"] = shape_name(*edit.new_shape);
      if (edit.new_size) j["new_size"] = *edit.new_size;
      break;
    case EditKind::ADD: {
      const ObjectSpec& o = edit.new_object;
      j["new_object"] = {{"id", o.id},          {"shape", shape_name(o.shape)},
                         {"color", color_name(o.color)}, {"cx", o.cx},
                         {"cy", o.cy},          {"size", o.size},
                         {"z", o.z}};
      break;
    }
  }
  return j;
}

EditOp edit_from_json(const nlohmann::json& j) {
  EditOp e;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "delete") {
    e.kind = EditKind::DELETE;
    e.target_id = j.at("target_id").get<int>();
  } else if (kind == "swap") {
    e.kind = EditKind::SWAP;
    e.pair_ids = j.at("pair_ids").get<std::array<int, 2>>();
  } else if (kind == "modify") {
    e.kind = EditKind::MODIFY;
    e.target_id = j.at("target_id").get<int>();
    if (j.contains("new_color")) e.new_color = color_from_name(j.at("new_color").get<std::string>());
    if (j.contains("new_shape")) e.new_shape = shape_from_name(j.at("new_shape").get<std::string>());
    if (j.contains("new_size")) e.new_size = j.at("new_size").get<int>();
  } else if (kind == "add") {
    e.kind = EditKind::ADD;
    const auto& jo = j.at("new_object");
    e.new_object.id = jo.at("id").get<int>();
    e.new_object.shape = shape_from_name(jo.at("shape").get<std::string>());
    e.new_object.color = color_from_name(jo.at("color").get<std::string>());
    e.new_object.cx = jo.at("cx").get<int>();
    e.new_object.cy = jo.at("cy").get<int>();
    e.new_object.size = jo.at("size").get<int>();
    e.new_object.z = jo.at("z").get<int>();
  } else {
    throw std::runtime_error("edit: unknown kind '" + kind + "'");
  }
  return e;
}

void write_ppm(const std::string& path, const Raster& raster) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("ppm: cannot open '" + path + "' for writing");
  out << "P6\n" << raster.width << " " << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.pixels.data()),
            static_cast<std::streamsize>(raster.pixels.size()));
  if (!out) throw std::runtime_error("ppm: write failed for '" + path + "'");
}

Raster read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ppm: cannot open '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("ppm: '" + path + "' is not an 8-bit P6 file");
  in.get();  // single whitespace after the header
  Raster r;
  r.width = w;
  r.height = h;
  r.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (!in) throw std::runtime_error("ppm: truncated pixel data in '" + path + "'");
  return r;
}

}  // namespace scenegen
