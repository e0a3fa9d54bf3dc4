#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace scenegen {

enum class Shape { circle, square, triangle, star };

constexpr int kNumShapes = 4;
constexpr int kNumColors = 8;       // object palette
constexpr int kNumBackgrounds = 3;  // BACKGROUND category palette

const char* shape_name(Shape s);
Shape shape_from_name(const std::string& name);
const char* color_name(int color);
int color_from_name(const std::string& name);
std::array<std::uint8_t, 3> color_rgb(int color);
std::array<std::uint8_t, 3> background_rgb(int background);

struct ObjectSpec {
  int id = 0;
  Shape shape = Shape::circle;
  int color = 0;
  int cx = 0, cy = 0;  // center, pixel coords
  int size = 6;        // bounding diameter in pixels
  int z = 0;           // draw order; larger z drawn on top
};

struct SceneSpec {
  int width = 64, height = 64;
  int background = 0;  // BACKGROUND category id
  std::vector<ObjectSpec> objects;

  const ObjectSpec* find(int id) const;
};

struct ObjectMask {
  int object_id = 0;
  int width = 0, height = 0;
  std::vector<std::uint8_t> grid;  // H*W, row-major, 1 where the object is visible

  int pixel_count() const;
};

struct Raster {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // H*W*3, row-major RGB

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

enum class EditKind { MODIFY, SWAP, DELETE, ADD };

const char* edit_kind_name(EditKind k);

struct EditOp {
  EditKind kind = EditKind::DELETE;
  int target_id = -1;                     // MODIFY / DELETE
  std::array<int, 2> pair_ids = {-1, -1};  // SWAP
  ObjectSpec new_object;                  // ADD: full spec incl. placement
  // MODIFY replacement attributes; untouched fields keep their old value.
  std::optional<int> new_color;
  std::optional<Shape> new_shape;
  std::optional<int> new_size;
};

struct GenConfig {
  int canvas = 64;
  int min_objects = 2;
  int max_objects = 4;
  int min_size = 6;   // sizes are drawn even so disk pixel counts track area
  int max_size = 16;
};

/// Deterministic scene draw: same (seed, config) gives an identical scene.
/// Guarantees every object keeps at least one visible pixel and that no two
/// objects share a (color, shape) pair, so sentences name objects uniquely.
SceneSpec gen_scene(std::uint64_t seed, const GenConfig& config);

/// Rasterizes with z-order occlusion. Masks are exact: mask i holds the
/// pixels where object i is the topmost shape, so masks never intersect.
std::pair<Raster, std::vector<ObjectMask>> render(const SceneSpec& scene);

/// True if (x, y) lies inside the object's shape.
bool shape_contains(const ObjectSpec& obj, int x, int y);

/// Symbolic edit, then the caller re-renders. Objects not named by the edit
/// are carried over bit-identically.
SceneSpec apply_edit(const SceneSpec& scene, const EditOp& edit);

/// Fixed English template per edit kind, e.g. "the red circle was removed".
std::string describe_edit(const EditOp& edit, const SceneSpec& before);

/// "a scene with a red circle and a blue square" in z-order; "an empty scene".
std::string caption(const SceneSpec& scene);

/// 3x3 spatial phrase ("upper left", "center", ...) for a point on a canvas.
std::string region_phrase(int cx, int cy, int width, int height);

// --- serialization ---

nlohmann::json to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EditOp& edit);
EditOp edit_from_json(const nlohmann::json& j);

void write_ppm(const std::string& path, const Raster& raster);
Raster read_ppm(const std::string& path);

}  // namespace scenegen
