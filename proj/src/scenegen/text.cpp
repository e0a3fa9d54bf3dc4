#include <algorithm>
#include <stdexcept>
#include <string>

#include "scenegen/scenegen.hpp"

namespace scenegen {

namespace {

std::string color_shape(const ObjectSpec& o) {
  return std::string(color_name(o.color)) + " " + shape_name(o.shape);
}

const ObjectSpec& must_find(const SceneSpec& scene, int id, const char* ctx) {
  const ObjectSpec* o = scene.find(id);
  if (!o)
    throw std::runtime_error(std::string(ctx) + ": id " + std::to_string(id) + " not in scene");
  return *o;
}

}  // namespace

std::string region_phrase(int cx, int cy, int width, int height) {
  const int col = std::min(2, cx * 3 / width);
  const int row = std::min(2, cy * 3 / height);
  static const char* kPhrases[3][3] = {
      {"upper left", "upper center", "upper right"},
      {"middle left", "center", "middle right"},
      {"lower left", "lower center", "lower right"}};
  return kPhrases[row][col];
}

std::string describe_edit(const EditOp& edit, const SceneSpec& before) {
  switch (edit.kind) {
    case EditKind::DELETE: {
      const ObjectSpec& t = must_find(before, edit.target_id, "describe_edit");
      return "the " + color_shape(t) + " was removed";
    }
    case EditKind::ADD: {
      const ObjectSpec& n = edit.new_object;
      return "a " + color_shape(n) + " was added in the " +
             region_phrase(n.cx, n.cy, before.width, before.height);
    }
    case EditKind::SWAP: {
      const ObjectSpec& a = must_find(before, edit.pair_ids[0], "describe_edit");
      const ObjectSpec& b = must_find(before, edit.pair_ids[1], "describe_edit");
      return "the " + color_shape(a) + " and the " + color_shape(b) + " swapped places";
    }
    case EditKind::MODIFY: {
      const ObjectSpec& t = must_find(before, edit.target_id, "describe_edit");
      // One attribute per sentence; precedence color > shape > size.
      if (edit.new_color)
        return "the " + color_shape(t) + " became " + color_name(*edit.new_color);
      if (edit.new_shape)
        return "the " + color_shape(t) + " became a " + shape_name(*edit.new_shape);
      if (edit.new_size)
        return "the " + color_shape(t) + " became " +
               (*edit.new_size > t.size ? "larger" : "smaller");
      throw std::runtime_error("describe_edit: MODIFY lists no replacement attribute");
    }
  }
  throw std::runtime_error("describe_edit: unknown edit kind");
}

std::string caption(const SceneSpec& scene) {
  if (scene.objects.empty()) return "an empty scene";
  std::vector<const ObjectSpec*> order;
  for (const ObjectSpec& o : scene.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(),
                   [](const ObjectSpec* a, const ObjectSpec* b) { return a->z < b->z; });
  std::string out = "a scene with";
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) out += " and";
    out += " a " + color_shape(*order[i]);
  }
  return out;
}

}  // namespace scenegen
