#include <algorithm>
#include <stdexcept>
#include <vector>

#include "trainpipe/trainpipe.hpp"

namespace trainpipe {

using numkit::Rng;
using numkit::Tensor;
using scenegen::EditKind;
using scenegen::EditOp;
using scenegen::ObjectMask;
using scenegen::ObjectSpec;
using scenegen::SceneSpec;
using scenegen::Shape;

SignificanceReport significance(const Tensor& a, int p,
                                const std::vector<ObjectMask>& masks) {
  if (p <= 0 || static_cast<int>(a.numel()) != p * p)
    throw std::runtime_error("significance: map has " + std::to_string(a.numel()) +
                             " values, expected " + std::to_string(p) + "x" + std::to_string(p));
  SignificanceReport report;
  for (const ObjectMask& m : masks) {
    if (m.width <= 0 || m.height <= 0 || m.width % p != 0 || m.height % p != 0)
      throw std::runtime_error("significance: mask " + std::to_string(m.width) + "x" +
                               std::to_string(m.height) + " is not divisible into a " +
                               std::to_string(p) + "x" + std::to_string(p) + " grid");
    // Each attention cell is replicated over its pixel block, so averaging
    // over any grid-aligned region is an exact block average.
    const int cell_w = m.width / p;
    const int cell_h = m.height / p;
    double sum = 0.0;
    long count = 0;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (m.grid[static_cast<std::size_t>(y) * m.width + x]) {
          sum += a.ptr()[(y / cell_h) * p + (x / cell_w)];
          ++count;
        }
    if (count == 0)
      throw std::runtime_error("significance: object " + std::to_string(m.object_id) +
                               " has an empty mask");
    report.objects.push_back({m.object_id, sum / static_cast<double>(count)});
  }
  return report;
}

int select_target(const SignificanceReport& report) {
  if (report.objects.empty()) throw std::runtime_error("select_target: no objects scored");
  const ObjectSignificance* best = &report.objects.front();
  for (const ObjectSignificance& o : report.objects)
    if (o.phi < best->phi || (o.phi == best->phi && o.object_id < best->object_id)) best = &o;
  return best->object_id;
}

namespace {

const std::vector<int>& even_sizes() {
  static const std::vector<int> s = {6, 8, 10, 12, 14, 16};
  return s;
}

/// Picks uniformly from values, excluding `taken`.
template <typename T>
T pick_other(Rng& rng, const std::vector<T>& values, const T& taken) {
  std::vector<T> rest;
  for (const T& v : values)
    if (!(v == taken)) rest.push_back(v);
  return rest[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(rest.size()) - 1))];
}

bool place_new_object(Rng& rng, const SceneSpec& scene, const std::vector<std::uint8_t>& occupied,
                      ObjectSpec& out) {
  // A fresh (color, shape) pair keeps difference sentences unambiguous.
  std::vector<std::pair<int, Shape>> unused;
  for (int color = 0; color < scenegen::kNumColors; ++color)
    for (int s = 0; s < scenegen::kNumShapes; ++s) {
      const Shape shape = static_cast<Shape>(s);
      bool taken = false;
      for (const ObjectSpec& o : scene.objects)
        if (o.color == color && o.shape == shape) taken = true;
      if (!taken) unused.emplace_back(color, shape);
    }
  if (unused.empty()) return false;
  const auto [color, shape] =
      unused[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(unused.size()) - 1))];

  int max_id = -1, max_z = -1;
  for (const ObjectSpec& o : scene.objects) {
    max_id = std::max(max_id, o.id);
    max_z = std::max(max_z, o.z);
  }

  for (int attempt = 0; attempt < 100; ++attempt) {
    ObjectSpec cand;
    cand.id = max_id + 1;
    cand.color = color;
    cand.shape = shape;
    cand.size = even_sizes()[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(even_sizes().size()) - 1))];
    cand.z = max_z + 1;
    const int half = cand.size / 2 + 1;
    if (scene.width - 1 - half < half || scene.height - 1 - half < half) continue;
    cand.cx = rng.uniform_int(half, scene.width - 1 - half);
    cand.cy = rng.uniform_int(half, scene.height - 1 - half);

    bool overlaps = false;
    for (int y = std::max(0, cand.cy - half); y <= std::min(scene.height - 1, cand.cy + half) && !overlaps; ++y)
      for (int x = std::max(0, cand.cx - half); x <= std::min(scene.width - 1, cand.cx + half); ++x)
        if (scenegen::shape_contains(cand, x, y) &&
            occupied[static_cast<std::size_t>(y) * scene.width + x]) {
          overlaps = true;
          break;
        }
    if (!overlaps) {
      out = cand;
      return true;
    }
  }
  return false;
}

}  // namespace

EditOp propose_edit(const SceneSpec& scene, int target_id, std::uint64_t seed) {
  const ObjectSpec* target = scene.find(target_id);
  if (!target)
    throw std::runtime_error("propose_edit: target " + std::to_string(target_id) +
                             " not in scene");
  Rng rng(seed);

  // ADD feasibility is pixel-accurate: the new shape may only cover pixels
  // where nothing is currently visible.
  auto [raster, masks] = scenegen::render(scene);
  (void)raster;
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(scene.width) * scene.height, 0);
  for (const ObjectMask& m : masks)
    for (std::size_t i = 0; i < m.grid.size(); ++i) occupied[i] |= m.grid[i];

  for (int attempt = 0; attempt < 64; ++attempt) {
    const EditKind kind = static_cast<EditKind>(rng.uniform_int(0, 3));
    EditOp op;
    op.kind = kind;
    switch (kind) {
      case EditKind::MODIFY: {
        op.target_id = target_id;
        const int attr = rng.uniform_int(0, 2);
        if (attr == 0) {
          std::vector<int> colors;
          for (int c = 0; c < scenegen::kNumColors; ++c) colors.push_back(c);
          op.new_color = pick_other(rng, colors, target->color);
        } else if (attr == 1) {
          std::vector<Shape> shapes;
          for (int s = 0; s < scenegen::kNumShapes; ++s) shapes.push_back(static_cast<Shape>(s));
          op.new_shape = pick_other(rng, shapes, target->shape);
        } else {
          op.new_size = pick_other(rng, even_sizes(), target->size);
        }
        return op;
      }
      case EditKind::SWAP: {
        if (scene.objects.size() < 2) continue;  // infeasible: redraw the kind
        std::vector<int> others;
        for (const ObjectSpec& o : scene.objects)
          if (o.id != target_id) others.push_back(o.id);
        op.pair_ids = {target_id,
                       others[static_cast<std::size_t>(
                           rng.uniform_int(0, static_cast<int>(others.size()) - 1))]};
        return op;
      }
      case EditKind::DELETE:
        op.target_id = target_id;
        return op;
      case EditKind::ADD: {
        ObjectSpec fresh;
        if (!place_new_object(rng, scene, occupied, fresh)) continue;
        op.new_object = fresh;
        return op;
      }
    }
  }
  throw std::runtime_error("propose_edit: no feasible edit found for the scene");
}

}  // namespace trainpipe
