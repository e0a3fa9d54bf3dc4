#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "trainpipe/trainpipe.hpp"
#include "vpg/vpg.hpp"

namespace trainpipe {

using numkit::Rng;

namespace {

std::string pair_file_name(const char* stem, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.json", stem, index);
  return buf;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("build_dataset: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace

BuildStats build_dataset(int n_pairs, const vpgc::Backbone& backbone,
                         const scenegen::GenConfig& gen, std::uint64_t seed,
                         const std::string& out_dir) {
  if (n_pairs <= 0) throw std::runtime_error("build_dataset: n_pairs must be positive");
  if (backbone.vpg_kind != "qformer")
    throw std::runtime_error("build_dataset: target selection needs the attention-map backbone, got '" +
                             backbone.vpg_kind + "'");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("build_dataset: cannot write manifest in " + out_dir);

  numkit::NoGradGuard guard;
  const Rng base(seed);
  BuildStats stats;
  const int max_attempts = n_pairs * 20 + 100;
  for (int attempt = 0; attempt < max_attempts && stats.written < n_pairs; ++attempt) {
    Rng sub = base.fork(static_cast<std::uint64_t>(attempt));
    const std::uint64_t scene_seed = sub.next_u64();
    const std::uint64_t edit_seed = sub.next_u64();
    try {
      const scenegen::SceneSpec before = scenegen::gen_scene(scene_seed, gen);
      auto [raster, masks] = scenegen::render(before);
      const vpg::FeatureGrid grid = vpg::encode_image(raster, backbone.encoder);
      const vpg::ResampleOut rs = vpg::resample(grid, backbone.resampler.queries, backbone.resampler);
      const numkit::Tensor a = vpg::avg_attention(rs.trace);
      const int target = select_target(significance(a, grid.p, masks));
      const scenegen::EditOp edit = propose_edit(before, target, edit_seed);
      const scenegen::SceneSpec after = scenegen::apply_edit(before, edit);
      scenegen::render(after);  // must rasterize cleanly before we commit the pair

      const std::string scene_file = pair_file_name("scene", stats.written);
      const std::string edited_file = pair_file_name("edited", stats.written);
      write_json_file(dir / scene_file, scenegen::to_json(before));
      write_json_file(dir / edited_file, scenegen::to_json(after));

      nlohmann::json line;
      line["scene_file"] = scene_file;
      line["edited_file"] = edited_file;
      line["edit"] = scenegen::to_json(edit);
      line["target_id"] = target;
      line["difference_sentence"] = scenegen::describe_edit(edit, before);
      line["caption_before"] = scenegen::caption(before);
      manifest << line.dump() << "\n";
      ++stats.written;
    } catch (const std::runtime_error&) {
      ++stats.skipped;
    }
  }
  if (stats.written < n_pairs)
    throw std::runtime_error("build_dataset: only " + std::to_string(stats.written) + " of " +
                             std::to_string(n_pairs) + " pairs after " +
                             std::to_string(max_attempts) + " attempts");
  return stats;
}

std::vector<TrainPair> load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("load_dataset: cannot read " + manifest_path);
  const std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();

  std::vector<TrainPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: bad JSON on line " + std::to_string(line_no) + ": " +
                               e.what());
    }
    TrainPair p;
    p.before = scenegen::scene_from_json(read_json_file(dir / j.at("scene_file").get<std::string>()));
    p.after = scenegen::scene_from_json(read_json_file(dir / j.at("edited_file").get<std::string>()));
    p.edit = scenegen::edit_from_json(j.at("edit"));
    p.target_id = j.at("target_id").get<int>();
    p.difference_sentence = j.at("difference_sentence").get<std::string>();
    p.caption_before = j.at("caption_before").get<std::string>();
    p.raster_before = scenegen::render(p.before).first;
    p.raster_after = scenegen::render(p.after).first;

    if (scenegen::describe_edit(p.edit, p.before) != p.difference_sentence)
      throw std::runtime_error("load_dataset: line " + std::to_string(line_no) +
                               ": stored sentence does not match the edit");
    if (scenegen::caption(p.before) != p.caption_before)
      throw std::runtime_error("load_dataset: line " + std::to_string(line_no) +
                               ": stored caption does not match the scene");
    if (p.raster_before.width != p.raster_after.width ||
        p.raster_before.height != p.raster_after.height)
      throw std::runtime_error("load_dataset: line " + std::to_string(line_no) +
                               ": before/after raster dimensions differ");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<CaptionExample> make_caption_set(int n, const scenegen::GenConfig& gen,
                                             std::uint64_t seed) {
  if (n <= 0) throw std::runtime_error("make_caption_set: n must be positive");
  const Rng base(seed);
  std::vector<CaptionExample> out;
  const int max_attempts = n * 20 + 100;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < n; ++attempt) {
    Rng sub = base.fork(static_cast<std::uint64_t>(attempt));
    try {
      CaptionExample ex;
      ex.scene = scenegen::gen_scene(sub.next_u64(), gen);
      ex.raster = scenegen::render(ex.scene).first;
      ex.caption = scenegen::caption(ex.scene);
      out.push_back(std::move(ex));
    } catch (const std::runtime_error&) {
    }
  }
  if (static_cast<int>(out.size()) < n)
    throw std::runtime_error("make_caption_set: only " + std::to_string(out.size()) + " of " +
                             std::to_string(n) + " scenes generated");
  return out;
}

}  // namespace trainpipe
