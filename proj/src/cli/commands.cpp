#include "cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evalkit/evalkit.hpp"
#include "numkit/checkpoint.hpp"
#include "numkit/optim.hpp"
#include "numkit/rng.hpp"
#include "scenegen/scenegen.hpp"
#include "trainpipe/trainpipe.hpp"
#include "vpg/vpg.hpp"
#include "vpgc/vpgc.hpp"

namespace cli {

namespace fs = std::filesystem;
using numkit::Rng;

namespace {

// Stable sub-streams of the run seed, one per purpose, so adding a consumer
// never reshuffles another's draws.
enum SeedUse : std::uint64_t {
  kSeedBackbone = 0,
  kSeedCaptions = 1,
  kSeedVpgc = 2,
  kSeedTrain = 3,
  kSeedShuffle = 4,
  kSeedRecords = 5,
  kSeedPretrain = 6,
};

Rng sub_rng(const RunConfig& cfg, SeedUse use) {
  return Rng(static_cast<std::uint64_t>(cfg.geti("seed"))).fork(use);
}

void require_output(const std::string& command, const std::string& path) {
  std::error_code ec;
  if (!fs::exists(path, ec) || fs::file_size(path, ec) == 0)
    throw std::runtime_error(command + ": expected output '" + path + "' was not written");
}

std::string dir_of(const std::string& path) {
  const std::string dir = fs::path(path).parent_path().string();
  return dir.empty() ? "." : dir;
}

std::string numbered(const char* stem, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, index, ext);
  return buf;
}

scenegen::GenConfig scene_config(const RunConfig& cfg) {
  scenegen::GenConfig gen;
  gen.canvas = cfg.geti("scene.canvas");
  gen.min_objects = cfg.geti("scene.min_objects");
  gen.max_objects = cfg.geti("scene.max_objects");
  gen.min_size = cfg.geti("scene.min_size");
  gen.max_size = cfg.geti("scene.max_size");
  return gen;
}

void check_model_config(const RunConfig& cfg) {
  const int patch = cfg.geti("model.patch");
  const int grid_p = cfg.geti("model.grid_p");
  const int canvas = cfg.geti("scene.canvas");
  if (canvas != patch * grid_p)
    throw std::runtime_error("config: scene.canvas (" + std::to_string(canvas) +
                             ") must equal model.patch * model.grid_p (" +
                             std::to_string(patch * grid_p) + ")");
  const std::string kind = cfg.gets("model.vpg_kind");
  if (kind != "qformer" && kind != "linear")
    throw std::runtime_error("config: model.vpg_kind must be 'qformer' or 'linear', got '" +
                             kind + "'");
  if (kind == "linear" && cfg.geti("model.k") != grid_p * grid_p)
    throw std::runtime_error(
        "config: a linear VPG emits one prompt per grid cell; set model.k to grid_p^2 (" +
        std::to_string(grid_p * grid_p) + ")");
}

/// Fresh backbone from the model section. Only the pretraining command wants
/// the resampler and decoder trainable; everyone else gets a frozen stack.
vpgc::Backbone make_backbone(const RunConfig& cfg, bool trainable) {
  check_model_config(cfg);
  const decoder::Tokenizer tok = trainpipe::make_tokenizer();
  const int d = cfg.geti("model.d");
  Rng base = sub_rng(cfg, kSeedBackbone);

  vpgc::Backbone bb;
  bb.vpg_kind = cfg.gets("model.vpg_kind");
  bb.encoder = vpg::init_encoder(base.fork(0), cfg.geti("model.patch"), cfg.geti("model.grid_p"), d);
  bb.resampler = vpg::init_resampler(base.fork(1), cfg.geti("model.k"), d,
                                     cfg.geti("model.resampler_blocks"), trainable);
  bb.linear_vpg = vpg::init_linear_vpg(base.fork(2), d, d, false);

  decoder::ModelConfig mc;
  mc.layers = cfg.geti("model.layers");
  mc.d = d;
  mc.heads = cfg.geti("model.heads");
  mc.vocab = tok.vocab();
  mc.k = cfg.geti("model.k");
  mc.insert_layer = cfg.geti("model.insert_layer");
  mc.max_seq = cfg.geti("model.max_seq");
  bb.dec = decoder::init_decoder(base.fork(3), mc, trainable);
  return bb;
}

/// Loads a saved backbone when a path is configured, otherwise builds a
/// fresh frozen one from the model section.
vpgc::Backbone get_backbone(const RunConfig& cfg, const std::string& path_key) {
  const std::string path = cfg.gets(path_key);
  if (path.empty()) return make_backbone(cfg, false);
  vpgc::Backbone bb;
  trainpipe::load_backbone(cfg.resolve(path), bb);
  const decoder::Tokenizer tok = trainpipe::make_tokenizer();
  if (bb.dec.cfg.vocab != tok.vocab())
    throw std::runtime_error("config: backbone '" + path + "' has vocab " +
                             std::to_string(bb.dec.cfg.vocab) + ", the tokenizer builds " +
                             std::to_string(tok.vocab()));
  return bb;
}

vpgc::VPGCConfig variant_config(const RunConfig& cfg) {
  vpgc::VPGCConfig vcfg;
  vcfg.variant = cfg.gets("variant");
  vcfg.insert_layer = cfg.geti("model.insert_layer");
  vcfg.zero_init_both = cfg.getb("model.zero_init_both");
  vcfg.bottom_fraction = cfg.getd("model.bottom_fraction");
  vpgc::validate_variant(vcfg.variant);
  return vcfg;
}

vpgc::VPGCWeights fresh_vpgc(const RunConfig& cfg, const vpgc::Backbone& bb) {
  if (bb.resampler.queries.numel() == 0)
    throw std::runtime_error(
        "config: the loaded backbone carries no resampler to size the query bank from; leave "
        "the backbone path empty so the stack is rebuilt from the model section");
  return vpgc::init_vpgc(sub_rng(cfg, kSeedVpgc), bb.resampler, bb.dec.cfg.d,
                         cfg.getb("model.zero_init_both"));
}

std::vector<evalkit::EvalRecord> capped_records(const std::vector<evalkit::EvalRecord>& records,
                                                int cap) {
  if (cap <= 0) throw std::runtime_error("config: eval.per_task_cap must be positive");
  std::map<std::string, int> seen;
  std::vector<evalkit::EvalRecord> out;
  for (const auto& rec : records)
    if (seen[rec.task_id]++ < cap) out.push_back(rec);
  return out;
}

/// Wraps a trained model as an eval-protocol generator: the record's images
/// and text segments are laid out exactly like a training prompt
/// (instruction marker, segments, task instruction, response marker) and the
/// greedy continuation is decoded back to words.
struct PromptedModel {
  const vpgc::Backbone& bb;
  const vpgc::VPGCWeights& w;
  vpgc::VPGCConfig vcfg;
  const decoder::Tokenizer& tok;
  int max_new = 12;

  std::string operator()(const evalkit::EvalRecord& rec,
                         const std::vector<scenegen::Raster>& images) const {
    numkit::NoGradGuard ng;
    decoder::MixedSequence prefix;
    prefix.add_text({decoder::Tokenizer::kInst});
    for (const auto& seg : rec.segments) {
      if (seg.is_image) {
        prefix.add_image();
      } else {
        std::vector<int> ids = tok.encode(seg.text);
        if (!ids.empty()) prefix.add_text(std::move(ids));
      }
    }
    std::vector<int> instr = tok.encode(rec.task_instruction);
    if (!instr.empty()) prefix.add_text(std::move(instr));
    prefix.add_text({decoder::Tokenizer::kResp});

    const std::vector<int> ids =
        vpgc::generate(prefix, images, bb, w, vcfg, decoder::Tokenizer::kEos, max_new);
    std::vector<int> words;
    for (int id : ids)
      if (id > decoder::Tokenizer::kPad) words.push_back(id);
    return tok.decode(words);
  }
};

/// Mean per-record score per metric, in first-appearance order.
std::vector<std::pair<std::string, std::pair<int, double>>> by_metric(
    const evalkit::EvalReport& report) {
  std::vector<std::pair<std::string, std::pair<int, double>>> rows;
  for (const auto& r : report.per_record) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const auto& row) { return row.first == r.metric; });
    if (it == rows.end()) {
      rows.push_back({r.metric, {1, r.score}});
    } else {
      it->second.first += 1;
      it->second.second += r.score;
    }
  }
  for (auto& row : rows) row.second.second /= row.second.first;
  return rows;
}

void write_probe_csv(const std::string& path,
                     const std::vector<std::tuple<int, std::string, int, double>>& rows) {
  std::ofstream csv(path);
  if (!csv) throw std::runtime_error("probe-layers: cannot write '" + path + "'");
  csv << "layer,metric,n,score\n" << std::setprecision(17);
  for (const auto& [layer, metric, n, score] : rows)
    csv << layer << "," << metric << "," << n << "," << score << "\n";
}

/// Minimal line chart: one polyline per metric over the swept layers,
/// y fixed to [0, 1].
void write_probe_svg(const std::string& path,
                     const std::vector<std::tuple<int, std::string, int, double>>& rows) {
  std::vector<int> layers;
  std::vector<std::string> metrics;
  for (const auto& [layer, metric, n, score] : rows) {
    (void)n;
    (void)score;
    if (std::find(layers.begin(), layers.end(), layer) == layers.end()) layers.push_back(layer);
    if (std::find(metrics.begin(), metrics.end(), metric) == metrics.end())
      metrics.push_back(metric);
  }
  std::sort(layers.begin(), layers.end());

  const int width = 640, height = 360;
  const int left = 60, right = 150, top = 20, bottom = 40;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  const char* colors[] = {"#4477aa", "#cc6677", "#228833", "#ccbb44"};

  auto x_of = [&](int layer) {
    const auto it = std::find(layers.begin(), layers.end(), layer);
    const double i = static_cast<double>(it - layers.begin());
    const double n = std::max<double>(1, layers.size() - 1);
    return left + (layers.size() == 1 ? plot_w / 2 : plot_w * i / n);
  };
  auto y_of = [&](double score) { return top + plot_h * (1.0 - std::clamp(score, 0.0, 1.0)); };

  std::ofstream svg(path);
  if (!svg) throw std::runtime_error("probe-layers: cannot write '" + path + "'");
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    svg << "<line x1=\"" << left << "\" y1=\"" << y_of(tick) << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << y_of(tick) << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << y_of(tick) + 4
        << "\" font-size=\"11\" text-anchor=\"end\">" << tick << "</text>\n";
  }
  for (int layer : layers)
    svg << "<text x=\"" << x_of(layer) << "\" y=\"" << height - bottom + 18
        << "\" font-size=\"11\" text-anchor=\"middle\">" << layer << "</text>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 6
      << "\" font-size=\"12\" text-anchor=\"middle\">insertion layer</text>\n";

  for (std::size_t m = 0; m < metrics.size(); ++m) {
    const char* color = colors[m % 4];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (int layer : layers)
      for (const auto& [l, metric, n, score] : rows) {
        (void)n;
        if (l == layer && metric == metrics[m]) svg << x_of(layer) << "," << y_of(score) << " ";
      }
    svg << "\"/>\n";
    svg << "<text x=\"" << left + plot_w + 12 << "\" y=\"" << top + 16 + 18 * m
        << "\" font-size=\"12\" fill=\"" << color << "\">" << metrics[m] << "</text>\n";
  }
  svg << "</svg>\n";
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  check_model_config(cfg);
  const std::string dir = cfg.resolve(cfg.gets("data.dir"));
  const int n_pairs = cfg.geti("data.n_pairs");
  const int n_options = cfg.geti("data.choice_options");
  if (n_options < 2) throw std::runtime_error("config: data.choice_options must be at least 2");

  const vpgc::Backbone bb = get_backbone(cfg, "data.backbone");
  if (bb.vpg_kind != "qformer")
    throw std::runtime_error(
        "gen-data: target selection needs the attention-map backbone; point data.backbone at a "
        "qformer stack or leave it empty");

  const trainpipe::BuildStats stats = trainpipe::build_dataset(
      n_pairs, bb, scene_config(cfg), static_cast<std::uint64_t>(cfg.geti("seed")), dir);

  // Rasters for the eval protocol: the manifest's scenes re-rendered to PPM.
  const std::vector<trainpipe::TrainPair> pairs =
      trainpipe::load_dataset((fs::path(dir) / "manifest.jsonl").string());
  std::map<std::string, int> kinds = {{"modify", 0}, {"swap", 0}, {"delete", 0}, {"add", 0}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    scenegen::write_ppm((fs::path(dir) / numbered("scene", static_cast<int>(i), "ppm")).string(),
                        pairs[i].raster_before);
    scenegen::write_ppm((fs::path(dir) / numbered("edited", static_cast<int>(i), "ppm")).string(),
                        pairs[i].raster_after);
    kinds[scenegen::edit_kind_name(pairs[i].edit.kind)] += 1;
  }

  // Two eval tasks per pair: describe the difference freely, and pick the
  // true difference sentence out of decoys drawn from other pairs.
  Rng rec_rng = sub_rng(cfg, kSeedRecords);
  std::vector<evalkit::EvalRecord> records;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    evalkit::EvalRecord open;
    open.task_id = "difference-open";
    open.category = "difference";
    open.task_instruction = trainpipe::kDifferenceInstruction;
    open.segments.push_back({true, "", numbered("scene", static_cast<int>(i), "ppm")});
    open.segments.push_back({true, "", numbered("edited", static_cast<int>(i), "ppm")});
    open.response = pairs[i].difference_sentence;
    records.push_back(open);

    Rng pick = rec_rng.fork(i);
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < pairs.size(); ++j)
      if (j != i) order.push_back(j);
    for (std::size_t j = order.size(); j > 1; --j)
      std::swap(order[j - 1], order[static_cast<std::size_t>(
                                  pick.uniform_int(0, static_cast<int>(j) - 1))]);
    std::vector<std::string> options;
    for (std::size_t j : order) {
      const std::string& decoy = pairs[j].difference_sentence;
      if (decoy == pairs[i].difference_sentence) continue;
      if (std::find(options.begin(), options.end(), decoy) != options.end()) continue;
      options.push_back(decoy);
      if (static_cast<int>(options.size()) == n_options - 1) break;
    }
    if (options.empty()) continue;  // every sentence identical; no task to pose
    evalkit::EvalRecord choice = open;
    choice.task_id = "difference-choice";
    const int slot = pick.uniform_int(0, static_cast<int>(options.size()));
    options.insert(options.begin() + slot, pairs[i].difference_sentence);
    choice.options = options;
    choice.gold_index = slot;
    records.push_back(choice);
  }
  const std::string records_path = (fs::path(dir) / "records.jsonl").string();
  evalkit::save_records(records_path, records);

  write_resolved(cfg, dir, "gen-data");
  require_output("gen-data", (fs::path(dir) / "manifest.jsonl").string());
  require_output("gen-data", records_path);

  out << "pairs: " << stats.written << " written, " << stats.skipped << " skipped\n";
  out << "edits: modify=" << kinds["modify"] << " swap=" << kinds["swap"]
      << " delete=" << kinds["delete"] << " add=" << kinds["add"] << "\n";
  out << "records: " << records.size() << " -> " << records_path << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  vpgc::Backbone bb = make_backbone(cfg, true);
  const decoder::Tokenizer tok = trainpipe::make_tokenizer();
  const std::vector<trainpipe::CaptionExample> captions = trainpipe::make_caption_set(
      cfg.geti("data.n_captions"), scene_config(cfg), sub_rng(cfg, kSeedCaptions).next_u64());

  trainpipe::PretrainConfig pc;
  pc.steps = cfg.geti("pretrain.steps");
  pc.cap_batch = cfg.geti("pretrain.cap_batch");
  pc.pair_batch = cfg.geti("pretrain.pair_batch");
  pc.text_batch = cfg.geti("pretrain.text_batch");
  pc.seed = sub_rng(cfg, kSeedPretrain).next_u64();
  pc.sched.lr_peak = cfg.getd("pretrain.lr");
  pc.sched.warmup_steps = cfg.geti("pretrain.warmup");
  pc.sched.total_steps = std::max(1, pc.steps);

  const std::string csv_path = cfg.resolve(cfg.gets("pretrain.loss_csv"));
  const trainpipe::TrainResult result = trainpipe::pretrain_backbone(bb, captions, tok, pc, csv_path);

  const std::string bb_path = cfg.resolve(cfg.gets("pretrain.out"));
  fs::create_directories(dir_of(bb_path));
  trainpipe::save_backbone(bb_path, bb, cfg.values.dump());

  write_resolved(cfg, dir_of(bb_path), "pretrain");
  require_output("pretrain", bb_path);
  require_output("pretrain", csv_path);

  out << "pretrain: " << pc.steps << " steps on " << captions.size() << " captions\n";
  if (!result.trace.empty()) {
    const auto& first = result.trace.front();
    const auto& last = result.trace.back();
    out << "loss: text " << first.loss_disc << " -> " << last.loss_disc << ", caption "
        << first.loss_cap << " -> " << last.loss_cap << "\n";
  }
  out << "backbone: " << bb_path << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  vpgc::Backbone bb = get_backbone(cfg, "train.backbone");
  const decoder::Tokenizer tok = trainpipe::make_tokenizer();
  const vpgc::VPGCConfig vcfg = variant_config(cfg);

  const std::string manifest =
      (fs::path(cfg.resolve(cfg.gets("data.dir"))) / "manifest.jsonl").string();
  const std::vector<trainpipe::TrainPair> pairs = trainpipe::load_dataset(manifest);
  const std::vector<trainpipe::CaptionExample> captions = trainpipe::make_caption_set(
      cfg.geti("data.n_captions"), scene_config(cfg), sub_rng(cfg, kSeedCaptions).next_u64());

  vpgc::VPGCWeights w = fresh_vpgc(cfg, bb);

  trainpipe::MixConfig mix;
  mix.steps = cfg.geti("train.steps");
  mix.disc_batch = cfg.geti("train.disc_batch");
  mix.cap_batch = cfg.geti("train.cap_batch");
  mix.seed = sub_rng(cfg, kSeedTrain).next_u64();
  mix.sched.lr_peak = cfg.getd("train.lr");
  mix.sched.warmup_steps = cfg.geti("train.warmup");

  const std::string resume = cfg.gets("train.resume");
  const std::string csv_path = cfg.resolve(cfg.gets("train.loss_csv"));
  const std::string ck_path = cfg.resolve(cfg.gets("train.out"));
  fs::create_directories(dir_of(csv_path));
  fs::create_directories(dir_of(ck_path));

  trainpipe::TrainResult result;
  if (vcfg.variant == "off") {
    // Nothing trainable: still emit the run artifacts (empty trace, a
    // metadata-only checkpoint) so downstream commands can treat the frozen
    // baseline like any other run.
    if (!resume.empty())
      mix.start_step =
          trainpipe::load_train_checkpoint(cfg.resolve(resume), w, vcfg.variant, nullptr).step;
    {
      std::ofstream csv(csv_path);
      if (!csv) throw std::runtime_error("train: cannot write '" + csv_path + "'");
      csv << "step,lr,loss_disc,loss_cap\n";
    }
    nlohmann::json meta;
    meta["step"] = mix.start_step + mix.steps;
    meta["adam_step"] = 0;
    meta["variant"] = vcfg.variant;
    meta["run_config"] = cfg.values;
    numkit::save_checkpoint(ck_path, meta, {});
  } else {
    auto named = vpgc::trainable_params(w, vcfg.variant);
    std::vector<numkit::Tensor> tensors;
    for (auto& [name, t] : named) tensors.push_back(t);
    numkit::AdamW opt(tensors, numkit::AdamWHyper{});

    if (!resume.empty())
      mix.start_step =
          trainpipe::load_train_checkpoint(cfg.resolve(resume), w, vcfg.variant, &opt).step;
    const int total = cfg.geti("train.total_steps");
    mix.sched.total_steps = total > 0 ? total : std::max(1, mix.start_step + mix.steps);

    result = trainpipe::train(bb, w, vcfg, pairs, captions, tok, mix, csv_path, &opt);
    trainpipe::save_train_checkpoint(ck_path, w, vcfg.variant, opt, mix.start_step + mix.steps,
                                     cfg.values.dump());
  }

  write_resolved(cfg, dir_of(ck_path), "train");
  require_output("train", ck_path);
  require_output("train", csv_path);

  out << "train: variant " << vcfg.variant << ", steps " << mix.start_step << ".."
      << mix.start_step + mix.steps - 1 << " on " << pairs.size() << " pairs\n";
  if (!result.trace.empty()) {
    const auto& last = result.trace.back();
    out << "loss: disc " << last.loss_disc << ", caption " << last.loss_cap << "\n";
  }
  out << "checkpoint: " << ck_path << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const std::string records_path = cfg.resolve(cfg.gets("eval.records"));
  const std::vector<evalkit::EvalRecord> records =
      capped_records(evalkit::load_records(records_path), cfg.geti("eval.per_task_cap"));

  const std::string model_kind = cfg.gets("eval.model");
  evalkit::GenerateFn model;
  vpgc::Backbone bb;
  vpgc::VPGCWeights w;
  const decoder::Tokenizer tok = trainpipe::make_tokenizer();
  if (model_kind == "echo") {
    model = [](const evalkit::EvalRecord& rec, const std::vector<scenegen::Raster>&) {
      return rec.response;
    };
  } else if (model_kind == "vpgc") {
    bb = get_backbone(cfg, "eval.backbone");
    vpgc::VPGCConfig vcfg = variant_config(cfg);
    w = fresh_vpgc(cfg, bb);
    const std::string ck = cfg.gets("eval.checkpoint");
    if (!ck.empty())
      trainpipe::load_train_checkpoint(cfg.resolve(ck), w, vcfg.variant, nullptr);
    model = PromptedModel{bb, w, vcfg, tok, cfg.geti("eval.max_new_tokens")};
  } else {
    throw std::runtime_error("config: eval.model must be 'vpgc' or 'echo', got '" + model_kind +
                             "'");
  }

  const evalkit::EvalReport report = evalkit::evaluate(model, records);
  const std::string csv_path = cfg.resolve(cfg.gets("eval.report_csv"));
  const std::string svg_path = cfg.resolve(cfg.gets("eval.report_svg"));
  fs::create_directories(dir_of(csv_path));
  fs::create_directories(dir_of(svg_path));
  evalkit::write_report_csv(csv_path, report);
  evalkit::write_report_svg(svg_path, report);
  write_resolved(cfg, dir_of(csv_path), "eval");
  require_output("eval", csv_path);
  require_output("eval", svg_path);

  out << "eval: " << records.size() << " records (" << report.skipped << " skipped)\n";
  for (const auto& g : report.per_task)
    out << "  " << g.task_id << " [" << g.metric << "] n=" << g.n << " score=" << g.score << "\n";

  if (cfg.getb("eval.shuffle_probe")) {
    const evalkit::ShuffleReport sr =
        evalkit::shuffle_probe(model, records, sub_rng(cfg, kSeedShuffle).next_u64());
    const std::string sh_path = cfg.resolve(cfg.gets("eval.shuffle_csv"));
    {
      std::ofstream csv(sh_path);
      if (!csv) throw std::runtime_error("eval: cannot write '" + sh_path + "'");
      csv << "task,category,metric,n,original,shuffled,delta\n" << std::setprecision(17);
      for (const auto& d : sr.deltas)
        csv << d.task_id << "," << d.category << "," << d.metric << "," << d.n << ","
            << d.original << "," << d.shuffled << "," << d.delta << "\n";
    }
    require_output("eval", sh_path);
    out << "shuffle probe: " << sr.deltas.size() << " rows (" << sr.skipped_records
        << " records below two images) -> " << sh_path << "\n";
  }
  return 0;
}

int cmd_probe_layers(const RunConfig& cfg, std::ostream& out) {
  const std::vector<int> layers = cfg.get_ints("probe.layers");
  if (layers.empty()) throw std::runtime_error("config: probe.layers is empty");

  vpgc::Backbone bb = get_backbone(cfg, "train.backbone");
  for (int layer : layers)
    if (layer < 1 || layer >= bb.dec.cfg.layers)
      throw std::runtime_error("probe-layers: layer " + std::to_string(layer) + " outside [1, " +
                               std::to_string(bb.dec.cfg.layers - 1) + "]");

  const decoder::Tokenizer tok = trainpipe::make_tokenizer();
  const std::string manifest =
      (fs::path(cfg.resolve(cfg.gets("data.dir"))) / "manifest.jsonl").string();
  const std::vector<trainpipe::TrainPair> pairs = trainpipe::load_dataset(manifest);
  const std::vector<trainpipe::CaptionExample> captions = trainpipe::make_caption_set(
      cfg.geti("data.n_captions"), scene_config(cfg), sub_rng(cfg, kSeedCaptions).next_u64());
  const std::vector<evalkit::EvalRecord> records = capped_records(
      evalkit::load_records(cfg.resolve(cfg.gets("eval.records"))), cfg.geti("eval.per_task_cap"));

  std::vector<std::tuple<int, std::string, int, double>> rows;
  for (int layer : layers) {
    vpgc::VPGCWeights w = fresh_vpgc(cfg, bb);  // same seed per layer: only the slot moves
    vpgc::VPGCConfig vcfg = variant_config(cfg);
    vcfg.insert_layer = layer;

    if (vcfg.variant != "off") {
      trainpipe::MixConfig mix;
      mix.steps = cfg.geti("probe.steps");
      mix.disc_batch = cfg.geti("train.disc_batch");
      mix.cap_batch = cfg.geti("train.cap_batch");
      mix.seed = sub_rng(cfg, kSeedTrain).next_u64();
      mix.sched.lr_peak = cfg.getd("train.lr");
      mix.sched.warmup_steps = cfg.geti("train.warmup");
      mix.sched.total_steps = std::max(1, mix.steps);
      trainpipe::train(bb, w, vcfg, pairs, captions, tok, mix, "");
    }

    const PromptedModel model{bb, w, vcfg, tok, cfg.geti("eval.max_new_tokens")};
    const evalkit::EvalReport report = evalkit::evaluate(model, records);
    for (const auto& [metric, agg] : by_metric(report))
      rows.emplace_back(layer, metric, agg.first, agg.second);
    out << "layer " << layer << ":";
    for (const auto& [metric, agg] : by_metric(report)) out << " " << metric << "=" << agg.second;
    out << "\n";
  }

  const std::string csv_path = cfg.resolve(cfg.gets("probe.out_csv"));
  const std::string svg_path = cfg.resolve(cfg.gets("probe.out_svg"));
  fs::create_directories(dir_of(csv_path));
  fs::create_directories(dir_of(svg_path));
  write_probe_csv(csv_path, rows);
  write_probe_svg(svg_path, rows);
  write_resolved(cfg, dir_of(csv_path), "probe-layers");
  require_output("probe-layers", csv_path);
  require_output("probe-layers", svg_path);
  out << "wrote " << csv_path << " and " << svg_path << "\n";
  return 0;
}

int cmd_dump_attn(const RunConfig& cfg, std::ostream& out) {
  const std::string image_path = cfg.gets("dump_attn.image");
  if (image_path.empty()) throw std::runtime_error("config: dump_attn.image is required");

  const vpgc::Backbone bb = get_backbone(cfg, "dump_attn.backbone");
  if (bb.vpg_kind != "qformer")
    throw std::runtime_error(
        "dump-attn: attention maps come from the resampler; this needs a qformer backbone");
  numkit::NoGradGuard ng;
  const scenegen::Raster raster = scenegen::read_ppm(cfg.resolve(image_path));
  const vpg::FeatureGrid grid = vpg::encode_image(raster, bb.encoder);
  const vpg::ResampleOut rs = vpg::resample(grid, bb.resampler.queries, bb.resampler);

  const std::string prefix = cfg.resolve(cfg.gets("dump_attn.out_prefix"));
  fs::create_directories(dir_of(prefix));
  const std::string csv_path = prefix + "_trace.csv";
  const std::string ppm_path = prefix + "_global.ppm";
  vpg::dump_attention_csv(rs.trace, csv_path);
  const numkit::Tensor global = vpg::avg_attention(rs.trace);
  vpg::write_heatmap_ppm(ppm_path, global, rs.trace.p);

  write_resolved(cfg, dir_of(prefix), "dump-attn");
  require_output("dump-attn", csv_path);
  require_output("dump-attn", ppm_path);

  double sum = 0.0;
  for (std::size_t i = 0; i < global.numel(); ++i) sum += global.ptr()[i];
  out << "attention: " << rs.trace.maps.size() << " layers over " << rs.trace.p << "x"
      << rs.trace.p << " cells, global map sum " << sum << "\n";
  out << "wrote " << csv_path << " and " << ppm_path << "\n";
  return 0;
}

}  // namespace cli
