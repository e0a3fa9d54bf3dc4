#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "decoder/decoder.hpp"
#include "numkit/checkpoint.hpp"
#include "numkit/ops.hpp"
#include "trainpipe/trainpipe.hpp"
#include "vpg/vpg.hpp"

namespace trainpipe {

using decoder::Tokenizer;
using numkit::Rng;
using numkit::Tensor;

const char* const kDifferenceInstruction = "describe the difference between the images";
const char* const kCaptionInstruction = "describe the image";
const char* const kFirstImageInstruction = "describe the first image";
const char* const kSecondImageInstruction = "describe the second image";

std::vector<std::string> vocabulary_words() {
  std::vector<std::string> words;
  for (int c = 0; c < scenegen::kNumColors; ++c) words.push_back(scenegen::color_name(c));
  for (int s = 0; s < scenegen::kNumShapes; ++s)
    words.push_back(scenegen::shape_name(static_cast<scenegen::Shape>(s)));
  for (const char* w : {"upper", "middle", "lower", "left", "center", "right"}) words.push_back(w);
  for (const char* w : {"the", "was", "removed", "a", "an", "added", "in", "and", "swapped",
                        "places", "became", "larger", "smaller"})
    words.push_back(w);
  for (const char* w : {"scene", "with", "empty"}) words.push_back(w);
  for (const char* w : {"describe", "difference", "between", "images", "image", "first", "second"})
    words.push_back(w);
  for (const char* w : {"option", "answer", "choice", "is"}) words.push_back(w);
  return words;
}

Tokenizer make_tokenizer() { return Tokenizer::from_words(vocabulary_words()); }

namespace {

/// [<inst>] images... instruction [<resp>] response [<eos>], supervised on
/// the response span. The guidance row is the <resp> marker: the position
/// whose hidden state conditions the detail pass both here and at
/// generation time.
Example build_example(const char* opname, const Tokenizer& tok, const std::string& instruction,
                      const std::string& response, std::vector<scenegen::Raster> rasters, int k) {
  Example ex;
  const std::vector<int> instr = tok.encode(instruction);
  for (int id : instr)
    if (id == Tokenizer::kUnk)
      throw std::runtime_error(std::string(opname) + ": word outside the vocabulary in \"" +
                               instruction + "\"");
  ex.response_ids = tok.encode(response);
  for (int id : ex.response_ids)
    if (id == Tokenizer::kUnk)
      throw std::runtime_error(std::string(opname) + ": word outside the vocabulary in \"" +
                               response + "\"");
  const int n_images = static_cast<int>(rasters.size());

  ex.seq.add_text({Tokenizer::kInst});
  for (int i = 0; i < n_images; ++i) ex.seq.add_image();
  ex.seq.add_text(instr);
  ex.seq.add_text({Tokenizer::kResp});
  std::vector<int> tail = ex.response_ids;
  tail.push_back(Tokenizer::kEos);
  ex.seq.add_text(tail);

  ex.rasters = std::move(rasters);
  ex.guidance_row = 1 + n_images * k + static_cast<int>(instr.size());
  const int n = ex.seq.length(k);
  ex.targets.assign(static_cast<std::size_t>(n), Tokenizer::kPad);
  ex.mask.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t j = 0; j < tail.size(); ++j) {
    ex.targets[static_cast<std::size_t>(ex.guidance_row) + j] = tail[j];
    ex.mask[static_cast<std::size_t>(ex.guidance_row) + j] = 1;
  }
  return ex;
}

double scalar_value(const Tensor& t) { return t.ptr()[0]; }

void write_trace_csv(const std::string& path, const char* header,
                     const std::vector<StepLog>& trace) {
  if (path.empty()) return;
  std::ofstream csv(path);
  if (!csv) throw std::runtime_error(std::string("train: cannot write ") + path);
  csv << header << "\n" << std::setprecision(17);
  for (const StepLog& s : trace)
    csv << s.step << "," << s.lr << "," << s.loss_disc << "," << s.loss_cap << "\n";
}

}  // namespace

Example difference_example(const Tokenizer& tok, const TrainPair& pair, int k) {
  return build_example("difference_example", tok, kDifferenceInstruction, pair.difference_sentence,
                       {pair.raster_before, pair.raster_after}, k);
}

Example caption_example(const Tokenizer& tok, const CaptionExample& cap, int k) {
  return build_example("caption_example", tok, kCaptionInstruction, cap.caption, {cap.raster}, k);
}

double token_accuracy(const std::vector<int>& got, const std::vector<int>& want) {
  const std::size_t denom = std::max(got.size(), want.size());
  if (denom == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i)
    if (got[i] == want[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(denom);
}

TrainResult train(const vpgc::Backbone& backbone, vpgc::VPGCWeights& w,
                  const vpgc::VPGCConfig& vcfg, const std::vector<TrainPair>& pairs,
                  const std::vector<CaptionExample>& captions, const Tokenizer& tok,
                  const MixConfig& mix, const std::string& loss_csv_path, numkit::AdamW* opt) {
  if (mix.steps < 0 || mix.start_step < 0)
    throw std::runtime_error("train: negative step count");
  if (mix.disc_batch <= 0 || mix.cap_batch <= 0)
    throw std::runtime_error("train: batch sizes must be positive");
  auto named = vpgc::trainable_params(w, vcfg.variant);
  if (named.empty())
    throw std::runtime_error("train: variant '" + vcfg.variant + "' has nothing to train");

  TrainResult result;
  if (mix.steps == 0) {
    write_trace_csv(loss_csv_path, "step,lr,loss_disc,loss_cap", result.trace);
    return result;
  }
  if (pairs.empty() || captions.empty())
    throw std::runtime_error("train: empty dataset (pairs and captions both required)");

  const int k = backbone.dec.cfg.k;
  std::vector<Example> disc_ex, cap_ex;
  disc_ex.reserve(pairs.size());
  for (const TrainPair& p : pairs) disc_ex.push_back(difference_example(tok, p, k));
  cap_ex.reserve(captions.size());
  for (const CaptionExample& c : captions) cap_ex.push_back(caption_example(tok, c, k));

  std::vector<Tensor> params;
  for (auto& [name, t] : named) params.push_back(t);
  numkit::AdamW local_opt(params, mix.hyper);
  if (opt && opt->moments_m().size() != params.size())
    throw std::runtime_error("train: given optimizer tracks " +
                             std::to_string(opt->moments_m().size()) + " tensors, variant '" +
                             vcfg.variant + "' has " + std::to_string(params.size()));
  numkit::AdamW& optim = opt ? *opt : local_opt;
  const Rng base(mix.seed);

  auto batch_mean = [&](const std::vector<Example>& pool, int batch, Rng& sr) {
    Tensor sum;
    for (int b = 0; b < batch; ++b) {
      const Example& ex = pool[static_cast<std::size_t>(
          sr.uniform_int(0, static_cast<int>(pool.size()) - 1))];
      const vpgc::ForwardOut out =
          vpgc::vpgc_forward(ex.seq, ex.rasters, backbone, w, vcfg, ex.guidance_row);
      const Tensor loss = decoder::lm_loss(out.logits, ex.targets, ex.mask);
      sum = (b == 0) ? loss : numkit::add(sum, loss);
    }
    return numkit::scale(sum, 1.0 / batch);
  };

  for (int step = mix.start_step; step < mix.start_step + mix.steps; ++step) {
    const double lr = numkit::lr_at(step, mix.sched);
    Rng sr = base.fork(static_cast<std::uint64_t>(step));
    optim.zero_grad();

    Tensor disc = batch_mean(disc_ex, mix.disc_batch, sr);
    Tensor cap = batch_mean(cap_ex, mix.cap_batch, sr);
    const double disc_v = scalar_value(disc);
    const double cap_v = scalar_value(cap);
    if (!std::isfinite(disc_v) || !std::isfinite(cap_v))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               " (disc=" + std::to_string(disc_v) +
                               ", cap=" + std::to_string(cap_v) + ")");

    Tensor total = numkit::add(disc, cap);
    numkit::backward(total);
    optim.step(lr);
    result.trace.push_back({step, lr, disc_v, cap_v});
  }
  write_trace_csv(loss_csv_path, "step,lr,loss_disc,loss_cap", result.trace);
  return result;
}

std::string random_difference_sentence(std::uint64_t seed) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 10; ++attempt) {
    try {
      const scenegen::SceneSpec scene = scenegen::gen_scene(rng.next_u64(), scenegen::GenConfig{});
      const scenegen::ObjectSpec& target = scene.objects[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(scene.objects.size()) - 1))];
      const scenegen::EditOp edit = propose_edit(scene, target.id, rng.next_u64());
      return scenegen::describe_edit(edit, scene);
    } catch (const std::runtime_error&) {
    }
  }
  throw std::runtime_error("random_difference_sentence: no sentence after 10 attempts");
}

TrainResult pretrain_backbone(vpgc::Backbone& backbone, const std::vector<CaptionExample>& captions,
                              const Tokenizer& tok, const PretrainConfig& cfg,
                              const std::string& loss_csv_path) {
  if (cfg.steps < 0) throw std::runtime_error("pretrain_backbone: negative step count");
  if (cfg.cap_batch <= 0 || cfg.text_batch <= 0)
    throw std::runtime_error("pretrain_backbone: batch sizes must be positive");
  if (cfg.pair_batch < 0)
    throw std::runtime_error("pretrain_backbone: pair_batch must not be negative");
  if (backbone.vpg_kind != "qformer")
    throw std::runtime_error("pretrain_backbone: expects the resampler backbone, got '" +
                             backbone.vpg_kind + "'");
  if (!backbone.resampler.queries.requires_grad || !backbone.dec.tok_embed.requires_grad)
    throw std::runtime_error("pretrain_backbone: backbone is frozen; init it trainable");

  std::vector<Tensor> params;
  auto collect = [&params](const std::string&, Tensor& t) { params.push_back(t); };
  vpg::visit_params(backbone.resampler, "resampler", collect);
  decoder::visit_params(backbone.dec, "decoder", collect);
  numkit::AdamW opt(params, cfg.hyper);

  const int k = backbone.dec.cfg.k;
  TrainResult result;
  if (cfg.steps > 0) {
    if (captions.empty()) throw std::runtime_error("pretrain_backbone: empty caption set");
    std::vector<Example> cap_ex;
    cap_ex.reserve(captions.size());
    for (const CaptionExample& c : captions) cap_ex.push_back(caption_example(tok, c, k));

    const Rng base(cfg.seed);
    for (int step = 0; step < cfg.steps; ++step) {
      const double lr = numkit::lr_at(step, cfg.sched);
      Rng sr = base.fork(static_cast<std::uint64_t>(step));
      opt.zero_grad();

      // Text-only grammar stream: fresh sentences, no images, so the decoder
      // learns the difference templates without seeing any image pair.
      Tensor text_sum;
      for (int b = 0; b < cfg.text_batch; ++b) {
        const std::string sentence = random_difference_sentence(sr.next_u64());
        const Example ex = build_example("pretrain_backbone", tok, kDifferenceInstruction,
                                         sentence, {}, k);
        const decoder::Assembled asmb = decoder::assemble(ex.seq, {}, backbone.dec);
        const Tensor logits = decoder::full_forward(asmb.h0, backbone.dec);
        const Tensor loss = decoder::lm_loss(logits, ex.targets, ex.mask);
        text_sum = (b == 0) ? loss : numkit::add(text_sum, loss);
      }
      Tensor text = numkit::scale(text_sum, 1.0 / cfg.text_batch);

      Tensor cap_sum;
      for (int b = 0; b < cfg.cap_batch; ++b) {
        const Example& ex = cap_ex[static_cast<std::size_t>(
            sr.uniform_int(0, static_cast<int>(cap_ex.size()) - 1))];
        const vpg::FeatureGrid grid = vpg::encode_image(ex.rasters[0], backbone.encoder);
        const vpg::ResampleOut rs =
            vpg::resample(grid, backbone.resampler.queries, backbone.resampler);
        const decoder::Assembled asmb = decoder::assemble(ex.seq, {rs.prompts}, backbone.dec);
        const Tensor logits = decoder::full_forward(asmb.h0, backbone.dec);
        const Tensor loss = decoder::lm_loss(logits, ex.targets, ex.mask);
        cap_sum = (b == 0) ? loss : numkit::add(cap_sum, loss);
      }

      // Indexed pair-captioning stream: two images, caption the one the
      // instruction names. This is still single-image supervision, but it
      // teaches the decoder the two-image sequence layout and how to address
      // either slot group — the positions the discriminative task will use.
      for (int b = 0; b < cfg.pair_batch; ++b) {
        const CaptionExample& left = captions[static_cast<std::size_t>(
            sr.uniform_int(0, static_cast<int>(captions.size()) - 1))];
        const CaptionExample& right = captions[static_cast<std::size_t>(
            sr.uniform_int(0, static_cast<int>(captions.size()) - 1))];
        const bool second = sr.uniform_int(0, 1) == 1;
        const Example ex = build_example(
            "pretrain_backbone", tok, second ? kSecondImageInstruction : kFirstImageInstruction,
            (second ? right : left).caption, {left.raster, right.raster}, k);
        std::vector<Tensor> prompts;
        for (const scenegen::Raster& raster : ex.rasters) {
          const vpg::FeatureGrid grid = vpg::encode_image(raster, backbone.encoder);
          prompts.push_back(
              vpg::resample(grid, backbone.resampler.queries, backbone.resampler).prompts);
        }
        const decoder::Assembled asmb = decoder::assemble(ex.seq, prompts, backbone.dec);
        const Tensor logits = decoder::full_forward(asmb.h0, backbone.dec);
        const Tensor loss = decoder::lm_loss(logits, ex.targets, ex.mask);
        cap_sum = numkit::add(cap_sum, loss);
      }
      Tensor cap = numkit::scale(cap_sum, 1.0 / (cfg.cap_batch + cfg.pair_batch));

      const double text_v = scalar_value(text);
      const double cap_v = scalar_value(cap);
      if (!std::isfinite(text_v) || !std::isfinite(cap_v))
        throw std::runtime_error("pretrain_backbone: non-finite loss at step " +
                                 std::to_string(step) + " (text=" + std::to_string(text_v) +
                                 ", cap=" + std::to_string(cap_v) + ")");

      Tensor total = numkit::add(text, cap);
      numkit::backward(total);
      opt.step(lr);
      result.trace.push_back({step, lr, text_v, cap_v});
    }
  }
  write_trace_csv(loss_csv_path, "step,lr,loss_text,loss_cap", result.trace);
  vpg::freeze(backbone.resampler);
  decoder::freeze(backbone.dec);
  return result;
}

// --- checkpointing ---

void save_train_checkpoint(const std::string& path, vpgc::VPGCWeights& w,
                           const std::string& variant, numkit::AdamW& opt, int step,
                           const std::string& config_json) {
  auto named = vpgc::trainable_params(w, variant);
  if (named.size() != opt.moments_m().size())
    throw std::runtime_error("save_train_checkpoint: optimizer tracks " +
                             std::to_string(opt.moments_m().size()) + " tensors, variant '" +
                             variant + "' has " + std::to_string(named.size()));
  std::vector<std::pair<std::string, Tensor>> tensors = named;
  for (std::size_t i = 0; i < named.size(); ++i) {
    tensors.emplace_back(named[i].first + ".adam_m", opt.moments_m()[i]);
    tensors.emplace_back(named[i].first + ".adam_v", opt.moments_v()[i]);
  }
  nlohmann::json config;
  config["step"] = step;
  config["adam_step"] = opt.step_count();
  config["variant"] = variant;
  if (!config_json.empty()) config["run_config"] = nlohmann::json::parse(config_json);
  numkit::save_checkpoint(path, config, tensors);
}

namespace {

void copy_into(const char* opname, const Tensor& src, Tensor& dst, const std::string& name) {
  if (!dst.same_shape(src))
    throw std::runtime_error(std::string(opname) + ": shape mismatch for " + name + " (" +
                             src.shape_str() + " vs " + dst.shape_str() + ")");
  std::copy(src.ptr(), src.ptr() + src.numel(), dst.ptr());
}

}  // namespace

TrainCheckpoint load_train_checkpoint(const std::string& path, vpgc::VPGCWeights& w,
                                      const std::string& variant, numkit::AdamW* opt) {
  const numkit::Checkpoint cp = numkit::load_checkpoint(path);
  const std::string stored = cp.config.at("variant").get<std::string>();
  if (stored != variant)
    throw std::runtime_error("load_train_checkpoint: checkpoint holds variant '" + stored +
                             "', expected '" + variant + "'");
  auto named = vpgc::trainable_params(w, variant);
  for (auto& [name, t] : named) copy_into("load_train_checkpoint", cp.get(name), t, name);
  if (opt) {
    if (opt->moments_m().size() != named.size())
      throw std::runtime_error("load_train_checkpoint: optimizer tracks " +
                               std::to_string(opt->moments_m().size()) + " tensors, variant '" +
                               variant + "' has " + std::to_string(named.size()));
    for (std::size_t i = 0; i < named.size(); ++i) {
      copy_into("load_train_checkpoint", cp.get(named[i].first + ".adam_m"), opt->moments_m()[i],
                named[i].first + ".adam_m");
      copy_into("load_train_checkpoint", cp.get(named[i].first + ".adam_v"), opt->moments_v()[i],
                named[i].first + ".adam_v");
    }
    opt->set_step_count(cp.config.at("adam_step").get<int>());
  }
  TrainCheckpoint out;
  out.step = cp.config.at("step").get<int>();
  if (cp.config.contains("run_config")) out.config_json = cp.config.at("run_config").dump();
  return out;
}

namespace {

std::vector<std::pair<std::string, Tensor>> backbone_tensors(vpgc::Backbone& bb) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  auto collect = [&tensors](const std::string& name, Tensor& t) { tensors.emplace_back(name, t); };
  vpg::visit_params(bb.encoder, "encoder", collect);
  if (bb.vpg_kind == "qformer") vpg::visit_params(bb.resampler, "resampler", collect);
  if (bb.vpg_kind == "linear") vpg::visit_params(bb.linear_vpg, "linear_vpg", collect);
  decoder::visit_params(bb.dec, "decoder", collect);
  return tensors;
}

}  // namespace

void save_backbone(const std::string& path, vpgc::Backbone& backbone,
                   const std::string& config_json) {
  if (backbone.vpg_kind != "qformer" && backbone.vpg_kind != "linear")
    throw std::runtime_error("save_backbone: unknown vpg_kind '" + backbone.vpg_kind + "'");
  nlohmann::json config;
  config["vpg_kind"] = backbone.vpg_kind;
  config["encoder"] = {{"patch", backbone.encoder.patch},
                       {"grid_p", backbone.encoder.grid_p},
                       {"d_v", backbone.encoder.embed_w.cols()}};
  if (backbone.vpg_kind == "qformer")
    config["resampler"] = {{"k", backbone.resampler.k},
                           {"d", backbone.resampler.d},
                           {"blocks", backbone.resampler.blocks.size()}};
  if (backbone.vpg_kind == "linear")
    config["linear_vpg"] = {{"d_v", backbone.linear_vpg.w.rows()},
                            {"d", backbone.linear_vpg.w.cols()}};
  const decoder::ModelConfig& mc = backbone.dec.cfg;
  config["decoder"] = {{"layers", mc.layers}, {"d", mc.d},
                       {"heads", mc.heads},   {"vocab", mc.vocab},
                       {"k", mc.k},           {"insert_layer", mc.insert_layer},
                       {"max_seq", mc.max_seq}};
  if (!config_json.empty()) config["run_config"] = nlohmann::json::parse(config_json);
  numkit::save_checkpoint(path, config, backbone_tensors(backbone));
}

void load_backbone(const std::string& path, vpgc::Backbone& backbone) {
  const numkit::Checkpoint cp = numkit::load_checkpoint(path);
  backbone.vpg_kind = cp.config.at("vpg_kind").get<std::string>();

  const nlohmann::json& enc = cp.config.at("encoder");
  backbone.encoder = vpg::init_encoder(Rng(0), enc.at("patch").get<int>(),
                                       enc.at("grid_p").get<int>(), enc.at("d_v").get<int>());
  if (backbone.vpg_kind == "qformer") {
    const nlohmann::json& rs = cp.config.at("resampler");
    backbone.resampler = vpg::init_resampler(Rng(0), rs.at("k").get<int>(), rs.at("d").get<int>(),
                                             rs.at("blocks").get<int>(), false);
  } else if (backbone.vpg_kind == "linear") {
    const nlohmann::json& lv = cp.config.at("linear_vpg");
    backbone.linear_vpg =
        vpg::init_linear_vpg(Rng(0), lv.at("d_v").get<int>(), lv.at("d").get<int>(), false);
  } else {
    throw std::runtime_error("load_backbone: unknown vpg_kind '" + backbone.vpg_kind + "'");
  }
  const nlohmann::json& dc = cp.config.at("decoder");
  decoder::ModelConfig mc;
  mc.layers = dc.at("layers").get<int>();
  mc.d = dc.at("d").get<int>();
  mc.heads = dc.at("heads").get<int>();
  mc.vocab = dc.at("vocab").get<int>();
  mc.k = dc.at("k").get<int>();
  mc.insert_layer = dc.at("insert_layer").get<int>();
  mc.max_seq = dc.at("max_seq").get<int>();
  backbone.dec = decoder::init_decoder(Rng(0), mc, false);

  for (auto& [name, t] : backbone_tensors(backbone))
    copy_into("load_backbone", cp.get(name), t, name);
}

}  // namespace trainpipe
