#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "decoder/tokenizer.hpp"
#include "numkit/optim.hpp"
#include "numkit/tensor.hpp"
#include "scenegen/scenegen.hpp"
#include "vpgc/vpgc.hpp"

namespace trainpipe {

// --- attention-driven target selection ---

struct ObjectSignificance {
  int object_id = 0;
  double phi = 0.0;
};

struct SignificanceReport {
  std::vector<ObjectSignificance> objects;
};

/// Upsamples the global attention map (flat P*P, cell-replicated to the
/// raster size so grid-aligned regions average exactly) and takes the mean
/// over each object's visible pixels. Rejects empty masks.
SignificanceReport significance(const numkit::Tensor& a, int p,
                                const std::vector<scenegen::ObjectMask>& masks);

/// The least-attended object: argmin phi, ties to the lowest object id.
int select_target(const SignificanceReport& report);

/// Rule-based edit proposal. The kind is drawn uniformly; SWAP needs a
/// second object and ADD needs background space, otherwise the kind is
/// redrawn. MODIFY changes exactly one attribute to a different value; ADD
/// places a fresh (color, shape) entirely on background pixels.
scenegen::EditOp propose_edit(const scenegen::SceneSpec& scene, int target_id, std::uint64_t seed);

// --- dataset construction ---

struct TrainPair {
  scenegen::SceneSpec before;
  scenegen::SceneSpec after;
  scenegen::EditOp edit;
  int target_id = -1;  // the significance pick (ADD keeps it for the record)
  std::string difference_sentence;
  std::string caption_before;
  scenegen::Raster raster_before;
  scenegen::Raster raster_after;
};

struct BuildStats {
  int written = 0;
  int skipped = 0;
};

/// Runs the full pipeline per pair: scene → render → encode → resample →
/// global attention → significance → target → edit → re-render → sentence.
/// Writes scene JSONs plus manifest.jsonl under out_dir. Per-scene failures
/// are skipped and counted. Byte-identical for identical (seed, config).
BuildStats build_dataset(int n_pairs, const vpgc::Backbone& backbone,
                         const scenegen::GenConfig& gen, std::uint64_t seed,
                         const std::string& out_dir);

/// Reads a manifest back, re-renders both rasters and re-validates the
/// TrainPair invariants (sentence matches the edit, dims agree).
std::vector<TrainPair> load_dataset(const std::string& manifest_path);

struct CaptionExample {
  scenegen::SceneSpec scene;
  scenegen::Raster raster;
  std::string caption;
};

std::vector<CaptionExample> make_caption_set(int n, const scenegen::GenConfig& gen,
                                             std::uint64_t seed);

// --- vocabulary & example building ---

/// Every word the scene grammar can produce (colors, shapes, regions,
/// templates, instructions) — the closed training vocabulary.
std::vector<std::string> vocabulary_words();
decoder::Tokenizer make_tokenizer();

/// One teacher-forced training example: the assembled mixed sequence, the
/// next-token targets, the supervision mask (response tokens plus <eos>),
/// and the guidance row (the response marker's position).
struct Example {
  decoder::MixedSequence seq;
  std::vector<scenegen::Raster> rasters;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::vector<int> response_ids;  // without the <eos>
  int guidance_row = -1;
};

extern const char* const kDifferenceInstruction;   // "describe the difference between the images"
extern const char* const kCaptionInstruction;      // "describe the image"
extern const char* const kFirstImageInstruction;   // "describe the first image"
extern const char* const kSecondImageInstruction;  // "describe the second image"

Example difference_example(const decoder::Tokenizer& tok, const TrainPair& pair, int k);
Example caption_example(const decoder::Tokenizer& tok, const CaptionExample& cap, int k);

/// Exact-match rate between aligned positions (length mismatches count
/// against the score; both empty scores 1).
double token_accuracy(const std::vector<int>& got, const std::vector<int>& want);

// --- training ---

struct MixConfig {
  int disc_batch = 3;  // mirrors the 24:64 synthetic-to-caption ratio
  int cap_batch = 8;
  int steps = 0;       // steps to run in this call
  int start_step = 0;  // global index of the first step (resume support)
  std::uint64_t seed = 0;
  numkit::LrSchedule sched;
  numkit::AdamWHyper hyper;
};

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double loss_disc = 0.0;
  double loss_cap = 0.0;
};

struct TrainResult {
  std::vector<StepLog> trace;
};

/// Joint discriminative + captioning training of the add-on weights only.
/// Per step: one batch of each, losses summed, one AdamW update. Batches are
/// drawn from a per-step stream hashed from (seed, global step), so a run
/// resumed from a checkpoint replays exactly the steps a single run would
/// have taken. Writes the loss trace CSV when a path is given. NaN losses
/// abort with step diagnostics. When `opt` is given it must track the
/// variant's trainable tensors (pass it to resume with restored moments and
/// to checkpoint afterwards); otherwise a fresh optimizer is used.
TrainResult train(const vpgc::Backbone& backbone, vpgc::VPGCWeights& w,
                  const vpgc::VPGCConfig& vcfg, const std::vector<TrainPair>& pairs,
                  const std::vector<CaptionExample>& captions, const decoder::Tokenizer& tok,
                  const MixConfig& mix, const std::string& loss_csv_path,
                  numkit::AdamW* opt = nullptr);

// --- backbone pretraining ---

struct PretrainConfig {
  int cap_batch = 8;
  int pair_batch = 8;  // two-image indexed captioning; 0 disables the stream
  int text_batch = 8;
  int steps = 0;
  std::uint64_t seed = 0;
  numkit::LrSchedule sched;
  numkit::AdamWHyper hyper;
};

/// Teaches the frozen-to-be backbone its three competences: captioning
/// through the resampler, addressing either image of a two-image sequence
/// (caption the image the instruction names — still single-image content,
/// but the layout and positions of the discriminative task), and the
/// difference-sentence grammar from text alone (random attribute fillers, no
/// images, so nothing discriminative leaks). The caption and pair streams
/// share the loss_cap column. Trains resampler + decoder; the patch encoder
/// stays frozen. Freezes everything on return.
TrainResult pretrain_backbone(vpgc::Backbone& backbone, const std::vector<CaptionExample>& captions,
                              const decoder::Tokenizer& tok, const PretrainConfig& cfg,
                              const std::string& loss_csv_path);

/// A difference sentence over a random scene with a uniformly chosen target
/// (no attention in the loop) — pretraining's text-only grammar stream.
std::string random_difference_sentence(std::uint64_t seed);

// --- checkpointing ---

void save_train_checkpoint(const std::string& path, vpgc::VPGCWeights& w,
                           const std::string& variant, numkit::AdamW& opt, int step,
                           const std::string& config_json);

struct TrainCheckpoint {
  int step = 0;
  std::string config_json;
};

/// Restores weights and optimizer moments in place; returns the stored step.
TrainCheckpoint load_train_checkpoint(const std::string& path, vpgc::VPGCWeights& w,
                                      const std::string& variant, numkit::AdamW* opt);

void save_backbone(const std::string& path, vpgc::Backbone& backbone,
                   const std::string& config_json);
void load_backbone(const std::string& path, vpgc::Backbone& backbone);

}  // namespace trainpipe
