#pragma once

#include <functional>
#include <string>
#include <vector>

#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"

namespace decoder {

struct ModelConfig {
  int layers = 8;
  int d = 64;
  int heads = 4;
  int vocab = 0;
  int k = 8;             // visual prompts per image
  int insert_layer = -1; // -1 means layers/2 (layers must then be even)
  int max_seq = 256;

  int resolved_insert() const;
  void validate() const;
};

/// Ordered text/image segments; images are numbered by order of appearance.
struct Segment {
  bool is_image = false;
  std::vector<int> tokens;  // TEXT
  int image_index = -1;     // IMAGE
};

struct MixedSequence {
  std::vector<Segment> segments;

  MixedSequence& add_text(std::vector<int> ids);
  MixedSequence& add_image();

  int image_count() const;
  int text_len() const;
  int length(int k) const;  // N = text tokens + k * images
};

struct Assembled {
  numkit::Tensor h0;                              // [N, d]
  std::vector<std::pair<int, int>> image_slots;   // image index -> (start, len=K)
  std::vector<int> token_at;                      // token id per position, -1 in prompt slots
};

struct LayerState {
  int layer = 0;       // layers already applied
  numkit::Tensor h;    // [N, d]
};

/// One attention head's projections: [d,dh] q/k/v and a [dh,d] output map.
struct HeadWeights {
  numkit::Tensor wq, wk, wv, wo;
};

struct DecoderBlock {
  std::vector<HeadWeights> heads;
  numkit::Tensor attn_bias;  // [d], added once after summing head outputs
  numkit::Tensor w1, b1, w2, b2;
  numkit::Tensor ln1g, ln1b, ln2g, ln2b;
};

/// Pre-norm causal transformer with learned absolute position codes and a
/// zero-initialized output head (uniform logits at step zero).
struct DecoderWeights {
  ModelConfig cfg;
  numkit::Tensor tok_embed;  // [V, d]
  numkit::Tensor pos_embed;  // [max_seq, d]
  std::vector<DecoderBlock> blocks;
  numkit::Tensor final_ln_g, final_ln_b;
  numkit::Tensor lm_head;    // [d, V]
  numkit::Tensor lm_bias;    // [V]
};

DecoderWeights init_decoder(numkit::Rng rng, const ModelConfig& cfg, bool trainable);
void freeze(DecoderWeights& w);
void visit_params(DecoderWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, numkit::Tensor&)>& fn);
std::size_t count_params(DecoderWeights& w);

/// Token embeddings plus position codes; each image's K prompt rows are
/// spliced verbatim into their slots (position codes still added).
Assembled assemble(const MixedSequence& seq, const std::vector<numkit::Tensor>& prompts,
                   const DecoderWeights& w);

/// Applies layers [0, l) with causal masking. l = 0 returns the input.
LayerState forward_to(const numkit::Tensor& h0, int l, const DecoderWeights& w);

/// Applies layers [state.layer, L), the final norm and the output head.
/// l_start must match the state's layer counter.
numkit::Tensor forward_from(const LayerState& state, int l_start, const DecoderWeights& w);

/// Unsplit pass; bitwise-equal to forward_from(forward_to(h0, l), l) for any l.
numkit::Tensor full_forward(const numkit::Tensor& h0, const DecoderWeights& w);

/// Mean next-token cross-entropy over the masked positions.
numkit::Tensor lm_loss(const numkit::Tensor& logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask);

/// Diagnostic counter: transformer-block applications on this thread since
/// the last reset. A single full pass over L layers adds exactly L.
std::int64_t layer_calls();
void reset_layer_calls();

/// Argmax continuation (ties break to the lowest id) until <eos> or max_new
/// tokens; returns the generated ids without the <eos>.
std::vector<int> greedy_decode(const MixedSequence& prefix, const std::vector<numkit::Tensor>& prompts,
                               const DecoderWeights& w, int eos_id, int max_new);

}  // namespace decoder
