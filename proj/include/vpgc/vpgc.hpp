#pragma once

#include <string>
#include <utility>
#include <vector>

#include "decoder/decoder.hpp"
#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"
#include "scenegen/scenegen.hpp"
#include "vpg/vpg.hpp"

namespace vpgc {

/// The frozen stack the mechanism plugs into: patch encoder, one VPG
/// (resampler or plain linear), and the language decoder.
struct Backbone {
  vpg::EncoderWeights encoder;
  vpg::ResamplerWeights resampler;    // used when vpg_kind == "qformer"
  vpg::LinearVpgWeights linear_vpg;   // used when vpg_kind == "linear"
  decoder::DecoderWeights dec;
  std::string vpg_kind = "qformer";
};

/// The trainable add-on. Core fields (q_new, w_g/b_g, w_r/b_r) drive the
/// main mechanism; the lin_* and heur_* tensors back the two ablation
/// variants. Weight matrices are stored [out, in] and applied as x W^T + b.
struct VPGCWeights {
  int k = 0;
  int d = 0;
  numkit::Tensor q_new;       // [K, d], frozen query bank plus small noise
  numkit::Tensor w_g, b_g;    // guidance linear, zero-init by default
  numkit::Tensor w_r, b_r;    // reintegration linear, always zero-init

  numkit::Tensor lin_w1, lin_b1;  // linear variant: applied to the guidance
  numkit::Tensor lin_w2, lin_b2;  // linear variant: applied per grid cell
  numkit::Tensor heur_w, heur_b;  // heuristic variant's pooled projection
};

struct VPGCConfig {
  int insert_layer = -1;         // -1 means the decoder's midpoint
  bool zero_init_both = true;    // zero w_g as well as w_r
  double bottom_fraction = 0.5;  // heuristic variant
  std::string variant = "qformer";  // qformer | linear | heuristic | off
};

void validate_variant(const std::string& variant);

/// All tensors trainable; w_r (and w_g unless zero_init_both=false) zeroed.
VPGCWeights init_vpgc(numkit::Rng rng, const vpg::ResamplerWeights& resampler, int d_v,
                      bool zero_init_both);

/// The tensors the optimizer may touch for a variant, in a stable order.
std::vector<std::pair<std::string, numkit::Tensor>> trainable_params(VPGCWeights& w,
                                                                     const std::string& variant);

/// Closed-form size of the core mechanism: K*d + 2*(d*d + d).
std::size_t count_params(const VPGCWeights& w);

/// g = W_g h + b_g where h is the hidden row of the last input token at the
/// intercept layer. Returns a [1, d] row. `row` defaults to the final
/// position; teacher-forced training passes the response-marker position so
/// guidance comes from the same place it will at generation time.
numkit::Tensor extract_guidance(const decoder::LayerState& state, int insert_layer,
                                const VPGCWeights& w, int row = -1);

/// Adds g to every row of the new query bank.
numkit::Tensor condition_queries(const numkit::Tensor& g, const numkit::Tensor& q_new);

/// Re-drives the frozen resampler once per image with the conditioned
/// queries; also returns each run's attention trace.
std::vector<vpg::ResampleOut> complete_details(const std::vector<vpg::FeatureGrid>& grids,
                                               const numkit::Tensor& conditioned,
                                               const vpg::ResamplerWeights& resampler);

/// Adds the given per-image deltas into the image slots; every other row is
/// carried over bit-identically. Slots must be disjoint and in range.
decoder::LayerState add_into_slots(const decoder::LayerState& state,
                                   const std::vector<std::pair<int, int>>& slots,
                                   const std::vector<numkit::Tensor>& deltas);

/// Slot rows become V + (v_bar W_r^T + b_r); zero W_r leaves the state as-is.
decoder::LayerState reintegrate(const decoder::LayerState& state,
                                const std::vector<std::pair<int, int>>& slots,
                                const std::vector<numkit::Tensor>& v_bars, const VPGCWeights& w);

/// Bottom-attention ablation: mean of the ceil(fraction * P^2) least-attended
/// cells (ties row-major), projected through the dedicated linear. [1, d].
numkit::Tensor heuristic_details(const vpg::AttentionTrace& trace, const vpg::FeatureGrid& grid,
                                 double bottom_fraction, const VPGCWeights& w);

/// Appendix variant: V_bar = (W1 g + b1, broadcast) ⊙ (W2 X + b2), one row
/// per grid cell.
numkit::Tensor linear_details(const numkit::Tensor& g, const vpg::FeatureGrid& grid,
                              const VPGCWeights& w);

struct ForwardOut {
  numkit::Tensor logits;                      // [N, vocab]
  numkit::Tensor guidance;                    // [1, d]; empty for heuristic/off
  std::vector<vpg::AttentionTrace> traces;    // initial resample, per image (qformer backbones)
  decoder::Assembled assembled;
  std::int64_t layer_calls = 0;               // block applications in this forward
};

/// End-to-end pass: encode → VPG → assemble → run to the intercept layer →
/// guidance → conditioned re-resample (or variant) → reintegrate → finish.
/// Each decoder layer executes exactly once. guidance_row = -1 reads the
/// guidance at the last position (generation); training passes the response
/// marker's position explicitly.
ForwardOut vpgc_forward(const decoder::MixedSequence& seq,
                        const std::vector<scenegen::Raster>& rasters, const Backbone& backbone,
                        const VPGCWeights& w, const VPGCConfig& cfg, int guidance_row = -1);

/// Greedy continuation through the full mechanism: each step re-runs
/// vpgc_forward on prefix + generated tokens, keeping the guidance pinned to
/// the prefix's last position. Stops at eos_id or after max_new tokens.
std::vector<int> generate(const decoder::MixedSequence& prefix,
                          const std::vector<scenegen::Raster>& rasters, const Backbone& backbone,
                          const VPGCWeights& w, const VPGCConfig& cfg, int eos_id, int max_new);

}  // namespace vpgc
