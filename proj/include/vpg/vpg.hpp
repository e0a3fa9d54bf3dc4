#pragma once

#include <functional>
#include <string>
#include <vector>

#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"
#include "scenegen/scenegen.hpp"

namespace vpg {

/// P x P grid of d_v-wide patch features, cells flattened row-major.
struct FeatureGrid {
  int p = 0;
  numkit::Tensor features;  // [P*P, d_v]
};

struct EncoderWeights {
  int patch = 8;
  int grid_p = 8;
  numkit::Tensor embed_w;   // [patch*patch*3, d_v]
  numkit::Tensor embed_b;   // [d_v]
  numkit::Tensor pos_code;  // [P*P, d_v], fixed 2-D positional code
};

/// Single-head attention projections; used for both cross- and self-attention.
struct AttnWeights {
  numkit::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnWeights {
  numkit::Tensor w1, b1, w2, b2;  // d -> 4d -> d, GELU between
};

struct ResamplerBlock {
  AttnWeights cross;
  AttnWeights self_attn;
  FfnWeights ffn;
  numkit::Tensor ln1g, ln1b, ln2g, ln2b, ln3g, ln3b;
};

/// Q-former-style resampler: a query bank refined by alternating
/// cross-attention (into the feature grid), self-attention and feed-forward
/// blocks, then projected to decoder width.
struct ResamplerWeights {
  int k = 8;
  int d = 64;
  numkit::Tensor queries;  // [K, d]
  std::vector<ResamplerBlock> blocks;
  numkit::Tensor final_ln_g, final_ln_b;
  numkit::Tensor out_w, out_b;  // explicit output projection to decoder width
  bool frozen = false;
};

/// Post-softmax cross-attention maps: maps[layer] is [K, P*P], detached.
struct AttentionTrace {
  int p = 0;
  std::vector<numkit::Tensor> maps;
};

struct ResampleOut {
  numkit::Tensor prompts;  // [K, d]
  AttentionTrace trace;
};

struct LinearVpgWeights {
  numkit::Tensor w;  // [d_v, d]
  numkit::Tensor b;  // [d]
};

// --- construction / freezing ---

EncoderWeights init_encoder(numkit::Rng rng, int patch, int grid_p, int d_v);
ResamplerWeights init_resampler(numkit::Rng rng, int k, int d, int n_blocks, bool trainable);
LinearVpgWeights init_linear_vpg(numkit::Rng rng, int d_v, int d, bool trainable);

/// Drops gradient slots and marks every tensor as a constant.
void freeze(ResamplerWeights& w);
void freeze(LinearVpgWeights& w);

void visit_params(ResamplerWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, numkit::Tensor&)>& fn);
void visit_params(EncoderWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, numkit::Tensor&)>& fn);
void visit_params(LinearVpgWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, numkit::Tensor&)>& fn);

// --- operations ---

/// Frozen linear embed of each patch's pixels (scaled to [0,1]) plus the
/// cell's positional code. Pure and local: a patch only affects its own cell.
FeatureGrid encode_image(const scenegen::Raster& raster, const EncoderWeights& w);

struct AttnResult {
  numkit::Tensor out;      // [Nq, d]
  numkit::Tensor weights;  // [Nq, Nkv] post-softmax rows
};

/// out = softmax((q Wq + bq)(kv Wk + bk)^T / sqrt(d)) (kv Wv + bv) Wo + bo.
AttnResult single_head_attention(const numkit::Tensor& q_rows, const numkit::Tensor& kv_rows,
                                 const AttnWeights& w);

/// Runs the resampler over one image's features with the given queries
/// (usually w.queries; VPG-C passes conditioned copies). Records every
/// cross-attention map.
ResampleOut resample(const FeatureGrid& grid, const numkit::Tensor& queries,
                     const ResamplerWeights& w);

/// A[p] = mean over (layer, query) of trace maps; sums to 1.
numkit::Tensor avg_attention(const AttentionTrace& trace);

/// One prompt per grid cell: the feature's linear projection (K := P*P).
numkit::Tensor linear_vpg(const FeatureGrid& grid, const LinearVpgWeights& w);

// --- diagnostics ---

/// CSV rows (layer, query, row, col, weight).
void dump_attention_csv(const AttentionTrace& trace, const std::string& path);

/// Grayscale P6 heatmap of a flattened P*P map, normalized by its max.
void write_heatmap_ppm(const std::string& path, const numkit::Tensor& map, int p);

}  // namespace vpg
