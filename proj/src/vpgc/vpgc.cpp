#include "vpgc/vpgc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "numkit/ops.hpp"

namespace vpgc {

using decoder::Assembled;
using decoder::LayerState;
using decoder::MixedSequence;
using numkit::Rng;
using numkit::Tensor;

namespace {

Tensor normal_tensor(Rng& rng, std::vector<int> shape, double stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t.ptr()[i] = rng.normal(0.0, stddev);
  return t;
}

/// x W^T + b for an [out, in] matrix, keeping the stored-matrix convention
/// of the guidance/reintegration linears.
Tensor apply_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return numkit::add_row(numkit::matmul(x, numkit::transpose(w)), b);
}

void check_slots(const std::vector<std::pair<int, int>>& slots, int n, std::size_t deltas) {
  if (slots.size() != deltas)
    throw std::runtime_error("reintegrate: " + std::to_string(deltas) + " detail sets for " +
                             std::to_string(slots.size()) + " image slots");
  std::vector<std::pair<int, int>> sorted = slots;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto [start, len] = sorted[i];
    if (start < 0 || len <= 0 || start + len > n)
      throw std::runtime_error("reintegrate: slot [" + std::to_string(start) + "," +
                               std::to_string(start + len) + ") outside sequence of length " +
                               std::to_string(n));
    if (i > 0 && sorted[i - 1].first + sorted[i - 1].second > start)
      throw std::runtime_error("reintegrate: slots overlap at position " + std::to_string(start));
  }
}

}  // namespace

void validate_variant(const std::string& variant) {
  if (variant != "qformer" && variant != "linear" && variant != "heuristic" && variant != "off")
    throw std::runtime_error("vpgc: unknown variant '" + variant +
                             "' (expected qformer, linear, heuristic or off)");
}

VPGCWeights init_vpgc(Rng rng, const vpg::ResamplerWeights& resampler, int d_v,
                      bool zero_init_both) {
  VPGCWeights w;
  w.k = resampler.k;
  w.d = resampler.d;
  const int d = w.d;

  // Start the new queries where the frozen bank already works, nudged so the
  // two banks can drift apart during training.
  w.q_new = Tensor(std::vector<int>{w.k, d}, true);
  for (std::size_t i = 0; i < w.q_new.numel(); ++i)
    w.q_new.ptr()[i] = resampler.queries.ptr()[i] + rng.normal(0.0, 0.01);

  if (zero_init_both)
    w.w_g = Tensor::zeros({d, d}, true);
  else
    w.w_g = normal_tensor(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), true);
  w.b_g = Tensor::zeros({d}, true);
  // The reintegration linear must start at zero so a fresh mechanism cannot
  // disturb the backbone.
  w.w_r = Tensor::zeros({d, d}, true);
  w.b_r = Tensor::zeros({d}, true);

  w.lin_w1 = normal_tensor(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), true);
  w.lin_b1 = Tensor::zeros({d}, true);
  w.lin_w2 = normal_tensor(rng, {d, d_v}, 1.0 / std::sqrt(static_cast<double>(d_v)), true);
  w.lin_b2 = Tensor::zeros({d}, true);
  w.heur_w = normal_tensor(rng, {d, d_v}, 1.0 / std::sqrt(static_cast<double>(d_v)), true);
  w.heur_b = Tensor::zeros({d}, true);
  return w;
}

std::vector<std::pair<std::string, Tensor>> trainable_params(VPGCWeights& w,
                                                             const std::string& variant) {
  validate_variant(variant);
  std::vector<std::pair<std::string, Tensor>> out;
  if (variant == "qformer") {
    out = {{"vpgc.q_new", w.q_new}, {"vpgc.w_g", w.w_g}, {"vpgc.b_g", w.b_g},
           {"vpgc.w_r", w.w_r},     {"vpgc.b_r", w.b_r}};
  } else if (variant == "linear") {
    out = {{"vpgc.lin_w1", w.lin_w1}, {"vpgc.lin_b1", w.lin_b1}, {"vpgc.lin_w2", w.lin_w2},
           {"vpgc.lin_b2", w.lin_b2}, {"vpgc.w_g", w.w_g},       {"vpgc.b_g", w.b_g},
           {"vpgc.w_r", w.w_r},       {"vpgc.b_r", w.b_r}};
  } else if (variant == "heuristic") {
    out = {{"vpgc.heur_w", w.heur_w}, {"vpgc.heur_b", w.heur_b}};
  }
  return out;  // "off" trains nothing
}

std::size_t count_params(const VPGCWeights& w) {
  return w.q_new.numel() + w.w_g.numel() + w.b_g.numel() + w.w_r.numel() + w.b_r.numel();
}

Tensor extract_guidance(const LayerState& state, int insert_layer, const VPGCWeights& w, int row) {
  if (state.layer != insert_layer)
    throw std::runtime_error("extract_guidance: state is at layer " + std::to_string(state.layer) +
                             ", expected " + std::to_string(insert_layer));
  if (state.h.rows() < 1) throw std::runtime_error("extract_guidance: empty state");
  const int at = row < 0 ? state.h.rows() - 1 : row;
  if (at >= state.h.rows())
    throw std::runtime_error("extract_guidance: row " + std::to_string(at) +
                             " outside state of " + std::to_string(state.h.rows()) + " rows");
  const Tensor h_last = numkit::slice_rows(state.h, at, 1);
  return apply_linear(h_last, w.w_g, w.b_g);
}

Tensor condition_queries(const Tensor& g, const Tensor& q_new) {
  if (static_cast<int>(g.numel()) != q_new.cols())
    throw std::runtime_error("condition_queries: guidance " + g.shape_str() +
                             " does not span query width " + std::to_string(q_new.cols()));
  return numkit::add_row(q_new, g);
}

std::vector<vpg::ResampleOut> complete_details(const std::vector<vpg::FeatureGrid>& grids,
                                               const Tensor& conditioned,
                                               const vpg::ResamplerWeights& resampler) {
  std::vector<vpg::ResampleOut> out;
  out.reserve(grids.size());
  for (const auto& grid : grids) out.push_back(vpg::resample(grid, conditioned, resampler));
  return out;
}

LayerState add_into_slots(const LayerState& state, const std::vector<std::pair<int, int>>& slots,
                          const std::vector<Tensor>& deltas) {
  check_slots(slots, state.h.rows(), deltas.size());
  LayerState out = state;
  for (std::size_t j = 0; j < slots.size(); ++j) {
    const auto [start, len] = slots[j];
    if (deltas[j].rows() != len || deltas[j].cols() != state.h.cols())
      throw std::runtime_error("reintegrate: details " + deltas[j].shape_str() + " for a slot of " +
                               std::to_string(len) + " rows and width " +
                               std::to_string(state.h.cols()));
    out.h = numkit::add_rows(out.h, start, deltas[j]);
  }
  return out;
}

LayerState reintegrate(const LayerState& state, const std::vector<std::pair<int, int>>& slots,
                       const std::vector<Tensor>& v_bars, const VPGCWeights& w) {
  std::vector<Tensor> deltas;
  deltas.reserve(v_bars.size());
  for (const auto& v_bar : v_bars) deltas.push_back(apply_linear(v_bar, w.w_r, w.b_r));
  return add_into_slots(state, slots, deltas);
}

Tensor heuristic_details(const vpg::AttentionTrace& trace, const vpg::FeatureGrid& grid,
                         double bottom_fraction, const VPGCWeights& w) {
  if (!(bottom_fraction > 0.0) || bottom_fraction > 1.0)
    throw std::runtime_error("heuristic_details: bottom_fraction " +
                             std::to_string(bottom_fraction) + " outside (0, 1]");
  const Tensor a = vpg::avg_attention(trace);
  const int cells = static_cast<int>(a.numel());
  if (cells != grid.features.rows())
    throw std::runtime_error("heuristic_details: trace covers " + std::to_string(cells) +
                             " cells, grid has " + std::to_string(grid.features.rows()));
  const int take = static_cast<int>(std::ceil(bottom_fraction * cells));

  std::vector<int> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int lhs, int rhs) { return a.ptr()[lhs] < a.ptr()[rhs]; });

  // Pool the least-attended cells. The grid is frozen data, so the mean can
  // be computed outside the graph; only the projection trains.
  const int d_v = grid.features.cols();
  Tensor pooled(std::vector<int>{1, d_v});
  for (int i = 0; i < take; ++i)
    for (int c = 0; c < d_v; ++c) pooled(0, c) += grid.features(order[static_cast<std::size_t>(i)], c);
  for (int c = 0; c < d_v; ++c) pooled(0, c) /= static_cast<double>(take);

  return apply_linear(pooled, w.heur_w, w.heur_b);
}

Tensor linear_details(const Tensor& g, const vpg::FeatureGrid& grid, const VPGCWeights& w) {
  const Tensor u = apply_linear(g, w.lin_w1, w.lin_b1);
  const Tensor x2 = apply_linear(grid.features, w.lin_w2, w.lin_b2);
  return numkit::mul_row(x2, u);
}

ForwardOut vpgc_forward(const MixedSequence& seq, const std::vector<scenegen::Raster>& rasters,
                        const Backbone& backbone, const VPGCWeights& w, const VPGCConfig& cfg,
                        int guidance_row) {
  validate_variant(cfg.variant);
  if (backbone.vpg_kind != "qformer" && backbone.vpg_kind != "linear")
    throw std::runtime_error("vpgc_forward: unknown backbone vpg kind '" + backbone.vpg_kind + "'");
  if ((cfg.variant == "qformer" || cfg.variant == "heuristic") && backbone.vpg_kind != "qformer")
    throw std::runtime_error("vpgc_forward: variant '" + cfg.variant +
                             "' needs a qformer backbone");
  if (cfg.variant == "linear" && backbone.vpg_kind != "linear")
    throw std::runtime_error("vpgc_forward: the linear variant needs a linear-VPG backbone");
  if (static_cast<int>(rasters.size()) != seq.image_count())
    throw std::runtime_error("vpgc_forward: " + std::to_string(rasters.size()) + " rasters for " +
                             std::to_string(seq.image_count()) + " image segments");

  const std::int64_t calls_before = decoder::layer_calls();
  ForwardOut out;

  std::vector<vpg::FeatureGrid> grids;
  std::vector<Tensor> prompts;
  grids.reserve(rasters.size());
  prompts.reserve(rasters.size());
  for (const auto& raster : rasters) {
    grids.push_back(vpg::encode_image(raster, backbone.encoder));
    if (backbone.vpg_kind == "qformer") {
      vpg::ResampleOut r = vpg::resample(grids.back(), backbone.resampler.queries, backbone.resampler);
      prompts.push_back(r.prompts);
      out.traces.push_back(std::move(r.trace));
    } else {
      prompts.push_back(vpg::linear_vpg(grids.back(), backbone.linear_vpg));
    }
  }

  out.assembled = decoder::assemble(seq, prompts, backbone.dec);

  if (cfg.variant == "off") {
    out.logits = decoder::full_forward(out.assembled.h0, backbone.dec);
    out.layer_calls = decoder::layer_calls() - calls_before;
    return out;
  }

  const int insert =
      cfg.insert_layer >= 0 ? cfg.insert_layer : backbone.dec.cfg.resolved_insert();
  if (insert < 1 || insert >= backbone.dec.cfg.layers)
    throw std::runtime_error("vpgc_forward: insert layer " + std::to_string(insert) +
                             " outside [1, " + std::to_string(backbone.dec.cfg.layers - 1) + "]");

  LayerState mid = decoder::forward_to(out.assembled.h0, insert, backbone.dec);

  LayerState patched = mid;
  if (cfg.variant == "heuristic") {
    // No guidance: pool each image's least-attended cells and add the
    // projected row to every prompt slot of that image.
    Tensor ones_k = Tensor::zeros({backbone.dec.cfg.k, 1});
    for (std::size_t i = 0; i < ones_k.numel(); ++i) ones_k.ptr()[i] = 1.0;
    std::vector<Tensor> deltas;
    for (std::size_t j = 0; j < grids.size(); ++j) {
      const Tensor row = heuristic_details(out.traces[j], grids[j], cfg.bottom_fraction, w);
      deltas.push_back(numkit::matmul(ones_k, row));
    }
    patched = add_into_slots(mid, out.assembled.image_slots, deltas);
  } else {
    out.guidance = extract_guidance(mid, insert, w, guidance_row);
    std::vector<Tensor> v_bars;
    if (cfg.variant == "qformer") {
      const Tensor conditioned = condition_queries(out.guidance, w.q_new);
      for (auto& r : complete_details(grids, conditioned, backbone.resampler))
        v_bars.push_back(r.prompts);
    } else {  // linear
      for (const auto& grid : grids) v_bars.push_back(linear_details(out.guidance, grid, w));
    }
    patched = reintegrate(mid, out.assembled.image_slots, v_bars, w);
  }

  out.logits = decoder::forward_from(patched, insert, backbone.dec);
  out.layer_calls = decoder::layer_calls() - calls_before;
  return out;
}

std::vector<int> generate(const MixedSequence& prefix, const std::vector<scenegen::Raster>& rasters,
                          const Backbone& backbone, const VPGCWeights& w, const VPGCConfig& cfg,
                          int eos_id, int max_new) {
  numkit::NoGradGuard ng;
  const int guidance_row = prefix.length(backbone.dec.cfg.k) - 1;
  std::vector<int> generated;
  for (int step = 0; step < max_new; ++step) {
    MixedSequence seq = prefix;
    if (!generated.empty()) seq.add_text(generated);
    if (seq.length(backbone.dec.cfg.k) >= backbone.dec.cfg.max_seq) break;
    const Tensor logits = vpgc_forward(seq, rasters, backbone, w, cfg, guidance_row).logits;
    const int last = logits.rows() - 1;
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v)
      if (logits(last, v) > logits(last, best)) best = v;
    if (best == eos_id) break;
    generated.push_back(best);
  }
  return generated;
}

}  // namespace vpgc
