#include "decoder/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "numkit/ops.hpp"

namespace decoder {

using numkit::Rng;
using numkit::Tensor;

int ModelConfig::resolved_insert() const {
  if (insert_layer >= 0) return insert_layer;
  if (layers % 2 != 0)
    throw std::runtime_error("model config: layer count " + std::to_string(layers) +
                             " must be even when insert_layer is defaulted");
  return layers / 2;
}

void ModelConfig::validate() const {
  if (layers < 2) throw std::runtime_error("model config: need at least two layers");
  if (d <= 0 || heads <= 0 || vocab <= 0 || k <= 0 || max_seq <= 0)
    throw std::runtime_error("model config: dims must be positive");
  if (d % heads != 0)
    throw std::runtime_error("model config: width " + std::to_string(d) +
                             " not divisible by heads " + std::to_string(heads));
  const int ins = resolved_insert();
  if (ins < 1 || ins >= layers)
    throw std::runtime_error("model config: insert layer " + std::to_string(ins) +
                             " outside [1, " + std::to_string(layers - 1) + "]");
}

MixedSequence& MixedSequence::add_text(std::vector<int> ids) {
  Segment s;
  s.is_image = false;
  s.tokens = std::move(ids);
  segments.push_back(std::move(s));
  return *this;
}

MixedSequence& MixedSequence::add_image() {
  Segment s;
  s.is_image = true;
  s.image_index = image_count();
  segments.push_back(std::move(s));
  return *this;
}

int MixedSequence::image_count() const {
  int n = 0;
  for (const auto& s : segments) n += s.is_image ? 1 : 0;
  return n;
}

int MixedSequence::text_len() const {
  int n = 0;
  for (const auto& s : segments)
    if (!s.is_image) n += static_cast<int>(s.tokens.size());
  return n;
}

int MixedSequence::length(int k) const { return text_len() + k * image_count(); }

namespace {

Tensor normal_tensor(Rng& rng, std::vector<int> shape, double stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t.ptr()[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor const_tensor(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t.ptr()[i] = value;
  return t;
}

Tensor affine_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  return numkit::add_row(numkit::mul_row(numkit::layernorm_rows(x), g), b);
}

/// Additive mask: 0 on and below the diagonal, a large negative constant
/// above it, so masked scores underflow to exactly zero after softmax.
Tensor causal_mask(int n) {
  Tensor m = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = -1e30;
  return m;
}

thread_local std::int64_t g_layer_calls = 0;

Tensor run_block(const Tensor& x, const DecoderBlock& blk, const Tensor& mask) {
  ++g_layer_calls;
  const Tensor a_in = affine_norm(x, blk.ln1g, blk.ln1b);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(blk.heads.front().wq.cols()));
  Tensor attn_sum;
  for (std::size_t h = 0; h < blk.heads.size(); ++h) {
    const HeadWeights& hw = blk.heads[h];
    const Tensor q = numkit::matmul(a_in, hw.wq);
    const Tensor k = numkit::matmul(a_in, hw.wk);
    const Tensor v = numkit::matmul(a_in, hw.wv);
    const Tensor scores =
        numkit::add(numkit::scale(numkit::matmul(q, numkit::transpose(k)), inv_sqrt_dh), mask);
    const Tensor mixed = numkit::matmul(numkit::softmax_rows(scores), v);
    const Tensor contrib = numkit::matmul(mixed, hw.wo);
    attn_sum = h == 0 ? contrib : numkit::add(attn_sum, contrib);
  }
  Tensor y = numkit::add(x, numkit::add_row(attn_sum, blk.attn_bias));
  const Tensor f_in = affine_norm(y, blk.ln2g, blk.ln2b);
  const Tensor hidden = numkit::gelu(numkit::add_row(numkit::matmul(f_in, blk.w1), blk.b1));
  return numkit::add(y, numkit::add_row(numkit::matmul(hidden, blk.w2), blk.b2));
}

Tensor run_layers(Tensor x, int from, int to, const DecoderWeights& w) {
  if (from == to) return x;
  const Tensor mask = causal_mask(x.rows());
  for (int l = from; l < to; ++l) x = run_block(x, w.blocks[static_cast<std::size_t>(l)], mask);
  return x;
}

Tensor readout(const Tensor& x, const DecoderWeights& w) {
  return numkit::add_row(numkit::matmul(affine_norm(x, w.final_ln_g, w.final_ln_b), w.lm_head),
                         w.lm_bias);
}

void visit_block(DecoderBlock& blk, const std::string& base,
                 const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t h = 0; h < blk.heads.size(); ++h) {
    const std::string hb = base + ".head" + std::to_string(h);
    fn(hb + ".wq", blk.heads[h].wq);
    fn(hb + ".wk", blk.heads[h].wk);
    fn(hb + ".wv", blk.heads[h].wv);
    fn(hb + ".wo", blk.heads[h].wo);
  }
  fn(base + ".attn_bias", blk.attn_bias);
  fn(base + ".w1", blk.w1);
  fn(base + ".b1", blk.b1);
  fn(base + ".w2", blk.w2);
  fn(base + ".b2", blk.b2);
  fn(base + ".ln1g", blk.ln1g);
  fn(base + ".ln1b", blk.ln1b);
  fn(base + ".ln2g", blk.ln2g);
  fn(base + ".ln2b", blk.ln2b);
}

}  // namespace

DecoderWeights init_decoder(Rng rng, const ModelConfig& cfg, bool trainable) {
  cfg.validate();
  DecoderWeights w;
  w.cfg = cfg;
  const int d = cfg.d;
  const int dh = d / cfg.heads;
  w.tok_embed = normal_tensor(rng, {cfg.vocab, d}, 0.5, trainable);
  w.pos_embed = normal_tensor(rng, {cfg.max_seq, d}, 0.1, trainable);
  w.blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& blk : w.blocks) {
    blk.heads.resize(static_cast<std::size_t>(cfg.heads));
    for (auto& hw : blk.heads) {
      hw.wq = normal_tensor(rng, {d, dh}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
      hw.wk = normal_tensor(rng, {d, dh}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
      hw.wv = normal_tensor(rng, {d, dh}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
      hw.wo = normal_tensor(rng, {dh, d}, 1.0 / std::sqrt(static_cast<double>(dh)), trainable);
    }
    blk.attn_bias = Tensor::zeros({d}, trainable);
    blk.w1 = normal_tensor(rng, {d, 4 * d}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
    blk.b1 = Tensor::zeros({4 * d}, trainable);
    blk.w2 = normal_tensor(rng, {4 * d, d}, 1.0 / std::sqrt(static_cast<double>(4 * d)), trainable);
    blk.b2 = Tensor::zeros({d}, trainable);
    blk.ln1g = const_tensor({d}, 1.0, trainable);
    blk.ln1b = Tensor::zeros({d}, trainable);
    blk.ln2g = const_tensor({d}, 1.0, trainable);
    blk.ln2b = Tensor::zeros({d}, trainable);
  }
  w.final_ln_g = const_tensor({d}, 1.0, trainable);
  w.final_ln_b = Tensor::zeros({d}, trainable);
  // Zero head: the model starts out predicting the uniform distribution, so
  // the first loss is exactly ln(vocab).
  w.lm_head = Tensor::zeros({d, cfg.vocab}, trainable);
  w.lm_bias = Tensor::zeros({cfg.vocab}, trainable);
  return w;
}

void freeze(DecoderWeights& w) {
  visit_params(w, "decoder", [](const std::string&, Tensor& t) {
    t.requires_grad = false;
    t.grad.reset();
    t.node.reset();
  });
}

void visit_params(DecoderWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".tok_embed", w.tok_embed);
  fn(prefix + ".pos_embed", w.pos_embed);
  for (std::size_t i = 0; i < w.blocks.size(); ++i)
    visit_block(w.blocks[i], prefix + ".block" + std::to_string(i), fn);
  fn(prefix + ".final_ln_g", w.final_ln_g);
  fn(prefix + ".final_ln_b", w.final_ln_b);
  fn(prefix + ".lm_head", w.lm_head);
  fn(prefix + ".lm_bias", w.lm_bias);
}

std::size_t count_params(DecoderWeights& w) {
  std::size_t n = 0;
  visit_params(w, "decoder", [&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

Assembled assemble(const MixedSequence& seq, const std::vector<Tensor>& prompts,
                   const DecoderWeights& w) {
  const int k = w.cfg.k;
  const int n_images = seq.image_count();
  if (static_cast<int>(prompts.size()) != n_images)
    throw std::runtime_error("assemble: " + std::to_string(prompts.size()) + " prompt sets for " +
                             std::to_string(n_images) + " image segments");
  const int n = seq.length(k);
  if (n == 0) throw std::runtime_error("assemble: empty sequence");
  if (n > w.cfg.max_seq)
    throw std::runtime_error("assemble: sequence length " + std::to_string(n) +
                             " exceeds max_seq " + std::to_string(w.cfg.max_seq));

  Assembled out;
  out.image_slots.resize(static_cast<std::size_t>(n_images));
  out.token_at.assign(static_cast<std::size_t>(n), -1);

  std::vector<Tensor> parts;
  int pos = 0;
  for (const auto& seg : seq.segments) {
    if (seg.is_image) {
      const Tensor& p = prompts[static_cast<std::size_t>(seg.image_index)];
      if (p.rows() != k || p.cols() != w.cfg.d)
        throw std::runtime_error("assemble: prompts for image " + std::to_string(seg.image_index) +
                                 " are " + p.shape_str() + ", expected [" + std::to_string(k) + "," +
                                 std::to_string(w.cfg.d) + "]");
      out.image_slots[static_cast<std::size_t>(seg.image_index)] = {pos, k};
      parts.push_back(p);
      pos += k;
    } else {
      if (seg.tokens.empty()) continue;
      for (std::size_t i = 0; i < seg.tokens.size(); ++i)
        out.token_at[static_cast<std::size_t>(pos) + i] = seg.tokens[i];
      parts.push_back(numkit::embedding(w.tok_embed, seg.tokens));
      pos += static_cast<int>(seg.tokens.size());
    }
  }
  const Tensor stacked = parts.size() == 1 ? parts.front() : numkit::concat_rows(parts);
  out.h0 = numkit::add(stacked, numkit::slice_rows(w.pos_embed, 0, n));
  return out;
}

LayerState forward_to(const Tensor& h0, int l, const DecoderWeights& w) {
  if (l < 0 || l > w.cfg.layers)
    throw std::runtime_error("forward_to: layer " + std::to_string(l) + " outside [0, " +
                             std::to_string(w.cfg.layers) + "]");
  LayerState s;
  s.layer = l;
  s.h = run_layers(h0, 0, l, w);
  return s;
}

Tensor forward_from(const LayerState& state, int l_start, const DecoderWeights& w) {
  if (state.layer != l_start)
    throw std::runtime_error("forward_from: state is at layer " + std::to_string(state.layer) +
                             ", expected " + std::to_string(l_start));
  if (l_start < 0 || l_start > w.cfg.layers)
    throw std::runtime_error("forward_from: layer " + std::to_string(l_start) + " outside [0, " +
                             std::to_string(w.cfg.layers) + "]");
  return readout(run_layers(state.h, l_start, w.cfg.layers, w), w);
}

Tensor full_forward(const Tensor& h0, const DecoderWeights& w) {
  return readout(run_layers(h0, 0, w.cfg.layers, w), w);
}

Tensor lm_loss(const Tensor& logits, const std::vector<int>& targets,
               const std::vector<std::uint8_t>& mask) {
  return numkit::cross_entropy_rows(logits, targets, mask);
}

std::int64_t layer_calls() { return g_layer_calls; }
void reset_layer_calls() { g_layer_calls = 0; }

std::vector<int> greedy_decode(const MixedSequence& prefix, const std::vector<Tensor>& prompts,
                               const DecoderWeights& w, int eos_id, int max_new) {
  numkit::NoGradGuard ng;
  std::vector<int> generated;
  for (int step = 0; step < max_new; ++step) {
    MixedSequence seq = prefix;
    if (!generated.empty()) seq.add_text(generated);
    if (seq.length(w.cfg.k) >= w.cfg.max_seq) break;
    const Assembled a = assemble(seq, prompts, w);
    const Tensor logits = full_forward(a.h0, w);
    const int last = logits.rows() - 1;
    int best = 0;
    for (int v = 1; v < logits.cols(); ++v)
      if (logits(last, v) > logits(last, best)) best = v;
    if (best == eos_id) break;
    generated.push_back(best);
  }
  return generated;
}

}  // namespace decoder
