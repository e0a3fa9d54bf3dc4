#include "vpg/vpg.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "numkit/ops.hpp"

namespace vpg {

using numkit::Rng;
using numkit::Tensor;

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

AttnWeights init_attn(Rng& rng, int d_q, int d_kv, int d, bool trainable) {
  AttnWeights w;
  w.wq = normal_tensor(rng, {d_q, d}, 1.0 / std::sqrt(static_cast<double>(d_q)), trainable);
  w.bq = Tensor::zeros({d}, trainable);
  w.wk = normal_tensor(rng, {d_kv, d}, 1.0 / std::sqrt(static_cast<double>(d_kv)), trainable);
  w.bk = Tensor::zeros({d}, trainable);
  w.wv = normal_tensor(rng, {d_kv, d}, 1.0 / std::sqrt(static_cast<double>(d_kv)), trainable);
  w.bv = Tensor::zeros({d}, trainable);
  w.wo = normal_tensor(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
  w.bo = Tensor::zeros({d}, trainable);
  return w;
}

FfnWeights init_ffn(Rng& rng, int d, bool trainable) {
  const int hidden = 4 * d;
  FfnWeights w;
  w.w1 = normal_tensor(rng, {d, hidden}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
  w.b1 = Tensor::zeros({hidden}, trainable);
  w.w2 = normal_tensor(rng, {hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), trainable);
  w.b2 = Tensor::zeros({d}, trainable);
  return w;
}

void visit_attn(AttnWeights& w, const std::string& prefix,
                const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".wq", w.wq);
  fn(prefix + ".bq", w.bq);
  fn(prefix + ".wk", w.wk);
  fn(prefix + ".bk", w.bk);
  fn(prefix + ".wv", w.wv);
  fn(prefix + ".bv", w.bv);
  fn(prefix + ".wo", w.wo);
  fn(prefix + ".bo", w.bo);
}

void visit_ffn(FfnWeights& w, const std::string& prefix,
               const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".w1", w.w1);
  fn(prefix + ".b1", w.b1);
  fn(prefix + ".w2", w.w2);
  fn(prefix + ".b2", w.b2);
}

Tensor affine_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  return numkit::add_row(numkit::mul_row(numkit::layernorm_rows(x), g), b);
}

}  // namespace

EncoderWeights init_encoder(Rng rng, int patch, int grid_p, int d_v) {
  if (patch <= 0 || grid_p <= 0 || d_v <= 0)
    throw std::runtime_error("init_encoder: patch, grid_p and d_v must be positive");
  EncoderWeights w;
  w.patch = patch;
  w.grid_p = grid_p;
  const int in_dim = patch * patch * 3;
  // Frozen from birth: the patch embed plays the role of a fixed pretrained
  // vision stem, so none of its tensors ever get gradient slots.
  w.embed_w = normal_tensor(rng, {in_dim, d_v}, 1.0 / std::sqrt(static_cast<double>(in_dim)), false);
  w.embed_b = Tensor::zeros({d_v}, false);
  w.pos_code = normal_tensor(rng, {grid_p * grid_p, d_v}, 0.5, false);
  return w;
}

ResamplerWeights init_resampler(Rng rng, int k, int d, int n_blocks, bool trainable) {
  if (k <= 0) throw std::runtime_error("init_resampler: need at least one query");
  if (d <= 0 || n_blocks <= 0)
    throw std::runtime_error("init_resampler: d and n_blocks must be positive");
  ResamplerWeights w;
  w.k = k;
  w.d = d;
  w.queries = normal_tensor(rng, {k, d}, 1.0, trainable);
  w.blocks.resize(n_blocks);
  for (auto& blk : w.blocks) {
    blk.cross = init_attn(rng, d, d, d, trainable);
    blk.self_attn = init_attn(rng, d, d, d, trainable);
    blk.ffn = init_ffn(rng, d, trainable);
    blk.ln1g = const_tensor({d}, 1.0, trainable);
    blk.ln1b = Tensor::zeros({d}, trainable);
    blk.ln2g = const_tensor({d}, 1.0, trainable);
    blk.ln2b = Tensor::zeros({d}, trainable);
    blk.ln3g = const_tensor({d}, 1.0, trainable);
    blk.ln3b = Tensor::zeros({d}, trainable);
  }
  w.final_ln_g = const_tensor({d}, 1.0, trainable);
  w.final_ln_b = Tensor::zeros({d}, trainable);
  w.out_w = normal_tensor(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
  w.out_b = Tensor::zeros({d}, trainable);
  w.frozen = !trainable;
  return w;
}

LinearVpgWeights init_linear_vpg(Rng rng, int d_v, int d, bool trainable) {
  if (d_v <= 0 || d <= 0) throw std::runtime_error("init_linear_vpg: dims must be positive");
  LinearVpgWeights w;
  w.w = normal_tensor(rng, {d_v, d}, 1.0 / std::sqrt(static_cast<double>(d_v)), trainable);
  w.b = Tensor::zeros({d}, trainable);
  return w;
}

void freeze(ResamplerWeights& w) {
  visit_params(w, "resampler", [](const std::string&, Tensor& t) {
    t.requires_grad = false;
    t.grad.reset();
    t.node.reset();
  });
  w.frozen = true;
}

void freeze(LinearVpgWeights& w) {
  visit_params(w, "linear_vpg", [](const std::string&, Tensor& t) {
    t.requires_grad = false;
    t.grad.reset();
    t.node.reset();
  });
}

void visit_params(ResamplerWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".queries", w.queries);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    auto& blk = w.blocks[i];
    const std::string base = prefix + ".block" + std::to_string(i);
    visit_attn(blk.cross, base + ".cross", fn);
    visit_attn(blk.self_attn, base + ".self", fn);
    visit_ffn(blk.ffn, base + ".ffn", fn);
    fn(base + ".ln1g", blk.ln1g);
    fn(base + ".ln1b", blk.ln1b);
    fn(base + ".ln2g", blk.ln2g);
    fn(base + ".ln2b", blk.ln2b);
    fn(base + ".ln3g", blk.ln3g);
    fn(base + ".ln3b", blk.ln3b);
  }
  fn(prefix + ".final_ln_g", w.final_ln_g);
  fn(prefix + ".final_ln_b", w.final_ln_b);
  fn(prefix + ".out_w", w.out_w);
  fn(prefix + ".out_b", w.out_b);
}

void visit_params(EncoderWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".embed_w", w.embed_w);
  fn(prefix + ".embed_b", w.embed_b);
  fn(prefix + ".pos_code", w.pos_code);
}

void visit_params(LinearVpgWeights& w, const std::string& prefix,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".w", w.w);
  fn(prefix + ".b", w.b);
}

FeatureGrid encode_image(const scenegen::Raster& raster, const EncoderWeights& w) {
  const int p = w.grid_p;
  if (raster.width != p * w.patch || raster.height != p * w.patch)
    throw std::runtime_error("encode_image: raster is " + std::to_string(raster.width) + "x" +
                             std::to_string(raster.height) + ", expected " +
                             std::to_string(p * w.patch) + "x" + std::to_string(p * w.patch));
  const int in_dim = w.patch * w.patch * 3;
  const int d_v = w.embed_w.cols();

  FeatureGrid grid;
  grid.p = p;
  grid.features = Tensor::zeros({p * p, d_v});
  std::vector<double> px(static_cast<std::size_t>(in_dim));
  for (int cell = 0; cell < p * p; ++cell) {
    const int cy = cell / p, cx = cell % p;
    int n = 0;
    for (int y = 0; y < w.patch; ++y)
      for (int x = 0; x < w.patch; ++x) {
        const std::uint8_t* rgb = raster.at(cx * w.patch + x, cy * w.patch + y);
        px[n++] = rgb[0] / 255.0;
        px[n++] = rgb[1] / 255.0;
        px[n++] = rgb[2] / 255.0;
      }
    for (int j = 0; j < d_v; ++j) {
      double acc = w.embed_b.ptr()[j] + w.pos_code(cell, j);
      for (int i = 0; i < in_dim; ++i) acc += px[static_cast<std::size_t>(i)] * w.embed_w(i, j);
      grid.features(cell, j) = acc;
    }
  }
  return grid;
}

AttnResult single_head_attention(const Tensor& q_rows, const Tensor& kv_rows,
                                 const AttnWeights& w) {
  const Tensor q = numkit::add_row(numkit::matmul(q_rows, w.wq), w.bq);
  const Tensor k = numkit::add_row(numkit::matmul(kv_rows, w.wk), w.bk);
  const Tensor v = numkit::add_row(numkit::matmul(kv_rows, w.wv), w.bv);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttnResult r;
  r.weights = numkit::softmax_rows(numkit::scale(numkit::matmul(q, numkit::transpose(k)), inv_sqrt_d));
  r.out = numkit::add_row(numkit::matmul(numkit::matmul(r.weights, v), w.wo), w.bo);
  return r;
}

ResampleOut resample(const FeatureGrid& grid, const Tensor& queries, const ResamplerWeights& w) {
  if (queries.rows() < 1 || queries.numel() == 0)
    throw std::runtime_error("resample: queries must have at least one row");
  if (queries.cols() != w.d)
    throw std::runtime_error("resample: queries are " + queries.shape_str() + ", resampler width is " +
                             std::to_string(w.d));
  if (grid.features.rows() != grid.p * grid.p)
    throw std::runtime_error("resample: feature grid rows " + std::to_string(grid.features.rows()) +
                             " do not match p=" + std::to_string(grid.p));

  ResampleOut out;
  out.trace.p = grid.p;
  Tensor x = queries;
  for (const auto& blk : w.blocks) {
    AttnResult cross = single_head_attention(affine_norm(x, blk.ln1g, blk.ln1b), grid.features, blk.cross);
    out.trace.maps.push_back(cross.weights.detach());
    x = numkit::add(x, cross.out);
    const Tensor s_in = affine_norm(x, blk.ln2g, blk.ln2b);
    x = numkit::add(x, single_head_attention(s_in, s_in, blk.self_attn).out);
    const Tensor f_in = affine_norm(x, blk.ln3g, blk.ln3b);
    const Tensor h = numkit::gelu(numkit::add_row(numkit::matmul(f_in, blk.ffn.w1), blk.ffn.b1));
    x = numkit::add(x, numkit::add_row(numkit::matmul(h, blk.ffn.w2), blk.ffn.b2));
  }
  out.prompts = numkit::add_row(
      numkit::matmul(affine_norm(x, w.final_ln_g, w.final_ln_b), w.out_w), w.out_b);
  return out;
}

Tensor avg_attention(const AttentionTrace& trace) {
  if (trace.maps.empty()) throw std::runtime_error("avg_attention: trace has no maps");
  const int cells = trace.maps.front().cols();
  Tensor a = Tensor::zeros({cells});
  double count = 0.0;
  for (const auto& m : trace.maps) {
    if (m.cols() != cells)
      throw std::runtime_error("avg_attention: map widths disagree, " + std::to_string(m.cols()) +
                               " vs " + std::to_string(cells));
    for (int q = 0; q < m.rows(); ++q) {
      for (int c = 0; c < cells; ++c) a.ptr()[c] += m(q, c);
      count += 1.0;
    }
  }
  for (int c = 0; c < cells; ++c) a.ptr()[c] /= count;
  return a;
}

Tensor linear_vpg(const FeatureGrid& grid, const LinearVpgWeights& w) {
  return numkit::add_row(numkit::matmul(grid.features, w.w), w.b);
}

void dump_attention_csv(const AttentionTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("dump_attention_csv: cannot open " + path);
  f << "layer,query,row,col,weight\n";
  f << std::setprecision(17);
  for (std::size_t layer = 0; layer < trace.maps.size(); ++layer) {
    const Tensor& m = trace.maps[layer];
    for (int q = 0; q < m.rows(); ++q)
      for (int c = 0; c < m.cols(); ++c)
        f << layer << ',' << q << ',' << c / trace.p << ',' << c % trace.p << ',' << m(q, c) << '\n';
  }
  if (!f) throw std::runtime_error("dump_attention_csv: write failed for " + path);
}

void write_heatmap_ppm(const std::string& path, const Tensor& map, int p) {
  if (static_cast<int>(map.numel()) != p * p)
    throw std::runtime_error("write_heatmap_ppm: map has " + std::to_string(map.numel()) +
                             " values, expected " + std::to_string(p * p));
  double mx = 0.0;
  for (std::size_t i = 0; i < map.numel(); ++i) mx = std::max(mx, map.ptr()[i]);
  scenegen::Raster img;
  img.width = p;
  img.height = p;
  img.pixels.assign(static_cast<std::size_t>(p) * p * 3, 0);
  for (int i = 0; i < p * p; ++i) {
    const double v = mx > 0.0 ? map.ptr()[i] / mx : 0.0;
    const auto g = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    img.pixels[3 * static_cast<std::size_t>(i) + 0] = g;
    img.pixels[3 * static_cast<std::size_t>(i) + 1] = g;
    img.pixels[3 * static_cast<std::size_t>(i) + 2] = g;
  }
  scenegen::write_ppm(path, img);
}

}  // namespace vpg
