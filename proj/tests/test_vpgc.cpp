#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "decoder/decoder.hpp"
#include "doctest.h"
#include "numkit/ops.hpp"
#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"
#include "vpg/vpg.hpp"
#include "vpgc/vpgc.hpp"

using namespace numkit;
using namespace vpgc;

namespace {

std::vector<double> fd_grad(Tensor& param, const std::function<double()>& loss_fn,
                            double eps = 1e-6) {
  NoGradGuard ng;
  std::vector<double> g(param.numel());
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double keep = (*param.data)[i];
    (*param.data)[i] = keep + eps;
    const double up = loss_fn();
    (*param.data)[i] = keep - eps;
    const double down = loss_fn();
    (*param.data)[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-6});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

Backbone tiny_backbone(int vocab = 11) {
  Backbone bb;
  bb.encoder = vpg::init_encoder(Rng(101), 8, 2, 8);  // 16x16 rasters -> 2x2 grid, d_v=8
  bb.resampler = vpg::init_resampler(Rng(102), 2, 8, 2, false);
  bb.linear_vpg = vpg::init_linear_vpg(Rng(103), 8, 8, false);
  decoder::ModelConfig cfg;
  cfg.layers = 4;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.vocab = vocab;
  cfg.k = 2;
  cfg.max_seq = 48;
  bb.dec = decoder::init_decoder(Rng(104), cfg, false);
  Rng hr(105);  // the zero head would hide any hidden-state change
  for (auto& v : *bb.dec.lm_head.data) v = hr.normal(0.0, 0.3);
  return bb;
}

scenegen::Raster noisy_raster(int side, Rng& rng) {
  scenegen::Raster img;
  img.width = img.height = side;
  img.pixels.resize(static_cast<std::size_t>(side) * side * 3);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

decoder::MixedSequence one_image_seq() {
  decoder::MixedSequence seq;
  seq.add_text({0, 1}).add_image().add_text({2, 3});
  return seq;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  vpg::ResamplerWeights big = vpg::init_resampler(Rng(1), 8, 64, 2, false);
  VPGCWeights w = init_vpgc(Rng(2), big, 64, true);
  CHECK(count_params(w) == 8832);  // 8*64 + 2*(64*64 + 64)

  vpg::ResamplerWeights small = vpg::init_resampler(Rng(3), 2, 8, 1, false);
  VPGCWeights ws = init_vpgc(Rng(4), small, 8, true);
  CHECK(count_params(ws) == 2 * 8 + 2 * (8 * 8 + 8));

  auto named = trainable_params(w, "qformer");
  std::size_t total = 0;
  for (auto& [name, t] : named) total += t.numel();
  CHECK(total == 8832);
  CHECK(named.size() == 5);
  CHECK(trainable_params(w, "linear").size() == 8);
  CHECK(trainable_params(w, "heuristic").size() == 2);
  CHECK(trainable_params(w, "off").empty());
  CHECK_THROWS_AS(trainable_params(w, "qformer2"), std::runtime_error);
}

TEST_CASE("init: reintegration linear starts at zero, queries near the frozen bank") {
  vpg::ResamplerWeights rs = vpg::init_resampler(Rng(5), 4, 8, 1, false);

  VPGCWeights w = init_vpgc(Rng(6), rs, 8, true);
  for (double v : *w.w_r.data) CHECK(v == 0.0);
  for (double v : *w.b_r.data) CHECK(v == 0.0);
  for (double v : *w.w_g.data) CHECK(v == 0.0);  // zero_init_both default
  for (double v : *w.b_g.data) CHECK(v == 0.0);

  VPGCWeights wx = init_vpgc(Rng(7), rs, 8, false);
  double wg_norm = 0.0;
  for (double v : *wx.w_g.data) wg_norm += v * v;
  CHECK(wg_norm > 0.0);
  for (double v : *wx.w_r.data) CHECK(v == 0.0);  // w_r is zero either way

  double max_dev = 0.0, min_dev = 1e9;
  for (std::size_t i = 0; i < w.q_new.numel(); ++i) {
    const double dev = std::fabs(w.q_new.ptr()[i] - rs.queries.ptr()[i]);
    max_dev = std::max(max_dev, dev);
    min_dev = std::min(min_dev, dev);
  }
  CHECK(max_dev < 0.06);  // sigma = 0.01 noise
  CHECK(max_dev > 0.0);   // but not an exact copy

  for (auto& [name, t] : trainable_params(w, "qformer")) {
    CHECK(t.requires_grad);
    CHECK(t.grad != nullptr);
  }
}

TEST_CASE("extract_guidance: linear read of the last input token's hidden row") {
  VPGCWeights w;
  w.d = 2;
  decoder::LayerState st;
  st.layer = 2;
  st.h = Tensor::from({3, 2}, {9.0, 9.0, 8.0, 8.0, 1.0, 1.0});

  SUBCASE("identity weights pass the row through") {
    w.w_g = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    w.b_g = Tensor::zeros({2});
    Tensor g = extract_guidance(st, 2, w);
    REQUIRE(g.shape == std::vector<int>{1, 2});
    CHECK(g(0, 0) == 1.0);
    CHECK(g(0, 1) == 1.0);
  }
  SUBCASE("zero weights leave only the bias") {
    w.w_g = Tensor::zeros({2, 2});
    w.b_g = Tensor::from({2}, {0.25, -0.5});
    Tensor g = extract_guidance(st, 2, w);
    CHECK(g(0, 0) == 0.25);
    CHECK(g(0, 1) == -0.5);
  }
  SUBCASE("hand-sized matrix-vector product") {
    w.w_g = Tensor::from({2, 2}, {1.0, 2.0, 0.0, 1.0});
    w.b_g = Tensor::zeros({2});
    Tensor g = extract_guidance(st, 2, w);
    CHECK(g(0, 0) == 3.0);  // row (1,1) against [[1,2],[0,1]]
    CHECK(g(0, 1) == 1.0);
  }
  SUBCASE("a state at the wrong layer is rejected") {
    w.w_g = Tensor::zeros({2, 2});
    w.b_g = Tensor::zeros({2});
    CHECK_THROWS_WITH_AS(extract_guidance(st, 3, w),
                         "extract_guidance: state is at layer 2, expected 3", std::runtime_error);
  }
}

TEST_CASE("condition_queries: the guidance shifts every query row") {
  Tensor q = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});

  SUBCASE("zero guidance is the identity") {
    Tensor g = Tensor::zeros({1, 2});
    Tensor out = condition_queries(g, q);
    CHECK(*out.data == *q.data);
  }
  SUBCASE("hand case") {
    Tensor g = Tensor::from({1, 2}, {1.0, 1.0});
    Tensor out = condition_queries(g, q);
    CHECK(out(0, 0) == 2.0);
    CHECK(out(0, 1) == 1.0);
    CHECK(out(1, 0) == 1.0);
    CHECK(out(1, 1) == 2.0);
  }
  SUBCASE("conditioning is additive in the guidance") {
    Tensor g1 = Tensor::from({1, 2}, {0.5, -1.0});
    Tensor g2 = Tensor::from({1, 2}, {2.0, 0.25});
    Tensor sum = Tensor::from({1, 2}, {2.5, -0.75});
    Tensor once = condition_queries(sum, q);
    Tensor twice = condition_queries(g2, condition_queries(g1, q));
    for (std::size_t i = 0; i < once.numel(); ++i)
      CHECK(once.ptr()[i] == doctest::Approx(twice.ptr()[i]).epsilon(1e-12));
  }
  SUBCASE("width mismatch is rejected") {
    Tensor g = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(condition_queries(g, q), std::runtime_error);
  }
}

TEST_CASE("complete_details: frozen resampler reuse over every image") {
  Rng rng(31);
  vpg::ResamplerWeights rs = vpg::init_resampler(Rng(32), 2, 8, 2, false);
  vpg::EncoderWeights enc = vpg::init_encoder(Rng(33), 8, 2, 8);
  vpg::FeatureGrid g1 = vpg::encode_image(noisy_raster(16, rng), enc);
  vpg::FeatureGrid g2 = vpg::encode_image(noisy_raster(16, rng), enc);

  SUBCASE("unconditioned queries reproduce the original prompts") {
    Tensor original = vpg::resample(g1, rs.queries, rs).prompts;
    auto details = complete_details({g1}, rs.queries, rs);
    REQUIRE(details.size() == 1);
    CHECK(*details[0].prompts.data == *original.data);
  }
  SUBCASE("two images are handled independently") {
    auto both = complete_details({g1, g2}, rs.queries, rs);
    REQUIRE(both.size() == 2);
    CHECK(*both[0].prompts.data == *vpg::resample(g1, rs.queries, rs).prompts.data);
    CHECK(*both[1].prompts.data == *vpg::resample(g2, rs.queries, rs).prompts.data);
  }
  SUBCASE("perturbing the guidance moves the details") {
    Tensor nudge = Tensor::zeros({1, 8});
    nudge(0, 0) = 0.1;
    Tensor base = complete_details({g1}, rs.queries, rs)[0].prompts;
    Tensor moved = complete_details({g1}, add_row(rs.queries, nudge), rs)[0].prompts;
    double diff = 0.0;
    for (std::size_t i = 0; i < base.numel(); ++i)
      diff = std::max(diff, std::fabs(base.ptr()[i] - moved.ptr()[i]));
    CHECK(diff > 1e-9);
  }
}

TEST_CASE("reintegrate: zero linear is a no-op, slots confine every change") {
  decoder::LayerState st;
  st.layer = 2;
  st.h = Tensor::from({3, 2}, {9.0, 9.0, 1.0, 2.0, 5.0, 5.0});
  const std::vector<std::pair<int, int>> slots = {{1, 1}};
  Tensor v_bar = Tensor::from({1, 2}, {3.0, 4.0});

  SUBCASE("zero weights leave the state bit-identical") {
    VPGCWeights w;
    w.w_r = Tensor::zeros({2, 2});
    w.b_r = Tensor::zeros({2});
    decoder::LayerState out = reintegrate(st, slots, {v_bar}, w);
    CHECK(out.layer == 2);
    CHECK(*out.h.data == *st.h.data);
  }
  SUBCASE("hand case: identity linear adds the details") {
    VPGCWeights w;
    w.w_r = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    w.b_r = Tensor::zeros({2});
    decoder::LayerState out = reintegrate(st, slots, {v_bar}, w);
    CHECK(out.h(1, 0) == 4.0);
    CHECK(out.h(1, 1) == 6.0);
    // Rows outside the slot are carried over bit-identically.
    CHECK(out.h(0, 0) == 9.0);
    CHECK(out.h(0, 1) == 9.0);
    CHECK(out.h(2, 0) == 5.0);
    CHECK(out.h(2, 1) == 5.0);
  }
  SUBCASE("overlapping or out-of-range slots are rejected") {
    VPGCWeights w;
    w.w_r = Tensor::zeros({2, 2});
    w.b_r = Tensor::zeros({2});
    Tensor two = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(reintegrate(st, {{0, 2}, {1, 2}}, {two, two}, w), std::runtime_error);
    CHECK_THROWS_AS(reintegrate(st, {{2, 2}}, {two}, w), std::runtime_error);
    CHECK_THROWS_AS(reintegrate(st, {{0, 1}, {1, 1}}, {v_bar}, w), std::runtime_error);
  }
}

TEST_CASE("vpgc_forward: fresh weights cannot disturb the backbone") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(41), bb.resampler, 8, true);
  VPGCConfig on;
  VPGCConfig off;
  off.variant = "off";

  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    decoder::MixedSequence seq;
    seq.add_text({rng.uniform_int(0, 10), rng.uniform_int(0, 10)}).add_image();
    std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
    if (trial % 2 == 1) {
      seq.add_image().add_text({rng.uniform_int(0, 10)});
      rasters.push_back(noisy_raster(16, rng));
    }
    NoGradGuard ng;
    Tensor with = vpgc_forward(seq, rasters, bb, w, on).logits;
    Tensor without = vpgc_forward(seq, rasters, bb, w, off).logits;
    REQUIRE(with.shape == without.shape);
    double diff = 0.0;
    for (std::size_t i = 0; i < with.numel(); ++i)
      diff = std::max(diff, std::fabs(with.ptr()[i] - without.ptr()[i]));
    CHECK(diff <= 1e-9);
  }
}

TEST_CASE("vpgc_forward: every decoder layer runs exactly once") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(51), bb.resampler, 8, true);
  Rng rng(52);
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
  NoGradGuard ng;

  for (const char* variant : {"qformer", "heuristic", "off"}) {
    VPGCConfig cfg;
    cfg.variant = variant;
    ForwardOut out = vpgc_forward(one_image_seq(), rasters, bb, w, cfg);
    CHECK(out.layer_calls == bb.dec.cfg.layers);
  }
}

TEST_CASE("vpgc_forward: insert layer sweeps the full interior range") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(61), bb.resampler, 8, true);
  Rng rng(62);
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
  NoGradGuard ng;

  for (int l = 1; l < bb.dec.cfg.layers; ++l) {
    VPGCConfig cfg;
    cfg.insert_layer = l;
    ForwardOut out = vpgc_forward(one_image_seq(), rasters, bb, w, cfg);
    CHECK(out.layer_calls == bb.dec.cfg.layers);
    for (std::size_t i = 0; i < out.logits.numel(); ++i) CHECK(std::isfinite(out.logits.ptr()[i]));
  }
  VPGCConfig bad;
  bad.insert_layer = bb.dec.cfg.layers;
  CHECK_THROWS_AS(vpgc_forward(one_image_seq(), rasters, bb, w, bad), std::runtime_error);
}

TEST_CASE("vpgc_forward: raster count and variant/backbone pairing are checked") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(71), bb.resampler, 8, true);
  Rng rng(72);
  NoGradGuard ng;

  CHECK_THROWS_AS(vpgc_forward(one_image_seq(), {}, bb, w, VPGCConfig{}), std::runtime_error);

  VPGCConfig lin;
  lin.variant = "linear";
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
  CHECK_THROWS_AS(vpgc_forward(one_image_seq(), rasters, bb, w, lin), std::runtime_error);

  VPGCConfig nonsense;
  nonsense.variant = "both";
  CHECK_THROWS_AS(vpgc_forward(one_image_seq(), rasters, bb, w, nonsense), std::runtime_error);
}

TEST_CASE("heuristic_details: least-attended pooling with row-major ties") {
  vpg::FeatureGrid grid;
  grid.p = 2;
  grid.features = Tensor::from({4, 2}, {1.0, 0.0, 2.0, 1.0, 4.0, 3.0, 9.0, 8.0});
  VPGCWeights w;
  w.heur_w = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  w.heur_b = Tensor::zeros({2});

  vpg::AttentionTrace uniform;
  uniform.p = 2;
  uniform.maps.push_back(Tensor::from({1, 4}, {0.25, 0.25, 0.25, 0.25}));

  SUBCASE("uniform attention takes cells in row-major order") {
    Tensor out = heuristic_details(uniform, grid, 0.75, w);  // ceil(3) = 3 cells
    CHECK(out(0, 0) == doctest::Approx((1.0 + 2.0 + 4.0) / 3.0).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx((0.0 + 1.0 + 3.0) / 3.0).epsilon(1e-12));
  }
  SUBCASE("fraction one pools everything") {
    Tensor out = heuristic_details(uniform, grid, 1.0, w);
    CHECK(out(0, 0) == doctest::Approx(16.0 / 4.0).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(12.0 / 4.0).epsilon(1e-12));
  }
  SUBCASE("a dominant cell is excluded") {
    vpg::AttentionTrace skew;
    skew.p = 2;
    skew.maps.push_back(Tensor::from({1, 4}, {0.1, 0.6, 0.1, 0.2}));
    Tensor out = heuristic_details(skew, grid, 0.75, w);  // drops cell 1
    CHECK(out(0, 0) == doctest::Approx((1.0 + 4.0 + 9.0) / 3.0).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx((0.0 + 3.0 + 8.0) / 3.0).epsilon(1e-12));
  }
  SUBCASE("fractions outside (0,1] are rejected") {
    CHECK_THROWS_AS(heuristic_details(uniform, grid, 0.0, w), std::runtime_error);
    CHECK_THROWS_AS(heuristic_details(uniform, grid, 1.5, w), std::runtime_error);
  }
}

TEST_CASE("linear_details: guided Hadamard gate over projected cells") {
  vpg::FeatureGrid grid;
  grid.p = 1;
  grid.features = Tensor::from({1, 2}, {1.0, 1.0});
  VPGCWeights w;
  w.lin_w1 = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  w.lin_b1 = Tensor::zeros({2});
  w.lin_w2 = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  w.lin_b2 = Tensor::zeros({2});

  SUBCASE("hand case: gate (2,3) times cell (1,1)") {
    Tensor g = Tensor::from({1, 2}, {2.0, 3.0});
    Tensor v = linear_details(g, grid, w);
    REQUIRE(v.shape == std::vector<int>{1, 2});
    CHECK(v(0, 0) == 2.0);
    CHECK(v(0, 1) == 3.0);
  }
  SUBCASE("an all-ones gate passes the projected features") {
    w.lin_w1 = Tensor::zeros({2, 2});
    w.lin_b1 = Tensor::from({2}, {1.0, 1.0});
    Tensor g = Tensor::from({1, 2}, {7.0, -3.0});
    Tensor v = linear_details(g, grid, w);
    CHECK(v(0, 0) == grid.features(0, 0));
    CHECK(v(0, 1) == grid.features(0, 1));
  }
  SUBCASE("zero guidance with zero bias annihilates") {
    Tensor g = Tensor::zeros({1, 2});
    Tensor v = linear_details(g, grid, w);
    CHECK(v(0, 0) == 0.0);
    CHECK(v(0, 1) == 0.0);
  }
}

TEST_CASE("linear variant runs end to end on a linear-VPG backbone") {
  Backbone bb = tiny_backbone();
  bb.vpg_kind = "linear";
  decoder::ModelConfig cfg = bb.dec.cfg;
  cfg.k = 4;  // one prompt per 2x2 grid cell
  bb.dec = decoder::init_decoder(Rng(81), cfg, false);
  Rng hr(82);
  for (auto& v : *bb.dec.lm_head.data) v = hr.normal(0.0, 0.3);

  VPGCWeights w = init_vpgc(Rng(83), bb.resampler, 8, true);
  Rng rng(84);
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
  NoGradGuard ng;

  VPGCConfig lin;
  lin.variant = "linear";
  ForwardOut out = vpgc_forward(one_image_seq(), rasters, bb, w, lin);
  CHECK(out.layer_calls == cfg.layers);
  for (std::size_t i = 0; i < out.logits.numel(); ++i) CHECK(std::isfinite(out.logits.ptr()[i]));

  VPGCConfig off;
  off.variant = "off";
  Tensor base = vpgc_forward(one_image_seq(), rasters, bb, w, off).logits;
  double diff = 0.0;  // w_r = 0 keeps the variant silent too
  for (std::size_t i = 0; i < base.numel(); ++i)
    diff = std::max(diff, std::fabs(base.ptr()[i] - out.logits.ptr()[i]));
  CHECK(diff <= 1e-9);
}

TEST_CASE("guidance at the response marker ignores teacher-forced continuations") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(111), bb.resampler, 8, false);  // nonzero w_g
  Rng rng(112);
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
  NoGradGuard ng;

  decoder::MixedSequence prefix = one_image_seq();  // ends at the marker position
  const int resp_row = prefix.length(bb.dec.cfg.k) - 1;
  decoder::MixedSequence full = prefix;
  full.add_text({5, 6, 7, 2});  // a teacher-forced response ending in <eos>

  Tensor g_prefix = vpgc_forward(prefix, rasters, bb, w, VPGCConfig{}, resp_row).guidance;
  Tensor g_full = vpgc_forward(full, rasters, bb, w, VPGCConfig{}, resp_row).guidance;
  CHECK(*g_prefix.data == *g_full.data);

  VPGCConfig cfg;
  CHECK_THROWS_AS(vpgc_forward(prefix, rasters, bb, w, cfg, 99), std::runtime_error);
}

TEST_CASE("generate: mechanism-aware greedy decoding stops at eos") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(121), bb.resampler, 8, true);
  Rng rng(122);
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};

  (*bb.dec.lm_bias.data)[7] = 50.0;  // dominate every position
  std::vector<int> out = generate(one_image_seq(), rasters, bb, w, VPGCConfig{}, 2, 3);
  CHECK(out == std::vector<int>{7, 7, 7});

  (*bb.dec.lm_bias.data)[7] = 0.0;
  (*bb.dec.lm_bias.data)[2] = 50.0;
  CHECK(generate(one_image_seq(), rasters, bb, w, VPGCConfig{}, 2, 3).empty());
}

TEST_CASE("end-to-end gradients match finite differences for every parameter") {
  Backbone bb = tiny_backbone();
  VPGCWeights w = init_vpgc(Rng(91), bb.resampler, 8, true);
  // Mid-training shape: nonzero linears so every path carries gradient.
  Rng mid(92);
  for (auto& v : *w.w_r.data) v = mid.normal(0.0, 0.2);
  for (auto& v : *w.b_r.data) v = mid.normal(0.0, 0.2);
  for (auto& v : *w.w_g.data) v = mid.normal(0.0, 0.2);
  for (auto& v : *w.b_g.data) v = mid.normal(0.0, 0.2);

  Rng rng(93);
  decoder::MixedSequence seq = one_image_seq();
  std::vector<scenegen::Raster> rasters = {noisy_raster(16, rng)};
  const std::vector<int> targets = {1, 0, 0, 2, 3, 4};
  const std::vector<std::uint8_t> mask = {0, 0, 0, 0, 1, 1};
  VPGCConfig cfg;

  auto loss_value = [&]() {
    ForwardOut out = vpgc_forward(seq, rasters, bb, w, cfg);
    Tensor loss = decoder::lm_loss(out.logits, targets, mask);
    return (*loss.data)[0];
  };

  ForwardOut out = vpgc_forward(seq, rasters, bb, w, cfg);
  Tensor loss = decoder::lm_loss(out.logits, targets, mask);
  backward(loss);

  for (auto& [name, param] : trainable_params(w, "qformer")) {
    REQUIRE(param.grad != nullptr);
    double norm = 0.0;
    for (double gv : *param.grad) norm += gv * gv;
    CHECK_MESSAGE(norm > 0.0, name);
    CHECK_MESSAGE(max_rel_err(*param.grad, fd_grad(param, loss_value)) < 1e-3, name);
  }

  // The backbone stayed frozen: no gradient slots anywhere.
  vpg::visit_params(bb.resampler, "r", [&](const std::string&, Tensor& t) { CHECK(t.grad == nullptr); });
  vpg::visit_params(bb.encoder, "e", [&](const std::string&, Tensor& t) { CHECK(t.grad == nullptr); });
  decoder::visit_params(bb.dec, "d", [&](const std::string&, Tensor& t) { CHECK(t.grad == nullptr); });
}
