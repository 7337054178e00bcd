#include <doctest.h>

#include "scd/video.hpp"
#include "support.hpp"

using namespace scd;
using scd::test::random_matrix;

namespace {

VideoEncoderConfig small_cfg() {
  VideoEncoderConfig c;
  c.cue_dims = {3, 2, 2, 3};
  c.d_cue = 4;
  return c;
}

CueSet random_cues(std::size_t t, const VideoEncoderConfig& cfg, Rng& rng) {
  CueSet cs;
  for (std::size_t m = 0; m < kCueCount; ++m) cs.streams[m] = random_matrix(t, cfg.cue_dims[m], rng);
  return cs;
}

std::array<Matrix, kCueCount> oracle_cross(const std::array<Matrix, kCueCount>& h, const VideoEncoder& enc) {
  std::array<Matrix, kCueCount> out;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    Matrix acc = h[m];
    for (std::size_t n = 0; n < kCueCount; ++n) {
      if (n == m) continue;
      const AttentionProj& p = enc.cross[m][n];
      const Matrix att = test::naive_attention(test::naive_matmul(h[m], p.q.value), test::naive_matmul(h[n], p.k.value),
                                               test::naive_matmul(h[n], p.v.value));
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += att[i];
    }
    out[m] = test::naive_layer_norm_rows(acc, enc.ln_gain[m].value, enc.ln_bias[m].value, enc.cfg.ln_eps);
  }
  return out;
}

Matrix oracle_self(const std::array<Matrix, kCueCount>& h, const VideoEncoder& enc) {
  Matrix out(kCueCount, enc.cfg.d_cue);
  for (std::size_t m = 0; m < kCueCount; ++m) {
    const AttentionProj& p = enc.self_attn[m];
    const Matrix att = test::naive_attention(test::naive_matmul(h[m], p.q.value), test::naive_matmul(h[m], p.k.value),
                                             test::naive_matmul(h[m], p.v.value));
    for (std::size_t i = 0; i < att.rows(); ++i)
      for (std::size_t c = 0; c < att.cols(); ++c) out(m, c) += att(i, c) / static_cast<double>(att.rows());
  }
  return out;
}

}  // namespace

TEST_CASE("cue_conv examples") {
  Rng rng(1);
  VideoEncoderConfig cfg = small_cfg();
  VideoEncoder enc = make_video_encoder(cfg, 2, 4, rng);
  CueSet zero;
  for (std::size_t m = 0; m < kCueCount; ++m) zero.streams[m] = Matrix(4, cfg.cue_dims[m]);
  const auto hz = cue_conv(zero, enc);
  for (std::size_t m = 0; m < kCueCount; ++m)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(hz[m](i, c) == enc.conv_bias[m].value[c]);

  const CueSet cues = random_cues(5, cfg, rng);
  const auto h = cue_conv(cues, enc);
  for (std::size_t m = 0; m < kCueCount; ++m)
    CHECK(max_abs_diff(h[m], test::naive_conv_same(cues.streams[m], enc.conv_weight[m].value, 3,
                                                   enc.conv_bias[m].value)) < 1e-10);

  VideoEncoderConfig narrow = cfg;
  narrow.kernel_width = 1;
  VideoEncoder enc1 = make_video_encoder(narrow, 2, 4, rng);
  const auto h1 = cue_conv(cues, enc1);
  for (std::size_t m = 0; m < kCueCount; ++m) {
    Matrix lin = test::naive_matmul(cues.streams[m], enc1.conv_weight[m].value);
    for (std::size_t i = 0; i < lin.rows(); ++i)
      for (std::size_t c = 0; c < lin.cols(); ++c) lin(i, c) += enc1.conv_bias[m].value[c];
    CHECK(max_abs_diff(h1[m], lin) < 1e-12);
  }

  CueSet ragged = cues;
  ragged.streams[2] = random_matrix(4, 2, rng);
  CHECK_THROWS_AS(cue_conv(ragged, enc), DimensionError);
}

TEST_CASE("cross_enhance examples") {
  Rng rng(2);
  VideoEncoder enc = make_video_encoder(small_cfg(), 2, 4, rng);
  for (Param& g : enc.ln_gain) g.value = random_matrix(1, 4, rng, 0.5, 1.5);
  for (Param& b : enc.ln_bias) b.value = random_matrix(1, 4, rng);

  std::array<Matrix, kCueCount> single;
  for (auto& m : single) m = random_matrix(1, 4, rng);
  const auto out1 = cross_enhance(single, enc);
  for (std::size_t m = 0; m < kCueCount; ++m) {
    Matrix acc = single[m];
    for (std::size_t n = 0; n < kCueCount; ++n) {
      if (n == m) continue;
      const Matrix v = test::naive_matmul(single[n], enc.cross[m][n].v.value);
      for (std::size_t c = 0; c < 4; ++c) acc[c] += v[c];
    }
    CHECK(max_abs_diff(out1[m], test::naive_layer_norm_rows(acc, enc.ln_gain[m].value, enc.ln_bias[m].value, 1e-5)) <
          1e-12);
  }

  std::array<Matrix, kCueCount> random;
  for (auto& m : random) m = random_matrix(3, 4, rng);
  const auto got = cross_enhance(random, enc);
  const auto expect = oracle_cross(random, enc);
  for (std::size_t m = 0; m < kCueCount; ++m) CHECK(max_abs_diff(got[m], expect[m]) < 1e-10);

  // Identical cues and identical projections make every cross term, and so every output, the same.
  VideoEncoder same = enc;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    same.ln_gain[m] = enc.ln_gain[0];
    same.ln_bias[m] = enc.ln_bias[0];
    for (std::size_t n = 0; n < kCueCount; ++n)
      if (m != n) same.cross[m][n] = enc.cross[0][1];
  }
  std::array<Matrix, kCueCount> copies;
  copies.fill(random[0]);
  const auto sym = cross_enhance(copies, same);
  for (std::size_t m = 1; m < kCueCount; ++m) CHECK(bit_equal(sym[m], sym[0]));

  // With all value projections zero only the residual survives.
  VideoEncoder no_values = enc;
  for (Param* p : no_values.cross_value_params()) p->value.fill(0.0);
  const auto residual = cross_enhance(random, no_values);
  for (std::size_t m = 0; m < kCueCount; ++m) {
    Graph g;
    const Matrix ln = g.value(layer_norm_rows(g, g.constant(random[m]), g.constant(enc.ln_gain[m].value),
                                              g.constant(enc.ln_bias[m].value), 1e-5));
    CHECK(bit_equal(residual[m], ln));
  }
}

TEST_CASE("self_concat examples") {
  Rng rng(3);
  VideoEncoder enc = make_video_encoder(small_cfg(), 2, 4, rng);
  std::array<Matrix, kCueCount> one, two, many;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    one[m] = random_matrix(1, 4, rng);
    two[m] = Matrix(2, 4);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 4; ++c) two[m](r, c) = one[m][c];
    many[m] = random_matrix(6, 4, rng);
  }
  const Matrix p1 = self_concat(one, enc);
  REQUIRE(p1.rows() == kCueCount);
  for (std::size_t m = 0; m < kCueCount; ++m) {
    const Matrix v = test::naive_matmul(one[m], enc.self_attn[m].v.value);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(p1(m, c) - v[c]) < 1e-15);
  }
  CHECK(max_abs_diff(self_concat(two, enc), p1) < 1e-15);
  CHECK(max_abs_diff(self_concat(many, enc), oracle_self(many, enc)) < 1e-10);
}

TEST_CASE("encode_video examples") {
  Rng rng(4);
  const VideoEncoderConfig cfg = small_cfg();
  VideoEncoder enc = make_video_encoder(cfg, 3, 5, rng);
  const CueSet cues = random_cues(7, cfg, rng);
  const Matrix v = encode_video(cues, enc);
  CHECK(v.rows() == 3);
  CHECK(v.cols() == 5);
  CHECK(bit_equal(v, encode_video(cues, enc)));

  auto constant = [&](std::size_t t) {
    CueSet cs;
    for (std::size_t m = 0; m < kCueCount; ++m) {
      cs.streams[m] = Matrix(t, cfg.cue_dims[m]);
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < cfg.cue_dims[m]; ++c) cs.streams[m](r, c) = 0.1 * static_cast<double>(m + c + 1);
    }
    return cs;
  };
  CHECK(max_abs_diff(encode_video(constant(5), enc), encode_video(constant(9), enc)) < 1e-12);

  // Composition of the three stage oracles and the adapter.
  std::array<Matrix, kCueCount> h;
  for (std::size_t m = 0; m < kCueCount; ++m)
    h[m] = test::naive_conv_same(cues.streams[m], enc.conv_weight[m].value, 3, enc.conv_bias[m].value);
  const Matrix pooled = oracle_self(oracle_cross(h, enc), enc);
  const Matrix flat(1, pooled.size(), std::vector<double>(pooled.values().begin(), pooled.values().end()));
  const Matrix y = test::naive_matmul(flat, enc.adapter.weight.value);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - (y[i] + enc.adapter.bias.value[i])) < 1e-9);

  for (std::size_t t : {1u, 2u, 13u}) CHECK(encode_video(random_cues(t, cfg, rng), enc).rows() == 3);
}

TEST_CASE("shared cross projections use one projection set per cue") {
  Rng rng(5);
  VideoEncoderConfig cfg = small_cfg();
  cfg.share_cross_projections = true;
  VideoEncoder enc = make_video_encoder(cfg, 2, 4, rng);
  std::size_t cross_params = 0;
  for (Param* p : enc.params())
    if (p->name.find(".cross.") != std::string::npos) ++cross_params;
  CHECK(cross_params == 3 * kCueCount);
  CHECK(encode_video(random_cues(4, cfg, rng), enc).all_finite());
}

TEST_CASE("gradients through the video encoder") {
  Rng rng(6);
  VideoEncoder enc = make_video_encoder(small_cfg(), 2, 3, rng);
  for (Param& g : enc.ln_gain) g.value = random_matrix(1, 4, rng, 0.5, 1.5);
  for (Param& b : enc.ln_bias) b.value = random_matrix(1, 4, rng);
  const CueSet cues = random_cues(4, small_cfg(), rng);
  const Matrix probe = random_matrix(2, 3, rng);
  const double err = check_gradients(
      [&](Graph& g) {
        Var tokens = apply_adapter(g, video_features(g, cues, enc), enc.adapter);
        Var flat = reshape(g, hadamard(g, tokens, g.constant(probe)), 1, 6);
        return matmul_nt(g, flat, g.constant(Matrix(1, 6, 1.0)));
      },
      enc.params(), 1e-4);
  CHECK(err < 1e-3);
}
