#include <doctest.h>

#include "scd/fusion.hpp"
#include "support.hpp"

using namespace scd;
using scd::test::random_matrix;

namespace {

FusionParams make(Rng& rng, FusionConfig cfg = {}, std::size_t d_llm = 16) { return make_fusion(cfg, d_llm, rng); }

// Explicit per-head attention sum with the library's value layout (head h uses
// columns [h*d, (h+1)*d) of the value projection).
Matrix oracle_cross(const Matrix& queries_from, const Matrix& keys_from, const Param& wq, const Param& wk,
                    const Param& wv, const FusionConfig& cfg) {
  const std::size_t d = cfg.d_tokens, dk = d / cfg.heads;
  const Matrix q = test::naive_matmul(queries_from, wq.value), k = test::naive_matmul(keys_from, wk.value);
  const Matrix v = test::naive_matmul(keys_from, wv.value);
  Matrix out(queries_from.rows(), d);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Matrix qh(q.rows(), dk), kh(k.rows(), dk), vh(v.rows(), d);
    for (std::size_t i = 0; i < q.rows(); ++i)
      for (std::size_t c = 0; c < dk; ++c) qh(i, c) = q(i, h * dk + c);
    for (std::size_t i = 0; i < k.rows(); ++i)
      for (std::size_t c = 0; c < dk; ++c) kh(i, c) = k(i, h * dk + c);
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t c = 0; c < d; ++c) vh(i, c) = v(i, h * d + c);
    const Matrix head = test::naive_attention(qh, kh, vh);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += head[i];
  }
  return out;
}

Matrix oracle_gate_merge(const Matrix& a_att, const Matrix& v_att, const Matrix& a, const Matrix& v,
                         const FusionParams& p) {
  const Matrix na = test::naive_layer_norm_rows(a_att, p.gate_audio_gain.value, p.gate_audio_bias.value, p.cfg.ln_eps);
  const Matrix nv = test::naive_layer_norm_rows(v_att, p.gate_video_gain.value, p.gate_video_bias.value, p.cfg.ln_eps);
  Matrix merged(a.rows(), a.cols());
  for (std::size_t i = 0; i < merged.size(); ++i)
    merged[i] = test::naive_sigmoid(na[i]) * a[i] + test::naive_sigmoid(nv[i]) * v[i];
  return test::naive_conv_same(merged, p.merge_weight.value, p.cfg.merge_width, p.merge_bias.value);
}

void randomize_gates(FusionParams& p, Rng& rng) {
  for (Param* x : {&p.gate_audio_gain, &p.gate_audio_bias, &p.gate_video_gain, &p.gate_video_bias})
    x->value = random_matrix(1, p.cfg.d_tokens, rng);
}

Matrix leading_cols(const Matrix& m, std::size_t n) {
  Matrix out(m.rows(), n);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < n; ++c) out(i, c) = m(i, c);
  return out;
}

std::uint64_t total_reads(const ParamList& ps) {
  std::uint64_t n = 0;
  for (const Param* p : ps) n += p->reads;
  return n;
}

}  // namespace

TEST_CASE("select_path examples") {
  CHECK(select_path(true, true) == PathChoice::Fuse);
  CHECK(select_path(true, false) == PathChoice::BypassAudio);
  CHECK(select_path(false, true) == PathChoice::BypassVideo);
  CHECK(select_path(false, false) == PathChoice::TextOnly);
  CHECK(select_path(ModalityTokens::absent(), ModalityTokens::of(Matrix(4, 32))) == PathChoice::BypassVideo);
  CHECK(path_name(PathChoice::BypassAudio) == "bypass_audio");
}

TEST_CASE("vafm_attend examples") {
  Rng rng(1);
  FusionConfig one_token;
  one_token.n_tokens = 1;
  FusionParams p1 = make(rng, one_token);
  const Matrix a1 = random_matrix(1, 32, rng), v1 = random_matrix(1, 32, rng);
  const auto [a_att1, v_att1] = vafm_attend(ModalityTokens::of(a1), ModalityTokens::of(v1), p1);
  const Matrix va = test::naive_matmul(a1, p1.v_audio.value);
  for (std::size_t c = 0; c < 32; ++c) {
    double s = 0.0;
    for (std::size_t h = 0; h < 4; ++h) s += va(0, h * 32 + c);
    CHECK(std::abs(a_att1(0, c) - s) < 1e-12);
  }

  FusionConfig single_head;
  single_head.heads = 1;
  FusionParams ph = make(rng, single_head);
  const Matrix a = random_matrix(4, 32, rng), v = random_matrix(4, 32, rng);
  const auto [a_att, v_att] = vafm_attend(ModalityTokens::of(a), ModalityTokens::of(v), ph);
  CHECK(max_abs_diff(a_att, test::naive_attention(test::naive_matmul(v, ph.q_video.value),
                                                  test::naive_matmul(a, ph.k_audio.value),
                                                  test::naive_matmul(a, ph.v_audio.value))) < 1e-10);
  CHECK(max_abs_diff(v_att, test::naive_attention(test::naive_matmul(a, ph.q_audio.value),
                                                  test::naive_matmul(v, ph.k_video.value),
                                                  test::naive_matmul(v, ph.v_video.value))) < 1e-10);

  FusionParams p = make(rng);
  const auto [a4, v4] = vafm_attend(ModalityTokens::of(a), ModalityTokens::of(v), p);
  CHECK(max_abs_diff(a4, oracle_cross(v, a, p.q_video, p.k_audio, p.v_audio, p.cfg)) < 1e-10);
  CHECK(max_abs_diff(v4, oracle_cross(a, v, p.q_audio, p.k_video, p.v_video, p.cfg)) < 1e-10);

  FusionParams shared = p;
  shared.q_audio = p.q_video;
  shared.k_video = p.k_audio;
  shared.v_video = p.v_audio;
  const auto [sa, sv] = vafm_attend(ModalityTokens::of(a), ModalityTokens::of(a), shared);
  CHECK(bit_equal(sa, sv));

  CHECK_THROWS_AS(vafm_attend(ModalityTokens::of(random_matrix(3, 32, rng)), ModalityTokens::of(v), p),
                  DimensionError);
  CHECK_THROWS(vafm_attend(ModalityTokens::absent(), ModalityTokens::of(v), p));
}

TEST_CASE("concatenated heads keep the token width") {
  Rng rng(2);
  FusionConfig cfg;
  cfg.head_merge = HeadMerge::Concat;
  FusionParams p = make(rng, cfg);
  CHECK(p.v_audio.value.cols() == 32);
  const Matrix a = random_matrix(4, 32, rng), v = random_matrix(4, 32, rng);
  const auto [a_att, v_att] = vafm_attend(ModalityTokens::of(a), ModalityTokens::of(v), p);
  CHECK(a_att.cols() == 32);
  // First head: leading d_k columns of each projection.
  const Matrix attn = test::naive_attention(leading_cols(test::naive_matmul(v, p.q_video.value), 8),
                                            leading_cols(test::naive_matmul(a, p.k_audio.value), 8),
                                            leading_cols(test::naive_matmul(a, p.v_audio.value), 8));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(a_att(i, c) - attn(i, c)) < 1e-10);
}

TEST_CASE("gate_merge examples") {
  Rng rng(3);
  FusionParams p = make(rng);
  const Matrix a = random_matrix(4, 32, rng), v = random_matrix(4, 32, rng);
  const Matrix a_att = random_matrix(4, 32, rng), v_att = random_matrix(4, 32, rng);

  // Zero gate affine: every gate is exactly one half.
  Matrix half_sum(4, 32);
  for (std::size_t i = 0; i < half_sum.size(); ++i) half_sum[i] = 0.5 * a[i] + 0.5 * v[i];
  const Matrix neutral = gate_merge(a_att, v_att, ModalityTokens::of(a), ModalityTokens::of(v), p);
  CHECK(max_abs_diff(neutral, test::naive_conv_same(half_sum, p.merge_weight.value, 3, p.merge_bias.value)) < 1e-12);

  randomize_gates(p, rng);
  const Matrix zero = gate_merge(a_att, v_att, ModalityTokens::of(Matrix(4, 32)), ModalityTokens::of(Matrix(4, 32)), p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 32; ++c) CHECK(zero(i, c) == p.merge_bias.value[c]);

  const Matrix got = gate_merge(a_att, v_att, ModalityTokens::of(a), ModalityTokens::of(v), p);
  CHECK(max_abs_diff(got, oracle_gate_merge(a_att, v_att, a, v, p)) < 1e-10);
}

TEST_CASE("shared_project examples") {
  Rng rng(4);
  FusionParams p = make(rng);
  Matrix basis(4, 32);
  basis(2, 5) = 1.0;
  const auto out = shared_project(PathChoice::BypassAudio, ModalityTokens::of(basis), ModalityTokens::absent(),
                                  std::nullopt, p);
  REQUIRE(out);
  for (std::size_t c = 0; c < 16; ++c) CHECK((*out)(2, c) == p.shared.value(5, c));

  const Matrix x = random_matrix(4, 32, rng);
  const auto as_audio = shared_project(PathChoice::BypassAudio, ModalityTokens::of(x), ModalityTokens::absent(),
                                       std::nullopt, p);
  const auto as_video = shared_project(PathChoice::BypassVideo, ModalityTokens::absent(), ModalityTokens::of(x),
                                       std::nullopt, p);
  const auto as_fused = shared_project(PathChoice::Fuse, ModalityTokens::of(x), ModalityTokens::of(x), x, p);
  CHECK(bit_equal(*as_audio, *as_video));
  CHECK(bit_equal(*as_audio, *as_fused));
  CHECK(max_abs_diff(*as_fused, test::naive_matmul(x, p.shared.value)) < 1e-12);

  CHECK(!shared_project(PathChoice::TextOnly, ModalityTokens::absent(), ModalityTokens::absent(), std::nullopt, p));
  CHECK_THROWS_AS(shared_project(PathChoice::Fuse, ModalityTokens::of(x), ModalityTokens::absent(), x, p),
                  std::logic_error);
  CHECK_THROWS_AS(shared_project(PathChoice::Fuse, ModalityTokens::of(x), ModalityTokens::of(x), std::nullopt, p),
                  std::logic_error);
}

TEST_CASE("fuse examples and bypass equivalence") {
  Rng rng(5);
  FusionParams p = make(rng);
  randomize_gates(p, rng);
  const Matrix a = random_matrix(4, 32, rng), v = random_matrix(4, 32, rng);
  CHECK(!fuse(ModalityTokens::absent(), ModalityTokens::absent(), p));

  const std::uint64_t before = total_reads(p.fusion_internal());
  const auto only_v = fuse(ModalityTokens::absent(), ModalityTokens::of(v), p);
  const auto only_a = fuse(ModalityTokens::of(a), ModalityTokens::absent(), p);
  CHECK(total_reads(p.fusion_internal()) == before);
  Graph g;
  CHECK(bit_equal(*only_v, g.value(matmul(g, g.constant(v), g.constant(p.shared.value)))));
  CHECK(bit_equal(*only_a, g.value(matmul(g, g.constant(a), g.constant(p.shared.value)))));

  const auto both = fuse(ModalityTokens::of(a), ModalityTokens::of(v), p);
  CHECK(total_reads(p.fusion_internal()) > before);
  const Matrix a_att = oracle_cross(v, a, p.q_video, p.k_audio, p.v_audio, p.cfg);
  const Matrix v_att = oracle_cross(a, v, p.q_audio, p.k_video, p.v_video, p.cfg);
  const Matrix expect = test::naive_matmul(oracle_gate_merge(a_att, v_att, a, v, p), p.shared.value);
  CHECK(max_abs_diff(*both, expect) < 1e-9);
  CHECK(both->rows() == 4);
  CHECK(both->cols() == 16);
}

TEST_CASE("gradients through the fused path") {
  Rng rng(6);
  FusionConfig cfg;
  cfg.n_tokens = 3;
  cfg.d_tokens = 4;
  cfg.heads = 2;
  FusionParams p = make(rng, cfg, 5);
  randomize_gates(p, rng);
  Param a("a", random_matrix(3, 4, rng)), v("v", random_matrix(3, 4, rng));
  const Matrix probe = random_matrix(3, 5, rng);
  ParamList ps = p.params();
  ps.push_back(&a);
  ps.push_back(&v);
  const double err = check_gradients(
      [&](Graph& g) {
        Var f = *fuse(g, g.param(a), g.param(v), p);
        Var flat = reshape(g, hadamard(g, f, g.constant(probe)), 1, 15);
        return matmul_nt(g, flat, g.constant(Matrix(1, 15, 1.0)));
      },
      ps, 1e-4);
  CHECK(err < 1e-3);
}
