#include "scd/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace scd {

std::string_view path_name(PathChoice p) {
  switch (p) {
    case PathChoice::Fuse: return "fuse";
    case PathChoice::BypassAudio: return "bypass_audio";
    case PathChoice::BypassVideo: return "bypass_video";
    case PathChoice::TextOnly: return "text_only";
  }
  return "?";
}

PathChoice select_path(bool audio_present, bool video_present) {
  if (audio_present && video_present) return PathChoice::Fuse;
  if (audio_present) return PathChoice::BypassAudio;
  if (video_present) return PathChoice::BypassVideo;
  return PathChoice::TextOnly;
}

PathChoice select_path(const ModalityTokens& a, const ModalityTokens& v) { return select_path(a.present, v.present); }

ParamList FusionParams::fusion_internal() {
  return {&q_audio,         &k_audio,         &v_audio,         &q_video,      &k_video,    &v_video,
          &gate_audio_gain, &gate_audio_bias, &gate_video_gain, &gate_video_bias, &merge_weight, &merge_bias};
}

ParamList FusionParams::params() {
  ParamList p = fusion_internal();
  p.push_back(&shared);
  return p;
}

FusionParams make_fusion(const FusionConfig& cfg, std::size_t d_llm, Rng& rng) {
  if (cfg.heads == 0 || cfg.d_tokens % cfg.heads != 0) {
    throw std::invalid_argument("fusion: d_f must be divisible by the head count");
  }
  FusionParams p;
  p.cfg = cfg;
  const std::size_t d = cfg.d_tokens;
  const std::size_t v_cols = cfg.head_merge == HeadMerge::Sum ? cfg.heads * d : d;
  p.q_audio = Param("fusion.q_audio", uniform_init(d, d, d, rng));
  p.k_audio = Param("fusion.k_audio", uniform_init(d, d, d, rng));
  p.v_audio = Param("fusion.v_audio", uniform_init(d, v_cols, d, rng));
  p.q_video = Param("fusion.q_video", uniform_init(d, d, d, rng));
  p.k_video = Param("fusion.k_video", uniform_init(d, d, d, rng));
  p.v_video = Param("fusion.v_video", uniform_init(d, v_cols, d, rng));
  // Zero affine so both gates start at exactly sigmoid(0) = 0.5.
  p.gate_audio_gain = Param("fusion.gate_audio.gain", Matrix(1, d, 0.0));
  p.gate_audio_bias = Param("fusion.gate_audio.bias", Matrix(1, d, 0.0));
  p.gate_video_gain = Param("fusion.gate_video.gain", Matrix(1, d, 0.0));
  p.gate_video_bias = Param("fusion.gate_video.bias", Matrix(1, d, 0.0));
  const std::size_t fan = cfg.merge_width * d;
  p.merge_weight = Param("fusion.merge.weight", uniform_init(fan, d, fan, rng));
  p.merge_bias = Param("fusion.merge.bias", uniform_init(1, d, fan, rng));
  p.shared = Param("fusion.shared_projection", uniform_init(d, d_llm, d, rng));
  return p;
}

namespace {

void require_tokens(const Graph& g, Var x, const FusionConfig& cfg, const char* what) {
  const Matrix& m = g.value(x);
  if (m.rows() != cfg.n_tokens || m.cols() != cfg.d_tokens) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(cfg.n_tokens) + "x" +
                         std::to_string(cfg.d_tokens) + " tokens, got " + m.shape_str());
  }
}

// sum_h softmax(Q_h K_h^T / sqrt(d_k)) V_h, or the concatenation of head outputs.
Var cross_heads(Graph& g, Var queries_from, Var keys_from, Param& wq, Param& wk, Param& wv, const FusionConfig& cfg) {
  const std::size_t d = cfg.d_tokens;
  const std::size_t dk = d / cfg.heads;
  Var q = matmul(g, queries_from, g.param(wq));
  Var k = matmul(g, keys_from, g.param(wk));
  Var v = matmul(g, keys_from, g.param(wv));
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var qh = slice_cols(g, q, h * dk, dk);
    Var kh = slice_cols(g, k, h * dk, dk);
    Var weights = softmax_rows(g, scale(g, matmul_nt(g, qh, kh), inv));
    Var vh = cfg.head_merge == HeadMerge::Sum ? slice_cols(g, v, h * d, d) : slice_cols(g, v, h * dk, dk);
    heads.push_back(matmul(g, weights, vh));
  }
  return cfg.head_merge == HeadMerge::Sum ? sum(g, heads) : concat_cols(g, heads);
}

}  // namespace

CrossAttended vafm_attend(Graph& g, Var a, Var v, FusionParams& p) {
  require_tokens(g, a, p.cfg, "vafm_attend(audio)");
  require_tokens(g, v, p.cfg, "vafm_attend(video)");
  CrossAttended out;
  out.audio = cross_heads(g, v, a, p.q_video, p.k_audio, p.v_audio, p.cfg);
  out.video = cross_heads(g, a, v, p.q_audio, p.k_video, p.v_video, p.cfg);
  return out;
}

Var gate_merge(Graph& g, Var a_att, Var v_att, Var a, Var v, FusionParams& p) {
  for (Var x : {a_att, v_att, a, v}) require_tokens(g, x, p.cfg, "gate_merge");
  Var gate_a = sigmoid(g, layer_norm_rows(g, a_att, g.param(p.gate_audio_gain), g.param(p.gate_audio_bias), p.cfg.ln_eps));
  Var gate_v = sigmoid(g, layer_norm_rows(g, v_att, g.param(p.gate_video_gain), g.param(p.gate_video_bias), p.cfg.ln_eps));
  Var merged = add(g, hadamard(g, gate_a, a), hadamard(g, gate_v, v));
  return conv1d_same(g, merged, g.param(p.merge_weight), g.param(p.merge_bias), p.cfg.merge_width);
}

Var shared_project(Graph& g, Var tokens, FusionParams& p) {
  if (g.value(tokens).cols() != p.cfg.d_tokens) {
    throw DimensionError("shared_project: tokens are " + g.value(tokens).shape_str() + ", expected width " +
                         std::to_string(p.cfg.d_tokens));
  }
  return matmul(g, tokens, g.param(p.shared));
}

std::optional<Var> fuse(Graph& g, std::optional<Var> a, std::optional<Var> v, FusionParams& p) {
  switch (select_path(a.has_value(), v.has_value())) {
    case PathChoice::Fuse: {
      CrossAttended att = vafm_attend(g, *a, *v, p);
      return shared_project(g, gate_merge(g, att.audio, att.video, *a, *v, p), p);
    }
    case PathChoice::BypassAudio: return shared_project(g, *a, p);
    case PathChoice::BypassVideo: return shared_project(g, *v, p);
    case PathChoice::TextOnly: return std::nullopt;
  }
  return std::nullopt;
}

std::pair<Matrix, Matrix> vafm_attend(const ModalityTokens& a, const ModalityTokens& v, FusionParams& p) {
  if (!a.present || !v.present) throw std::invalid_argument("vafm_attend: both modalities must be present");
  Graph g;
  CrossAttended out = vafm_attend(g, g.constant(a.tokens), g.constant(v.tokens), p);
  return {g.value(out.audio), g.value(out.video)};
}

Matrix gate_merge(const Matrix& a_att, const Matrix& v_att, const ModalityTokens& a, const ModalityTokens& v,
                  FusionParams& p) {
  Graph g;
  return g.value(gate_merge(g, g.constant(a_att), g.constant(v_att), g.constant(a.tokens), g.constant(v.tokens), p));
}

std::optional<Matrix> shared_project(PathChoice path, const ModalityTokens& a, const ModalityTokens& v,
                                     const std::optional<Matrix>& fused, FusionParams& p) {
  if (path != select_path(a, v) || (path == PathChoice::Fuse) != fused.has_value()) {
    throw std::logic_error("shared_project: inputs inconsistent with path " + std::string(path_name(path)));
  }
  Graph g;
  switch (path) {
    case PathChoice::Fuse: return g.value(shared_project(g, g.constant(*fused), p));
    case PathChoice::BypassAudio: return g.value(shared_project(g, g.constant(a.tokens), p));
    case PathChoice::BypassVideo: return g.value(shared_project(g, g.constant(v.tokens), p));
    case PathChoice::TextOnly: return std::nullopt;
  }
  return std::nullopt;
}

std::optional<Matrix> fuse(const ModalityTokens& a, const ModalityTokens& v, FusionParams& p) {
  Graph g;
  std::optional<Var> av, vv;
  if (a.present) av = g.constant(a.tokens);
  if (v.present) vv = g.constant(v.tokens);
  auto out = fuse(g, av, vv, p);
  if (!out) return std::nullopt;
  return g.value(*out);
}

}  // namespace scd
