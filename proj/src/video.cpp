#include "scd/video.hpp"

#include <cmath>

namespace scd {

void CueSet::validate() const {
  const std::size_t t = streams[0].rows();
  if (t == 0) throw DimensionError("cues: no frames");
  for (std::size_t m = 1; m < kCueCount; ++m) {
    if (streams[m].rows() != t) {
      throw DimensionError(std::string("cues: stream ") + kCueNames[m] + " has " +
                           std::to_string(streams[m].rows()) + " frames, f2d has " + std::to_string(t));
    }
  }
}

ParamList VideoEncoder::params() {
  ParamList p;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    p.push_back(&conv_weight[m]);
    p.push_back(&conv_bias[m]);
  }
  for (std::size_t m = 0; m < kCueCount; ++m)
    for (std::size_t n = 0; n < kCueCount; ++n) {
      if (cfg.share_cross_projections ? m != n : m == n) continue;
      p.push_back(&cross[m][n].q);
      p.push_back(&cross[m][n].k);
      p.push_back(&cross[m][n].v);
    }
  for (std::size_t m = 0; m < kCueCount; ++m) {
    p.push_back(&ln_gain[m]);
    p.push_back(&ln_bias[m]);
    p.push_back(&self_attn[m].q);
    p.push_back(&self_attn[m].k);
    p.push_back(&self_attn[m].v);
  }
  for (Param* a : adapter.params()) p.push_back(a);
  return p;
}

ParamList VideoEncoder::cross_value_params() {
  ParamList p;
  for (std::size_t m = 0; m < kCueCount; ++m)
    for (std::size_t n = 0; n < kCueCount; ++n) {
      if (cfg.share_cross_projections ? m != n : m == n) continue;
      p.push_back(&cross[m][n].v);
    }
  return p;
}

VideoEncoder make_video_encoder(const VideoEncoderConfig& cfg, std::size_t n_tokens, std::size_t d_tokens,
                                Rng& rng) {
  VideoEncoder enc;
  enc.cfg = cfg;
  const std::size_t d = cfg.d_cue;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    const std::string pre = std::string("video.") + kCueNames[m];
    const std::size_t fan = cfg.kernel_width * cfg.cue_dims[m];
    enc.conv_weight[m] = Param(pre + ".conv.weight", uniform_init(fan, d, fan, rng));
    enc.conv_bias[m] = Param(pre + ".conv.bias", uniform_init(1, d, fan, rng));
  }
  for (std::size_t m = 0; m < kCueCount; ++m)
    for (std::size_t n = 0; n < kCueCount; ++n) {
      if (cfg.share_cross_projections ? m != n : m == n) continue;
      const std::string pre = std::string("video.cross.") + kCueNames[m] + "_" + kCueNames[n];
      enc.cross[m][n].q = Param(pre + ".q", uniform_init(d, d, d, rng));
      enc.cross[m][n].k = Param(pre + ".k", uniform_init(d, d, d, rng));
      enc.cross[m][n].v = Param(pre + ".v", uniform_init(d, d, d, rng));
    }
  for (std::size_t m = 0; m < kCueCount; ++m) {
    const std::string pre = std::string("video.") + kCueNames[m];
    enc.ln_gain[m] = Param(pre + ".ln.gain", Matrix(1, d, 1.0));
    enc.ln_bias[m] = Param(pre + ".ln.bias", Matrix(1, d, 0.0));
    enc.self_attn[m].q = Param(pre + ".self.q", uniform_init(d, d, d, rng));
    enc.self_attn[m].k = Param(pre + ".self.k", uniform_init(d, d, d, rng));
    enc.self_attn[m].v = Param(pre + ".self.v", uniform_init(d, d, d, rng));
  }
  enc.adapter = make_adapter("video.adapter", kCueCount * d, n_tokens, d_tokens, rng);
  return enc;
}

Var attention(Graph& g, Var q, Var k, Var v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(g.value(k).cols()));
  Var weights = softmax_rows(g, scale(g, matmul_nt(g, q, k), inv));
  return matmul(g, weights, v);
}

CueVars cue_conv(Graph& g, const CueSet& cues, VideoEncoder& enc) {
  cues.validate();
  CueVars out;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    if (cues.streams[m].cols() != enc.cfg.cue_dims[m]) {
      throw DimensionError(std::string("cue_conv: ") + kCueNames[m] + " has " +
                           std::to_string(cues.streams[m].cols()) + " columns, expected " +
                           std::to_string(enc.cfg.cue_dims[m]));
    }
    out[m] = conv1d_same(g, g.constant(cues.streams[m]), g.param(enc.conv_weight[m]), g.param(enc.conv_bias[m]),
                         enc.cfg.kernel_width);
  }
  return out;
}

CueVars cross_enhance(Graph& g, const CueVars& hidden, VideoEncoder& enc) {
  const bool shared = enc.cfg.share_cross_projections;
  CueVars out;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    std::vector<Var> terms{hidden[m]};
    for (std::size_t n = 0; n < kCueCount; ++n) {
      if (n == m) continue;
      AttentionProj& qp = shared ? enc.cross[m][m] : enc.cross[m][n];
      AttentionProj& kvp = shared ? enc.cross[n][n] : enc.cross[m][n];
      Var q = matmul(g, hidden[m], g.param(qp.q));
      Var k = matmul(g, hidden[n], g.param(kvp.k));
      Var v = matmul(g, hidden[n], g.param(kvp.v));
      terms.push_back(attention(g, q, k, v));
    }
    out[m] = layer_norm_rows(g, sum(g, terms), g.param(enc.ln_gain[m]), g.param(enc.ln_bias[m]), enc.cfg.ln_eps);
  }
  return out;
}

Var self_concat(Graph& g, const CueVars& hidden, VideoEncoder& enc) {
  std::vector<Var> pooled;
  for (std::size_t m = 0; m < kCueCount; ++m) {
    AttentionProj& p = enc.self_attn[m];
    Var q = matmul(g, hidden[m], g.param(p.q));
    Var k = matmul(g, hidden[m], g.param(p.k));
    Var v = matmul(g, hidden[m], g.param(p.v));
    pooled.push_back(mean_rows(g, attention(g, q, k, v)));
  }
  return concat_rows(g, pooled);
}

Var video_features(Graph& g, const CueSet& cues, VideoEncoder& enc) {
  return self_concat(g, cross_enhance(g, cue_conv(g, cues, enc), enc), enc);
}

namespace {
std::array<Matrix, kCueCount> values_of(const Graph& g, const CueVars& v) {
  std::array<Matrix, kCueCount> out;
  for (std::size_t m = 0; m < kCueCount; ++m) out[m] = g.value(v[m]);
  return out;
}
CueVars constants(Graph& g, const std::array<Matrix, kCueCount>& h) {
  CueVars out;
  for (std::size_t m = 0; m < kCueCount; ++m) out[m] = g.constant(h[m]);
  return out;
}
}  // namespace

std::array<Matrix, kCueCount> cue_conv(const CueSet& cues, VideoEncoder& enc) {
  Graph g;
  return values_of(g, cue_conv(g, cues, enc));
}

std::array<Matrix, kCueCount> cross_enhance(const std::array<Matrix, kCueCount>& hidden, VideoEncoder& enc) {
  Graph g;
  return values_of(g, cross_enhance(g, constants(g, hidden), enc));
}

Matrix self_concat(const std::array<Matrix, kCueCount>& hidden, VideoEncoder& enc) {
  Graph g;
  return g.value(self_concat(g, constants(g, hidden), enc));
}

Matrix encode_video(const CueSet& cues, VideoEncoder& enc) {
  Graph g;
  return g.value(apply_adapter(g, video_features(g, cues, enc), enc.adapter));
}

}  // namespace scd
