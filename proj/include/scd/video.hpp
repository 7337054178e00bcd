#pragma once

// Multi-cue video encoder: per-cue temporal convolution, inter-cue cross
// attention with a residual LayerNorm, per-cue self attention, mean pooling over
// time, and a linear adapter to the shared token geometry.

#include <array>
#include <string>

#include "scd/audio.hpp"
#include "scd/graph.hpp"
#include "scd/tensor.hpp"

namespace scd {

inline constexpr std::size_t kCueCount = 4;
enum class Cue : std::size_t { F2D = 0, Gaze = 1, HP = 2, AU = 3 };
inline constexpr std::array<const char*, kCueCount> kCueNames = {"f2d", "gaze", "hp", "au"};

/// OpenFace 2.0 column groups.
inline constexpr std::array<std::size_t, kCueCount> kDefaultCueDims = {136, 8, 6, 35};

struct CueSet {
  std::array<Matrix, kCueCount> streams;  // each t x dim_m
  double fps = 30.0;

  const Matrix& operator[](Cue c) const { return streams[static_cast<std::size_t>(c)]; }
  Matrix& operator[](Cue c) { return streams[static_cast<std::size_t>(c)]; }
  std::size_t frames() const { return streams[0].rows(); }
  double duration_s() const { return fps > 0.0 ? static_cast<double>(frames()) / fps : 0.0; }
  /// Throws DimensionError unless all four streams share one frame count >= 1.
  void validate() const;
};

struct VideoEncoderConfig {
  std::array<std::size_t, kCueCount> cue_dims = kDefaultCueDims;
  std::size_t d_cue = 32;
  std::size_t kernel_width = 3;
  bool share_cross_projections = false;
  double ln_eps = 1e-5;
};

struct AttentionProj {
  Param q, k, v;
};

struct VideoEncoder {
  VideoEncoderConfig cfg;
  std::array<Param, kCueCount> conv_weight;  // (width*dim_m) x d_cue
  std::array<Param, kCueCount> conv_bias;    // 1 x d_cue
  // Indexed [query cue][key cue]. With shared projections only [m][m] is used:
  // q from the query cue's entry, k and v from the key cue's entry.
  std::array<std::array<AttentionProj, kCueCount>, kCueCount> cross;
  std::array<Param, kCueCount> ln_gain, ln_bias;
  std::array<AttentionProj, kCueCount> self_attn;
  TokenAdapter adapter;  // 4*d_cue -> n_f*d_f

  ParamList params();
  /// Parameters of the value projections inside cross_enhance.
  ParamList cross_value_params();
};

VideoEncoder make_video_encoder(const VideoEncoderConfig& cfg, std::size_t n_tokens, std::size_t d_tokens,
                                Rng& rng);

using CueVars = std::array<Var, kCueCount>;

CueVars cue_conv(Graph& g, const CueSet& cues, VideoEncoder& enc);
CueVars cross_enhance(Graph& g, const CueVars& hidden, VideoEncoder& enc);
/// kCueCount x d_cue: self attention over time per cue, then temporal mean.
Var self_concat(Graph& g, const CueVars& hidden, VideoEncoder& enc);
/// Pre-adapter pooled cue matrix for a cue set.
Var video_features(Graph& g, const CueSet& cues, VideoEncoder& enc);

std::array<Matrix, kCueCount> cue_conv(const CueSet& cues, VideoEncoder& enc);
std::array<Matrix, kCueCount> cross_enhance(const std::array<Matrix, kCueCount>& hidden, VideoEncoder& enc);
Matrix self_concat(const std::array<Matrix, kCueCount>& hidden, VideoEncoder& enc);

/// n_tokens x d_tokens video tokens.
Matrix encode_video(const CueSet& cues, VideoEncoder& enc);

/// Single-head scaled dot-product attention softmax(q k^T / sqrt(d_k)) v.
Var attention(Graph& g, Var q, Var k, Var v);

}  // namespace scd
