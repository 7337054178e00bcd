#pragma once

// Modality-aware fusion: route on audio/video availability, fuse both with
// bidirectional multi-head cross attention and a gated Conv1D merge, and map
// whatever survives through one shared projection into the decoder's space.

#include <optional>
#include <string_view>

#include "scd/graph.hpp"
#include "scd/tensor.hpp"

namespace scd {

/// Token block for one modality. Absent modalities carry an empty matrix.
struct ModalityTokens {
  Matrix tokens;
  bool present = false;

  static ModalityTokens absent() { return {}; }
  static ModalityTokens of(Matrix m) { return {std::move(m), true}; }
};

enum class PathChoice { Fuse, BypassAudio, BypassVideo, TextOnly };
std::string_view path_name(PathChoice p);

PathChoice select_path(const ModalityTokens& a, const ModalityTokens& v);
PathChoice select_path(bool audio_present, bool video_present);

enum class HeadMerge { Sum, Concat };

struct FusionConfig {
  std::size_t n_tokens = 4;  // n_f
  std::size_t d_tokens = 32;  // d_f
  std::size_t heads = 4;
  HeadMerge head_merge = HeadMerge::Sum;
  std::size_t merge_width = 3;
  double ln_eps = 1e-5;
};

struct FusionParams {
  FusionConfig cfg;
  // Audio- and video-specific query/key/value projections. Keys and queries are
  // d_f x d_f (split into heads of d_f/H); values are d_f x (H*d_f) when head
  // outputs are summed, d_f x d_f when concatenated.
  Param q_audio, k_audio, v_audio;
  Param q_video, k_video, v_video;
  Param gate_audio_gain, gate_audio_bias;  // normalization of A' before the sigmoid
  Param gate_video_gain, gate_video_bias;
  Param merge_weight, merge_bias;  // Conv1D over the token axis
  Param shared;                    // W: d_f x d_llm

  /// Everything except W.
  ParamList fusion_internal();
  ParamList params();
};

FusionParams make_fusion(const FusionConfig& cfg, std::size_t d_llm, Rng& rng);

struct CrossAttended {
  Var audio;  // A': video queries over audio keys/values
  Var video;  // V': audio queries over video keys/values
};

CrossAttended vafm_attend(Graph& g, Var a, Var v, FusionParams& p);
Var gate_merge(Graph& g, Var a_att, Var v_att, Var a, Var v, FusionParams& p);
/// Row-wise application of W to `tokens`.
Var shared_project(Graph& g, Var tokens, FusionParams& p);

/// Full routing. `a` / `v` are ignored when the matching flag is false.
/// Returns nullopt on the text-only path.
std::optional<Var> fuse(Graph& g, std::optional<Var> a, std::optional<Var> v, FusionParams& p);

// Value-level wrappers.
std::pair<Matrix, Matrix> vafm_attend(const ModalityTokens& a, const ModalityTokens& v, FusionParams& p);
Matrix gate_merge(const Matrix& a_att, const Matrix& v_att, const ModalityTokens& a, const ModalityTokens& v,
                  FusionParams& p);
/// Throws std::logic_error when the inputs do not match `path`.
std::optional<Matrix> shared_project(PathChoice path, const ModalityTokens& a, const ModalityTokens& v,
                                     const std::optional<Matrix>& fused, FusionParams& p);
std::optional<Matrix> fuse(const ModalityTokens& a, const ModalityTokens& v, FusionParams& p);

}  // namespace scd
