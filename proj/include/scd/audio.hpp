#pragma once

// Log-Mel front end and NetVLAD aggregation of frame features into a fixed-size
// audio token block.

#include <cstddef>
#include <vector>

#include "scd/graph.hpp"
#include "scd/tensor.hpp"

namespace scd {

struct Waveform {
  std::size_t sample_rate_hz = 16000;
  std::size_t channels = 1;     // samples are interleaved when channels > 1
  std::vector<double> samples;  // in [-1, 1]

  std::size_t frames() const { return channels == 0 ? 0 : samples.size() / channels; }
  double duration_s() const {
    return sample_rate_hz == 0 ? 0.0 : static_cast<double>(frames()) / static_cast<double>(sample_rate_hz);
  }
};

/// t x n_mels matrix of ln(mel_energy + 1e-6).
struct MelFrames {
  Matrix values;
};

struct MelConfig {
  std::size_t n_mels = 40;
  double win_ms = 25.0;
  double hop_ms = 10.0;
};

inline constexpr double kLogMelFloor = 1e-6;

/// Window and FFT sizes implied by a sample rate and config.
struct FrameGeometry {
  std::size_t win = 0;
  std::size_t hop = 0;
  std::size_t n_fft = 0;
};
FrameGeometry frame_geometry(std::size_t sample_rate_hz, const MelConfig& cfg);

/// HTK-style triangular filters over the n_fft/2+1 power bins: n_mels x bins.
Matrix mel_filterbank(std::size_t sample_rate_hz, std::size_t n_fft, std::size_t n_mels);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Hann-windowed power spectrum per frame, filtered and log-compressed. Mono
/// input only; stereo must go through the resampler first.
MelFrames log_mel(const Waveform& w, const MelConfig& cfg);

struct VladCodebook {
  Param centers;        // K x n_mels
  Param assign_weight;  // n_mels x K
  Param assign_bias;    // 1 x K

  std::size_t clusters() const { return centers.value.rows(); }
  std::size_t dim() const { return centers.value.cols(); }
  ParamList params() { return {&centers, &assign_weight, &assign_bias}; }
};

VladCodebook make_codebook(std::size_t clusters, std::size_t n_mels, Rng& rng);

/// Flattened K*n_mels -> n_tokens*d_tokens affine map.
struct TokenAdapter {
  Param weight;
  Param bias;
  std::size_t n_tokens = 0;
  std::size_t d_tokens = 0;
  ParamList params() { return {&weight, &bias}; }
};

TokenAdapter make_adapter(const std::string& prefix, std::size_t in_dim, std::size_t n_tokens,
                          std::size_t d_tokens, Rng& rng);
Var apply_adapter(Graph& g, Var features, TokenAdapter& adapter);

// Graph-level building blocks; the value-level functions below wrap them.
Var soft_assign(Graph& g, Var frames, VladCodebook& cb);
Var netvlad(Graph& g, Var frames, VladCodebook& cb);

Matrix soft_assign(const MelFrames& frames, VladCodebook& cb);
/// K x n_mels: per-cluster L2, then global L2 over the flattened matrix.
Matrix netvlad(const MelFrames& frames, VladCodebook& cb);

struct AudioEncoder {
  VladCodebook codebook;
  TokenAdapter adapter;
  ParamList params() {
    ParamList p = codebook.params();
    for (Param* a : adapter.params()) p.push_back(a);
    return p;
  }
};

AudioEncoder make_audio_encoder(std::size_t clusters, std::size_t n_mels, std::size_t n_tokens,
                                std::size_t d_tokens, Rng& rng);

/// n_tokens x d_tokens audio tokens for one waveform.
Matrix encode_audio(const Waveform& w, const MelConfig& mel, AudioEncoder& enc);

}  // namespace scd
