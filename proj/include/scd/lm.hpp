#pragma once

// Toy decoder-only language model with LoRA on the attention projections,
// splicing of fused audio-visual tokens into the prompt sequence, the answer
// cross-entropy, nucleus decoding, and free-text answer parsing.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scd/graph.hpp"
#include "scd/text.hpp"

namespace scd {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 16.0;
  double dropout = 0.05;
};

struct LoraAdapter {
  Param a;  // d_in x r
  Param b;  // r x d_out, zero at init
  double scale = 0.0;  // alpha / r
  double dropout = 0.0;
};

LoraAdapter make_lora(const std::string& prefix, std::size_t d_in, std::size_t d_out, const LoraConfig& cfg, Rng& rng);

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 256;
  double ln_eps = 1e-5;
  LoraConfig lora;
};

struct DecoderLayer {
  Param ln1_gain, ln1_bias;
  Param wq, wk, wv, wo;
  LoraAdapter lora_q, lora_k, lora_v, lora_o;
  Param ln2_gain, ln2_bias;
  Param ff1_weight, ff1_bias, ff2_weight, ff2_bias;
};

struct ToyDecoder {
  DecoderConfig cfg;
  Param token_embed;  // vocab x d_model; also the tied output head
  Param pos_embed;    // max_len x d_model
  std::vector<DecoderLayer> layers;
  Param lnf_gain, lnf_bias;

  ParamList base_params();
  ParamList lora_params();
};

ToyDecoder make_decoder(const DecoderConfig& cfg, Rng& rng);

struct ForwardMode {
  bool train = false;     // enables LoRA dropout
  bool use_lora = true;   // false evaluates the frozen base alone
  Rng* rng = nullptr;     // dropout stream, required when train && dropout > 0
};

/// x (base + (alpha/r) A B), with dropout on the adapter input during training.
Var lora_forward(Graph& g, Var x, Param& base, LoraAdapter& adapter, const ForwardMode& mode);
Matrix lora_forward(const Matrix& x, Param& base, LoraAdapter& adapter, const ForwardMode& mode = {});

/// Final-LayerNorm hidden states for `embeds` (n x d). Attention is causal and
/// only attends to keys with mask = 1.
Var decoder_hidden(Graph& g, ToyDecoder& dec, Var embeds, std::span<const std::uint8_t> mask, const ForwardMode& mode);
/// Tied-head logits for the selected rows of `hidden`.
Var decoder_logits(Graph& g, ToyDecoder& dec, Var hidden, std::span<const std::size_t> positions);
/// Logits at every position, for inspection and tests.
Matrix decoder_logits(ToyDecoder& dec, const Matrix& embeds, std::span<const std::uint8_t> mask,
                      const ForwardMode& mode = {});

// --- splicing -------------------------------------------------------------------

struct SpliceMap {
  std::size_t placeholder = 0;
  std::size_t inserted = 0;  // fused rows replacing the placeholder (0 collapses it)
};

/// Locates the single placeholder. Throws std::invalid_argument when it is
/// missing or duplicated.
SpliceMap find_placeholder(const TokenSequence& seq, std::size_t fused_rows);

/// Replaces the placeholder row with the fused rows (ids = placeholder id,
/// mask = 1). The result is re-truncated to `max_len`, dropping trailing padding
/// before body tokens.
TokenSequence splice(const TokenSequence& seq, const std::optional<Matrix>& fused, std::size_t max_len);

/// Graph form of splice() that also drops everything after the last real row;
/// those rows cannot influence earlier positions under the causal mask.
struct SplicedInput {
  Var embeds;
  std::vector<std::uint8_t> mask;
  std::size_t answer_position = 0;
};
SplicedInput splice(Graph& g, const TokenSequence& seq, std::optional<Var> fused, std::size_t max_len);

// --- loss / decoding ------------------------------------------------------------

/// Mean cross entropy over positions with mask = 1 and target >= 0.
double answer_loss(const Matrix& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
Var answer_loss(Graph& g, Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

struct DecodeConfig {
  double top_p = 0.9;
  double temperature = 1.0;
  bool greedy = false;
  std::size_t max_new_tokens = 1;
};

/// Nucleus sampling over one logits row. Temperature <= 1e-12 or greedy picks the
/// arg max (lowest id on ties).
int sample_token(std::span<const double> logits, const DecodeConfig& cfg, Rng& rng);

/// Generates up to cfg.max_new_tokens after the last real row of `seq` and
/// renders them as text.
std::string decode(ToyDecoder& dec, const TokenSequence& seq, const DecodeConfig& cfg, Rng& rng);

enum class Label { NotDepressed = 0, Depressed = 1, Error = 2 };
std::string_view label_name(Label l);

/// Case-insensitive search for words containing "depress"; a cue is negated when
/// one of the `negation_window` preceding words is a negation. Affirmative only
/// -> Depressed, negated only -> NotDepressed, both or neither -> Error.
Label parse_response(std::string_view text, std::size_t negation_window = 3);

}  // namespace scd
