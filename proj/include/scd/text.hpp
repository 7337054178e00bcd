#pragma once

// Scenario-specific prompt templates, a byte-level toy tokenizer, and the
// fixed-length masking that puts every text input on one sequence length.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scd/tensor.hpp"

namespace scd {

enum class Scenario { Interview, Questionnaire, SelfNarration };

char scenario_code(Scenario s);  // 'I', 'Q', 'S'
Scenario parse_scenario(std::string_view code);
std::string_view scenario_file_stem(Scenario s);

/// Bytes occupy ids 0..255; specials follow.
namespace vocab {
inline constexpr int kPad = 256;
inline constexpr int kBos = 257;
inline constexpr int kEos = 258;
inline constexpr int kVaPlaceholder = 259;
inline constexpr int kDep = 260;
inline constexpr int kNoDep = 261;
inline constexpr std::size_t kSize = 262;
}  // namespace vocab

/// Marker that a built prompt carries where the audio-visual tokens go.
inline constexpr std::string_view kVaMarker = "<VAFeature>";
inline constexpr std::string_view kVaSlot = "{VAFeature}";
inline constexpr std::string_view kTextSlot = "{Text}";

struct PromptTemplate {
  Scenario scenario = Scenario::Interview;
  std::string body;  // contains {VAFeature} and {Text} exactly once each

  void validate() const;
};

class PromptSet {
 public:
  /// Built-in templates for the three scenarios.
  PromptSet();
  /// Reads interview.txt, questionnaire.txt and self_narration.txt from `dir`;
  /// missing files fall back to the built-ins.
  static PromptSet from_directory(const std::filesystem::path& dir);

  const PromptTemplate& get(Scenario s) const { return templates_[static_cast<std::size_t>(s)]; }
  void set(PromptTemplate t);

 private:
  std::array<PromptTemplate, 3> templates_;
};

/// Substitutes trimmed `text` into the scenario template; the {VAFeature} slot
/// becomes kVaMarker. Marker look-alikes inside `text` are removed.
std::string build_prompt(const PromptSet& prompts, Scenario s, std::string_view text);

struct TokenSequence {
  std::vector<int> ids;
  Matrix embed;                   // l x d_llm
  std::vector<std::uint8_t> mask;  // 1 = real token

  std::size_t length() const { return ids.size(); }
  std::size_t real_count() const;
  /// Index of the last real row; throws if there is none.
  std::size_t last_real() const;
};

/// BOS + prompt bytes (marker -> placeholder id) + EOS, PAD-filled to `max_len`.
/// Over-long prompts lose tokens from the tail of the body; BOS, EOS and the
/// placeholder are always kept.
std::vector<int> tokenize(std::string_view prompt, std::size_t max_len);
/// Number of tokens before truncation/padding.
std::size_t token_count(std::string_view prompt);

TokenSequence tokenize_embed(std::string_view prompt, const Matrix& table, std::size_t max_len);

/// embed := embed (*) mask, broadcast over the feature axis.
TokenSequence unify(TokenSequence seq);

/// Renders generated ids as UTF-8 text, bytes >= 0x80 read as Latin-1; DEP/NODEP
/// become their answer words.
std::string render_tokens(const std::vector<int>& ids);

}  // namespace scd
