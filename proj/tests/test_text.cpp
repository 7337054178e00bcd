#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "scd/text.hpp"
#include "support.hpp"

using namespace scd;
using scd::test::random_matrix;

namespace {

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("build_prompt examples") {
  const PromptSet prompts;
  const std::string qa = build_prompt(prompts, Scenario::Interview, "Q: hobby? A: none");
  CHECK(qa.find("Q: hobby? A: none") != std::string::npos);
  CHECK(count(qa, kVaMarker) == 1);

  const std::string story = build_prompt(prompts, Scenario::SelfNarration, "I feel tired daily");
  CHECK(story.find("I feel tired daily") != std::string::npos);
  const auto prefix = [](const std::string& s) { return s.substr(0, s.find(kVaMarker)); };
  CHECK(prefix(story) != prefix(qa));
  CHECK(prefix(build_prompt(prompts, Scenario::Questionnaire, "x")) != prefix(qa));

  CHECK(build_prompt(prompts, Scenario::Interview, "  same  ") == build_prompt(prompts, Scenario::Interview, "same"));
  CHECK_THROWS_AS(build_prompt(prompts, Scenario::Interview, " \n\t "), std::invalid_argument);

  // Marker look-alikes in the text never add a second placeholder.
  const std::string sneaky = build_prompt(prompts, Scenario::Interview, "a <VAFeature> b {VAFeature} c");
  CHECK(count(sneaky, kVaMarker) == 1);
  const auto ids = tokenize(sneaky, 512);
  CHECK(std::count(ids.begin(), ids.end(), vocab::kVaPlaceholder) == 1);
}

TEST_CASE("prompt templates load from a directory and are validated") {
  const auto dir = std::filesystem::temp_directory_path() / "scd_prompt_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "interview.txt") << "Custom {Text} then {VAFeature}\n";
  const PromptSet set = PromptSet::from_directory(dir);
  CHECK(set.get(Scenario::Interview).body == "Custom {Text} then {VAFeature}");
  CHECK(set.get(Scenario::SelfNarration).body == PromptSet().get(Scenario::SelfNarration).body);
  CHECK(build_prompt(set, Scenario::Interview, "hi") == "Custom hi then <VAFeature>");

  std::ofstream(dir / "questionnaire.txt") << "no slots here";
  CHECK_THROWS_AS(PromptSet::from_directory(dir), std::invalid_argument);
  std::filesystem::remove_all(dir);

  // The shipped template files match the built-ins.
  const PromptSet shipped = PromptSet::from_directory(SCD_SOURCE_DIR "/templates");
  const PromptSet builtin;
  for (Scenario s : {Scenario::Interview, Scenario::Questionnaire, Scenario::SelfNarration})
    CHECK(shipped.get(s).body == builtin.get(s).body);
}

TEST_CASE("tokenize_embed examples") {
  Rng rng(1);
  const Matrix table = random_matrix(vocab::kSize, 8, rng);
  const TokenSequence minimal = tokenize_embed("", table, 16);
  CHECK(minimal.real_count() == 2);
  CHECK(minimal.ids[0] == vocab::kBos);
  CHECK(minimal.ids[1] == vocab::kEos);

  const TokenSequence ten = tokenize_embed("0123456789", table, 32);
  REQUIRE(ten.length() == 32);
  for (std::size_t i = 0; i < 32; ++i) CHECK(ten.mask[i] == (i < 12 ? 1 : 0));
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(ten.embed(i, c) == table(static_cast<std::size_t>(ten.ids[i]), c));
  CHECK(ten.ids[1] == '0');
  CHECK(ten.ids[12] == vocab::kPad);
  CHECK_THROWS_AS(tokenize_embed("x", random_matrix(10, 8, rng), 16), DimensionError);
}

TEST_CASE("tokenize truncates the tail and keeps the framing and the placeholder") {
  const std::string prompt = "ab<VAFeature>cdefghijklmnop";
  CHECK(token_count(prompt) == 2 + 2 + 1 + 14);
  const auto ids = tokenize(prompt, 8);
  REQUIRE(ids.size() == 8);
  CHECK(ids.front() == vocab::kBos);
  CHECK(ids.back() == vocab::kEos);
  CHECK(std::vector<int>(ids.begin() + 1, ids.end() - 1) ==
        std::vector<int>{'a', 'b', vocab::kVaPlaceholder, 'c', 'd', 'e'});
  // The placeholder survives even when it is the last body token.
  const auto tight = tokenize("abcdef<VAFeature>", 4);
  CHECK(tight == std::vector<int>{vocab::kBos, 'a', vocab::kVaPlaceholder, vocab::kEos});
  for (std::size_t l : {16u, 64u, 256u}) CHECK(tokenize("hello", l).size() == l);
}

TEST_CASE("unify examples") {
  Rng rng(2);
  TokenSequence seq;
  seq.embed = random_matrix(6, 4, rng);
  seq.ids.assign(6, 'a');
  seq.mask.assign(6, 1);
  CHECK(bit_equal(unify(seq).embed, seq.embed));
  seq.mask.assign(6, 0);
  const TokenSequence blank = unify(seq);
  for (double v : blank.embed.values()) CHECK(v == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    for (auto& m : seq.mask) m = rng.bernoulli(0.5);
    const TokenSequence out = unify(seq);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(out.embed(i, c) == (seq.mask[i] ? seq.embed(i, c) : 0.0));
  }
  seq.mask.pop_back();
  CHECK_THROWS_AS(unify(seq), DimensionError);
}

TEST_CASE("unify erases padding garbage") {
  Rng rng(3);
  const Matrix table = random_matrix(vocab::kSize, 8, rng);
  const TokenSequence base = tokenize_embed("Q: hi A: fine", table, 40);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence dirty = base;
    for (std::size_t i = 0; i < dirty.length(); ++i)
      if (!dirty.mask[i])
        for (double& v : dirty.embed.row(i)) v = rng.uniform(-100, 100);
    CHECK(bit_equal(unify(dirty).embed, unify(base).embed));
  }
}

TEST_CASE("scenario codes and rendering") {
  for (Scenario s : {Scenario::Interview, Scenario::Questionnaire, Scenario::SelfNarration})
    CHECK(parse_scenario(std::string(1, scenario_code(s))) == s);
  CHECK_THROWS_AS(parse_scenario("X"), std::invalid_argument);
  CHECK(render_tokens({'h', 'i', vocab::kDep}) == "hi depressed");
  CHECK(render_tokens({vocab::kNoDep, vocab::kEos, 'x'}) == "not depressed");
  CHECK(render_tokens({'a', 0xE9, 0xFF}) == "a\u00e9\u00ff");
  std::vector<int> all_bytes(256);
  for (int i = 0; i < 256; ++i) all_bytes[static_cast<std::size_t>(i)] = i;
  CHECK_NOTHROW(nlohmann::json(render_tokens(all_bytes)).dump());
}
