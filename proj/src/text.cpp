#include "scd/text.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace scd {

char scenario_code(Scenario s) {
  switch (s) {
    case Scenario::Interview: return 'I';
    case Scenario::Questionnaire: return 'Q';
    case Scenario::SelfNarration: return 'S';
  }
  return '?';
}

Scenario parse_scenario(std::string_view code) {
  if (code == "I") return Scenario::Interview;
  if (code == "Q") return Scenario::Questionnaire;
  if (code == "S") return Scenario::SelfNarration;
  throw std::invalid_argument("unknown scenario '" + std::string(code) + "' (expected I, Q or S)");
}

std::string_view scenario_file_stem(Scenario s) {
  switch (s) {
    case Scenario::Interview: return "interview";
    case Scenario::Questionnaire: return "questionnaire";
    case Scenario::SelfNarration: return "self_narration";
  }
  return "";
}

namespace {

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

}  // namespace

void PromptTemplate::validate() const {
  if (count_occurrences(body, kVaSlot) != 1 || count_occurrences(body, kTextSlot) != 1) {
    throw std::invalid_argument(std::string("prompt template for scenario ") + scenario_code(scenario) +
                                " must contain {VAFeature} and {Text} exactly once");
  }
}

PromptSet::PromptSet() {
  templates_[0] = {Scenario::Interview, "Interview: align each answer with its question. AV:{VAFeature} QA:{Text} Depressed?"};
  templates_[1] = {Scenario::Questionnaire, "Questionnaire: read the emotion in each item. AV:{VAFeature} Items:{Text} Depressed?"};
  templates_[2] = {Scenario::SelfNarration, "Self-narration: find the key feelings. AV:{VAFeature} Story:{Text} Depressed?"};
}

PromptSet PromptSet::from_directory(const std::filesystem::path& dir) {
  PromptSet set;
  for (Scenario s : {Scenario::Interview, Scenario::Questionnaire, Scenario::SelfNarration}) {
    const auto path = dir / (std::string(scenario_file_stem(s)) + ".txt");
    std::ifstream in(path);
    if (!in) continue;
    std::stringstream ss;
    ss << in.rdbuf();
    set.set({s, std::string(trim(ss.str()))});
  }
  return set;
}

void PromptSet::set(PromptTemplate t) {
  t.validate();
  templates_[static_cast<std::size_t>(t.scenario)] = std::move(t);
}

std::string build_prompt(const PromptSet& prompts, Scenario s, std::string_view text) {
  const std::string_view body = trim(text);
  if (body.empty()) throw std::invalid_argument("build_prompt: text is empty");
  const std::string clean = replace_all(std::string(body), kVaMarker, "");
  const PromptTemplate& t = prompts.get(s);
  std::string out = t.body;
  // {Text} first so a literal "{VAFeature}" inside the text is never expanded.
  const auto va = out.find(kVaSlot);
  const auto tx = out.find(kTextSlot);
  if (va < tx) {
    out.replace(tx, kTextSlot.size(), clean);
    out.replace(va, kVaSlot.size(), kVaMarker);
  } else {
    out.replace(va, kVaSlot.size(), kVaMarker);
    out.replace(tx, kTextSlot.size(), clean);
  }
  return out;
}

namespace {

std::vector<int> body_ids(std::string_view prompt) {
  std::vector<int> ids;
  ids.reserve(prompt.size());
  for (std::size_t i = 0; i < prompt.size();) {
    if (prompt.compare(i, kVaMarker.size(), kVaMarker) == 0) {
      ids.push_back(vocab::kVaPlaceholder);
      i += kVaMarker.size();
    } else {
      ids.push_back(static_cast<unsigned char>(prompt[i]));
      ++i;
    }
  }
  return ids;
}

}  // namespace

std::size_t token_count(std::string_view prompt) { return body_ids(prompt).size() + 2; }

std::vector<int> tokenize(std::string_view prompt, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("tokenize: max_len must be >= 3");
  std::vector<int> body = body_ids(prompt);
  while (body.size() + 2 > max_len) {
    auto it = body.end();
    do {
      --it;
    } while (*it == vocab::kVaPlaceholder && it != body.begin());
    if (*it == vocab::kVaPlaceholder) break;
    body.erase(it);
  }
  std::vector<int> ids;
  ids.reserve(max_len);
  ids.push_back(vocab::kBos);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(vocab::kEos);
  ids.resize(std::max(max_len, ids.size()), vocab::kPad);
  return ids;
}

std::size_t TokenSequence::real_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

std::size_t TokenSequence::last_real() const {
  for (std::size_t i = mask.size(); i-- > 0;)
    if (mask[i]) return i;
  throw std::invalid_argument("token sequence has no real tokens");
}

TokenSequence tokenize_embed(std::string_view prompt, const Matrix& table, std::size_t max_len) {
  if (table.rows() != vocab::kSize) {
    throw DimensionError("tokenize_embed: embedding table has " + std::to_string(table.rows()) + " rows, vocab has " +
                         std::to_string(vocab::kSize));
  }
  TokenSequence seq;
  seq.ids = tokenize(prompt, max_len);
  seq.embed = Matrix(seq.ids.size(), table.cols());
  seq.mask.resize(seq.ids.size());
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const auto src = table.row(static_cast<std::size_t>(seq.ids[i]));
    std::copy(src.begin(), src.end(), seq.embed.row(i).begin());
    seq.mask[i] = seq.ids[i] != vocab::kPad;
  }
  return seq;
}

TokenSequence unify(TokenSequence seq) {
  if (seq.mask.size() != seq.embed.rows()) throw DimensionError("unify: mask length does not match embedding rows");
  for (std::size_t i = 0; i < seq.mask.size(); ++i) {
    if (seq.mask[i]) continue;
    for (double& v : seq.embed.row(i)) v = 0.0;
  }
  return seq;
}

std::string render_tokens(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 0x80) {
      out.push_back(static_cast<char>(id));
    } else if (id >= 0x80 && id < 256) {
      out.push_back(static_cast<char>(0xC0 | (id >> 6)));
      out.push_back(static_cast<char>(0x80 | (id & 0x3F)));
    } else if (id == vocab::kDep) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
      out += "depressed";
    } else if (id == vocab::kNoDep) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
      out += "not depressed";
    } else if (id == vocab::kEos) {
      break;
    }
  }
  return out;
}

}  // namespace scd
