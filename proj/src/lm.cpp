#include "scd/lm.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace scd {

LoraAdapter make_lora(const std::string& prefix, std::size_t d_in, std::size_t d_out, const LoraConfig& cfg, Rng& rng) {
  if (cfg.rank == 0) throw std::invalid_argument("lora: rank must be >= 1");
  LoraAdapter l;
  l.a = Param(prefix + ".lora_a", uniform_init(d_in, cfg.rank, d_in, rng));
  l.b = Param(prefix + ".lora_b", Matrix(cfg.rank, d_out, 0.0));
  l.scale = cfg.alpha / static_cast<double>(cfg.rank);
  l.dropout = cfg.dropout;
  return l;
}

ParamList ToyDecoder::base_params() {
  ParamList p{&token_embed, &pos_embed};
  for (DecoderLayer& l : layers) {
    for (Param* x : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain, &l.ln2_bias, &l.ff1_weight,
                     &l.ff1_bias, &l.ff2_weight, &l.ff2_bias})
      p.push_back(x);
  }
  p.push_back(&lnf_gain);
  p.push_back(&lnf_bias);
  return p;
}

ParamList ToyDecoder::lora_params() {
  ParamList p;
  for (DecoderLayer& l : layers)
    for (LoraAdapter* a : {&l.lora_q, &l.lora_k, &l.lora_v, &l.lora_o}) {
      p.push_back(&a->a);
      p.push_back(&a->b);
    }
  return p;
}

ToyDecoder make_decoder(const DecoderConfig& cfg, Rng& rng) {
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
    throw std::invalid_argument("decoder: d_model must be divisible by heads");
  }
  const std::size_t d = cfg.d_model;
  ToyDecoder dec;
  dec.cfg = cfg;
  // Embedding rows are the outputs of a one-hot input, so their fan-in is 1.
  dec.token_embed = Param("decoder.token_embed", uniform_init(vocab::kSize, d, 1, rng));
  dec.pos_embed = Param("decoder.pos_embed", uniform_init(cfg.max_len, d, 1, rng));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string pre = "decoder.layer" + std::to_string(i);
    DecoderLayer l;
    l.ln1_gain = Param(pre + ".ln1.gain", Matrix(1, d, 1.0));
    l.ln1_bias = Param(pre + ".ln1.bias", Matrix(1, d, 0.0));
    l.wq = Param(pre + ".wq", uniform_init(d, d, d, rng));
    l.wk = Param(pre + ".wk", uniform_init(d, d, d, rng));
    l.wv = Param(pre + ".wv", uniform_init(d, d, d, rng));
    l.wo = Param(pre + ".wo", uniform_init(d, d, d, rng));
    l.lora_q = make_lora(pre + ".wq", d, d, cfg.lora, rng);
    l.lora_k = make_lora(pre + ".wk", d, d, cfg.lora, rng);
    l.lora_v = make_lora(pre + ".wv", d, d, cfg.lora, rng);
    l.lora_o = make_lora(pre + ".wo", d, d, cfg.lora, rng);
    l.ln2_gain = Param(pre + ".ln2.gain", Matrix(1, d, 1.0));
    l.ln2_bias = Param(pre + ".ln2.bias", Matrix(1, d, 0.0));
    l.ff1_weight = Param(pre + ".ff1.weight", uniform_init(d, cfg.d_ff, d, rng));
    l.ff1_bias = Param(pre + ".ff1.bias", uniform_init(1, cfg.d_ff, d, rng));
    l.ff2_weight = Param(pre + ".ff2.weight", uniform_init(cfg.d_ff, d, cfg.d_ff, rng));
    l.ff2_bias = Param(pre + ".ff2.bias", uniform_init(1, d, cfg.d_ff, rng));
    dec.layers.push_back(std::move(l));
  }
  dec.lnf_gain = Param("decoder.lnf.gain", Matrix(1, d, 1.0));
  dec.lnf_bias = Param("decoder.lnf.bias", Matrix(1, d, 0.0));
  return dec;
}

Var lora_forward(Graph& g, Var x, Param& base, LoraAdapter& adapter, const ForwardMode& mode) {
  const Matrix& w = base.value;
  if (g.value(x).cols() != w.rows()) {
    throw DimensionError("lora_forward: input " + g.value(x).shape_str() + " vs weight " + w.shape_str());
  }
  if (adapter.a.value.rows() != w.rows() || adapter.b.value.cols() != w.cols() ||
      adapter.a.value.cols() != adapter.b.value.rows()) {
    throw DimensionError("lora_forward: adapter " + adapter.a.value.shape_str() + " / " + adapter.b.value.shape_str() +
                         " incompatible with weight " + w.shape_str());
  }
  Var out = matmul(g, x, g.param(base));
  if (!mode.use_lora) return out;
  Var in = x;
  if (mode.train && adapter.dropout > 0.0) {
    if (mode.rng == nullptr) throw std::invalid_argument("lora_forward: dropout needs an rng");
    const Matrix& xv = g.value(x);
    Matrix keep(xv.rows(), xv.cols());
    const double inv = 1.0 / (1.0 - adapter.dropout);
    for (double& k : keep.values()) k = mode.rng->bernoulli(adapter.dropout) ? 0.0 : inv;
    in = hadamard(g, x, g.constant(std::move(keep)));
  }
  Var delta = matmul(g, matmul(g, in, g.param(adapter.a)), g.param(adapter.b));
  return add(g, out, scale(g, delta, adapter.scale));
}

Matrix lora_forward(const Matrix& x, Param& base, LoraAdapter& adapter, const ForwardMode& mode) {
  Graph g;
  return g.value(lora_forward(g, g.constant(x), base, adapter, mode));
}

Var decoder_hidden(Graph& g, ToyDecoder& dec, Var embeds, std::span<const std::uint8_t> mask, const ForwardMode& mode) {
  const std::size_t n = g.value(embeds).rows();
  const std::size_t d = dec.cfg.d_model;
  if (g.value(embeds).cols() != d) throw DimensionError("decoder: embeddings must have width d_model");
  if (mask.size() != n) throw DimensionError("decoder: mask length does not match sequence length");
  if (n > dec.cfg.max_len) {
    throw DimensionError("decoder: sequence of " + std::to_string(n) + " exceeds max_len " +
                         std::to_string(dec.cfg.max_len));
  }
  Matrix allow(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) allow(i, j) = mask[j] ? 1.0 : 0.0;

  const std::size_t heads = dec.cfg.heads;
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Var x = add(g, embeds, slice_rows(g, g.param(dec.pos_embed), 0, n));
  for (DecoderLayer& l : dec.layers) {
    Var h = layer_norm_rows(g, x, g.param(l.ln1_gain), g.param(l.ln1_bias), dec.cfg.ln_eps);
    Var q = lora_forward(g, h, l.wq, l.lora_q, mode);
    Var k = lora_forward(g, h, l.wk, l.lora_k, mode);
    Var v = lora_forward(g, h, l.wv, l.lora_v, mode);
    std::vector<Var> outs;
    for (std::size_t hh = 0; hh < heads; ++hh) {
      Var scores = scale(g, matmul_nt(g, slice_cols(g, q, hh * dh, dh), slice_cols(g, k, hh * dh, dh)), inv);
      outs.push_back(matmul(g, masked_softmax_rows(g, scores, allow), slice_cols(g, v, hh * dh, dh)));
    }
    x = add(g, x, lora_forward(g, concat_cols(g, outs), l.wo, l.lora_o, mode));
    Var h2 = layer_norm_rows(g, x, g.param(l.ln2_gain), g.param(l.ln2_bias), dec.cfg.ln_eps);
    Var ff = gelu(g, add_row(g, matmul(g, h2, g.param(l.ff1_weight)), g.param(l.ff1_bias)));
    x = add(g, x, add_row(g, matmul(g, ff, g.param(l.ff2_weight)), g.param(l.ff2_bias)));
  }
  return layer_norm_rows(g, x, g.param(dec.lnf_gain), g.param(dec.lnf_bias), dec.cfg.ln_eps);
}

Var decoder_logits(Graph& g, ToyDecoder& dec, Var hidden, std::span<const std::size_t> positions) {
  return matmul_nt(g, gather_rows(g, hidden, positions), g.param(dec.token_embed));
}

Matrix decoder_logits(ToyDecoder& dec, const Matrix& embeds, std::span<const std::uint8_t> mask,
                      const ForwardMode& mode) {
  Graph g;
  Var h = decoder_hidden(g, dec, g.constant(embeds), mask, mode);
  std::vector<std::size_t> all(embeds.rows());
  std::iota(all.begin(), all.end(), 0);
  return g.value(decoder_logits(g, dec, h, all));
}

// --- splicing -------------------------------------------------------------------

SpliceMap find_placeholder(const TokenSequence& seq, std::size_t fused_rows) {
  SpliceMap map;
  std::size_t found = 0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (seq.ids[i] == vocab::kVaPlaceholder) {
      map.placeholder = i;
      ++found;
    }
  }
  if (found == 0) throw std::invalid_argument("splice: sequence has no audio-visual placeholder");
  if (found > 1) throw std::invalid_argument("splice: sequence has " + std::to_string(found) + " placeholders");
  map.inserted = fused_rows;
  return map;
}

namespace {

struct RowSource {
  bool fused = false;
  std::size_t index = 0;
  int id = 0;
  std::uint8_t mask = 0;
};

std::vector<RowSource> splice_plan(const TokenSequence& seq, std::size_t fused_rows, std::size_t max_len) {
  const SpliceMap map = find_placeholder(seq, fused_rows);
  std::vector<RowSource> rows;
  rows.reserve(seq.ids.size() + fused_rows);
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (i == map.placeholder) {
      for (std::size_t f = 0; f < fused_rows; ++f) rows.push_back({true, f, vocab::kVaPlaceholder, 1});
    } else {
      rows.push_back({false, i, seq.ids[i], seq.mask[i]});
    }
  }
  while (rows.size() > max_len) {
    if (rows.back().mask == 0) {
      rows.pop_back();
      continue;
    }
    auto it = std::find_if(rows.rbegin(), rows.rend(), [](const RowSource& r) {
      return !r.fused && r.mask && r.id != vocab::kBos && r.id != vocab::kEos;
    });
    if (it == rows.rend()) break;
    rows.erase(std::next(it).base());
  }
  return rows;
}

}  // namespace

TokenSequence splice(const TokenSequence& seq, const std::optional<Matrix>& fused, std::size_t max_len) {
  const std::size_t n_fused = fused ? fused->rows() : 0;
  if (fused && fused->cols() != seq.embed.cols()) {
    throw DimensionError("splice: fused tokens are " + fused->shape_str() + ", sequence width is " +
                         std::to_string(seq.embed.cols()));
  }
  const auto plan = splice_plan(seq, n_fused, max_len);
  TokenSequence out;
  out.embed = Matrix(plan.size(), seq.embed.cols());
  for (std::size_t r = 0; r < plan.size(); ++r) {
    out.ids.push_back(plan[r].id);
    out.mask.push_back(plan[r].mask);
    const auto src = plan[r].fused ? fused->row(plan[r].index) : seq.embed.row(plan[r].index);
    std::copy(src.begin(), src.end(), out.embed.row(r).begin());
  }
  return out;
}

SplicedInput splice(Graph& g, const TokenSequence& seq, std::optional<Var> fused, std::size_t max_len) {
  const std::size_t n_fused = fused ? g.value(*fused).rows() : 0;
  auto plan = splice_plan(seq, n_fused, max_len);
  std::size_t last = plan.size();
  for (std::size_t r = plan.size(); r-- > 0;)
    if (plan[r].mask) {
      last = r;
      break;
    }
  if (last == plan.size()) throw std::invalid_argument("splice: no real tokens");
  plan.resize(last + 1);

  SplicedInput in;
  in.answer_position = last;
  std::vector<Var> blocks;
  for (std::size_t r = 0; r < plan.size();) {
    std::size_t e = r;
    while (e < plan.size() && plan[e].fused == plan[r].fused &&
           plan[e].index == plan[r].index + (e - r))
      ++e;
    if (plan[r].fused) {
      blocks.push_back(slice_rows(g, *fused, plan[r].index, e - r));
    } else {
      Matrix block(e - r, seq.embed.cols());
      for (std::size_t k = r; k < e; ++k) {
        const auto src = seq.embed.row(plan[k].index);
        std::copy(src.begin(), src.end(), block.row(k - r).begin());
      }
      blocks.push_back(g.constant(std::move(block)));
    }
    r = e;
  }
  for (const auto& p : plan) in.mask.push_back(p.mask);
  in.embeds = blocks.size() == 1 ? blocks[0] : concat_rows(g, blocks);
  return in;
}

// --- loss / decoding ------------------------------------------------------------

namespace {
std::vector<int> masked_targets(std::span<const int> targets, std::span<const std::uint8_t> mask) {
  if (targets.size() != mask.size()) throw DimensionError("answer_loss: targets and mask lengths differ");
  std::vector<int> t(targets.begin(), targets.end());
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!mask[i]) t[i] = -1;
  return t;
}
}  // namespace

double answer_loss(const Matrix& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  Graph g;
  return g.value(answer_loss(g, g.constant(logits), targets, mask))[0];
}

Var answer_loss(Graph& g, Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const auto t = masked_targets(targets, mask);
  return cross_entropy(g, logits, t);
}

int sample_token(std::span<const double> logits, const DecodeConfig& cfg, Rng& rng) {
  if (logits.empty()) throw DimensionError("sample_token: empty logits");
  if (cfg.greedy || cfg.temperature <= 1e-12) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= cfg.temperature;
  const auto probs = softmax(scaled);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::size_t keep = 0;
  double mass = 0.0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    if (mass >= cfg.top_p) break;
  }
  double u = rng.uniform() * mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= probs[order[i]];
    if (u < 0.0) return static_cast<int>(order[i]);
  }
  return static_cast<int>(order[keep - 1]);
}

std::string decode(ToyDecoder& dec, const TokenSequence& seq, const DecodeConfig& cfg, Rng& rng) {
  const std::size_t n = seq.last_real() + 1;
  Matrix embeds(n, seq.embed.cols());
  std::copy_n(seq.embed.values().data(), n * seq.embed.cols(), embeds.values().data());
  std::vector<std::uint8_t> mask(seq.mask.begin(), seq.mask.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<int> generated;
  for (std::size_t step = 0; step < cfg.max_new_tokens && embeds.rows() <= dec.cfg.max_len; ++step) {
    Graph g;
    Var h = decoder_hidden(g, dec, g.constant(embeds), mask, {});
    const std::size_t last = embeds.rows() - 1;
    const Matrix& logits = g.value(decoder_logits(g, dec, h, std::span<const std::size_t>(&last, 1)));
    const int tok = sample_token(logits.row(0), cfg, rng);
    generated.push_back(tok);
    if (tok == vocab::kEos || embeds.rows() == dec.cfg.max_len) break;
    Matrix grown(embeds.rows() + 1, embeds.cols());
    std::copy_n(embeds.values().data(), embeds.size(), grown.values().data());
    const auto row = dec.token_embed.value.row(static_cast<std::size_t>(tok));
    std::copy(row.begin(), row.end(), grown.row(embeds.rows()).begin());
    embeds = std::move(grown);
    mask.push_back(1);
  }
  return render_tokens(generated);
}

std::string_view label_name(Label l) {
  switch (l) {
    case Label::NotDepressed: return "not_depressed";
    case Label::Depressed: return "depressed";
    case Label::Error: return "error";
  }
  return "?";
}

Label parse_response(std::string_view text, std::size_t negation_window) {
  static constexpr std::array<std::string_view, 14> kNegations = {
      "not", "no", "never", "isn't", "isnt", "wasn't", "nor", "neither", "without", "aren't", "doesn't", "don't", "hardly", "non"};
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));

  bool affirmative = false, negated = false;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    const auto pos = w.find("depress");
    if (pos == std::string::npos) continue;
    bool neg = w.starts_with("non") || w.starts_with("un");
    for (std::size_t k = 1; k <= negation_window && k <= i && !neg; ++k)
      neg = std::find(kNegations.begin(), kNegations.end(), words[i - k]) != kNegations.end();
    (neg ? negated : affirmative) = true;
  }
  if (affirmative && !negated) return Label::Depressed;
  if (negated && !affirmative) return Label::NotDepressed;
  return Label::Error;
}

}  // namespace scd
