// Command-line driver: synth -> prep -> pretrain -> train -> infer / eval -> report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "scd/config.hpp"
#include "scd/data.hpp"
#include "scd/eval.hpp"
#include "scd/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
};

scd::Config resolve_config(const Globals& g) {
  scd::Config base = scd::preset(g.preset);
  scd::Config c = base;
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw scd::ConfigError("cannot open config " + g.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw scd::ConfigError("config " + g.config_path + ": " + e.what());
    }
    c = scd::config_from_json(j, base);
  }
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int run_synth(const scd::Config& c, const fs::path& out) {
  fs::create_directories(out);
  const auto samples = scd::synth(c.data.gen, c.seed);
  std::map<std::string, std::vector<scd::Sample>> by_dataset;
  for (const auto& s : samples) by_dataset[s.dataset()].push_back(s);
  for (const auto& [name, list] : by_dataset) {
    scd::write_jsonl(out / (name + ".jsonl"), list);
    std::cerr << "wrote " << list.size() << " samples to " << (out / (name + ".jsonl")).string() << "\n";
  }
  return 0;
}

int run_prep(const scd::Config& c, const std::vector<std::string>& inputs, const fs::path& out) {
  std::vector<scd::Sample> all;
  for (const auto& in : inputs) {
    auto part = scd::read_jsonl(in);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  const scd::PrepResult r = scd::prepare(all, c.data.prep, c.seed);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  fs::create_directories(out);
  scd::write_jsonl(out / "train.jsonl", r.train);
  scd::write_jsonl(out / "test.jsonl", r.test);
  std::cerr << "train " << r.train.size() << " / test " << r.test.size() << " samples\n";
  return 0;
}

int run_pretrain(const scd::Config& c, const fs::path& data, const fs::path& out) {
  scd::Model m = scd::make_model(c);
  const scd::TrainState st = scd::pretrain_encoders(m, scd::read_jsonl(data), &std::cerr);
  ensure_parent(out);
  scd::save_checkpoint(out, m, st);
  return 0;
}

int run_train(const scd::Config& c, const fs::path& data, const std::string& init, bool joint, const fs::path& out) {
  scd::Config cfg = c;
  if (joint) cfg.train.freeze_encoders = false;
  scd::Model m = scd::make_model(cfg);
  if (!init.empty()) {
    scd::load_checkpoint(init, m);
  } else if (!joint) {
    throw scd::ConfigError("train needs --init <pretrained checkpoint> or --joint");
  }
  const scd::TrainState st = scd::train(m, scd::read_jsonl(data), &std::cerr);
  ensure_parent(out);
  scd::save_checkpoint(out, m, st);
  return 0;
}

int run_infer(const scd::Config& c, const fs::path& ckpt, const fs::path& data, const scd::ModalityConfig& mc,
              const fs::path& out) {
  scd::Model m = scd::make_model(c);
  scd::load_checkpoint(ckpt, m);
  auto items = scd::prepare_inputs(m, scd::read_jsonl(data), !mc.audio, !mc.video);
  scd::cache_features(m, items);
  ensure_parent(out);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw scd::DataError("cannot write " + out.string());
  for (const auto& p : items) {
    const scd::Prediction pr = scd::predict(m, p, c.seed);
    os << json{{"id", pr.id},
               {"participant_id", pr.participant_id},
               {"path", scd::path_name(pr.path)},
               {"response", pr.response},
               {"predicted", scd::label_name(pr.predicted)}}
              .dump()
       << '\n';
  }
  return 0;
}

int run_eval(const scd::Config& c, const fs::path& ckpt, const fs::path& data, const scd::ModalityConfig& mc,
             const fs::path& out) {
  scd::Model m = scd::make_model(c);
  scd::load_checkpoint(ckpt, m);
  const scd::EvalReport r = scd::evaluate(m, scd::read_jsonl(data), mc, c.seed);
  ensure_parent(out);
  std::ofstream os(out, std::ios::binary);
  os << scd::to_json(r).dump(2) << '\n';
  if (!os) throw scd::DataError("cannot write " + out.string());
  const auto& all = r.datasets.at("ALL");
  const scd::Metrics pm = scd::metrics(all.participants);
  std::cerr << mc.name() << ": participant accuracy " << pm.accuracy << " macro F1 " << pm.f1 << "\n";
  return 0;
}

int run_report(const std::vector<std::string>& inputs, const fs::path& out) {
  std::vector<scd::EvalReport> reports;
  for (const auto& in : inputs) {
    std::ifstream is(in);
    if (!is) throw scd::DataError("cannot open " + in);
    try {
      reports.push_back(scd::report_from_json(json::parse(is)));
    } catch (const json::parse_error& e) {
      throw scd::DataError(in + ": " + e.what());
    }
  }
  scd::write_reports(reports, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scd: multimodal depression recognition at desk scale"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--preset", g.preset, "base preset: desk or full");
  app.add_option("--seed", g.seed, "seed (overrides the config)");

  std::string out, data, ckpt, init;
  std::vector<std::string> inputs;
  bool drop_audio = false, drop_video = false, joint = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-source corpus");
  synth->add_option("--out", out, "output directory")->required();

  auto* prep = app.add_subcommand("prep", "unify, window, split QA pairs and rebalance");
  prep->add_option("--in", inputs, "input .jsonl files")->required();
  prep->add_option("--out", out, "output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the audio/video encoders and fusion");
  pretrain->add_option("--data", data, "training .jsonl")->required();
  pretrain->add_option("--out", out, "checkpoint to write")->required();

  auto* train = app.add_subcommand("train", "fine-tune LoRA, adapters and the shared projection");
  train->add_option("--data", data, "training .jsonl")->required();
  train->add_option("--init", init, "pretrained checkpoint");
  train->add_flag("--joint", joint, "train the encoders too (no pretrained checkpoint needed)");
  train->add_option("--out", out, "checkpoint to write")->required();

  auto* infer = app.add_subcommand("infer", "write one decoded answer per sample");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under a modality configuration");
  for (auto* sc : {infer, eval}) {
    sc->add_option("--checkpoint", ckpt, "checkpoint")->required();
    sc->add_option("--data", data, ".jsonl to run on")->required();
    sc->add_option("--out", out, "output file")->required();
    sc->add_flag("--drop-audio", drop_audio, "treat audio as missing");
    sc->add_flag("--drop-video", drop_video, "treat video as missing");
  }

  auto* report = app.add_subcommand("report", "merge eval outputs into report.json/.csv/.md");
  report->add_option("--in", inputs, "eval output files")->required();
  report->add_option("--out-dir", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*report) return run_report(inputs, out);
    const scd::Config c = resolve_config(g);
    const scd::ModalityConfig mc{!drop_audio, !drop_video};
    if (*synth) return run_synth(c, out);
    if (*prep) return run_prep(c, inputs, out);
    if (*pretrain) return run_pretrain(c, data, out);
    if (*train) return run_train(c, data, init, joint, out);
    if (*infer) return run_infer(c, ckpt, data, mc, out);
    if (*eval) return run_eval(c, ckpt, data, mc, out);
  } catch (const scd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const scd::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const scd::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
