#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "scd/config.hpp"

using namespace scd;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SCD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path scratch() {
  const auto dir = std::filesystem::temp_directory_path() / "scd_cli_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config defaults and overlays") {
  const Config d = default_config();
  CHECK(d.model.decoder.layers == 2);
  CHECK(d.model.decoder.d_model == 64);
  CHECK(d.model.decoder.heads == 4);
  CHECK(d.model.decoder.lora.rank == 4);
  CHECK(d.model.decoder.lora.alpha == 16.0);
  CHECK(d.model.decoder.lora.dropout == 0.05);
  CHECK(d.fusion.n_tokens == 4);
  CHECK(d.fusion.d_tokens == 32);
  CHECK(d.fusion.heads == 4);
  CHECK(d.eval.decode.top_p == 0.9);
  CHECK(d.eval.decode.temperature == 1.0);
  CHECK(d.data.prep.win_s == 180.0);
  CHECK(d.data.prep.unify.decimation == 6);

  const Config c = config_from_json(json{{"seed", 9}, {"model", {{"lora", {{"rank", 8}}}}}, {"train", {{"steps", 5}}}});
  CHECK(c.seed == 9);
  CHECK(c.model.decoder.lora.rank == 8);
  CHECK(c.model.decoder.lora.alpha == 16.0);
  CHECK(c.train.steps == 5);
  CHECK(to_json(config_from_json(to_json(c))) == to_json(c));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(config_from_json(json{{"modle", json::object()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"depth", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"heads", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"layers", -1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"layers", "two"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"eval", {{"top_p", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"fusion", {{"head_merge", "max"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"data", {{"gen", {{"missing_audio", 2.0}}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"preset", "huge"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
  try {
    config_from_json(json{{"train", {{"lr", "fast"}}}});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/train/lr") != std::string::npos);
  }
}

TEST_CASE("presets") {
  const Config p = preset("full");
  CHECK(p.model.decoder.lora.rank == 64);
  CHECK(p.model.decoder.lora.alpha == 16.0);
  CHECK(p.model.decoder.lora.dropout == 0.05);
  CHECK(p.train.lr == 1e-5);
  CHECK(p.train.pretrain_lr == 1e-4);
  CHECK(p.train.pretrain_epochs == 100);
  CHECK(to_json(preset("desk")) == to_json(default_config()));
  CHECK(config_from_json(json{{"preset", "full"}}).model.decoder.lora.rank == 64);
}

TEST_CASE("config hash covers the shape sections only") {
  const Config a = default_config();
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) == config_hash(default_config()));
  Config b = a;
  b.train.steps = 3;
  b.seed = 99;
  b.data.gen.marker = "sad";
  CHECK(config_hash(b) == config_hash(a));
  b.model.decoder.d_model = 32;
  CHECK(config_hash(b) != config_hash(a));
  Config c = a;
  c.encoders.clusters = 4;
  CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("command-line exit codes") {
  const auto dir = scratch();
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("synth") == 2);

  std::ofstream(dir / "bad.json") << R"({"model": {"depth": 2}})";
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " synth --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("--config " + (dir / "missing.json").string() + " synth --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("--preset nope synth --out " + (dir / "x").string()) == 2);

  CHECK(run_cli("prep --in " + (dir / "none.jsonl").string() + " --out " + (dir / "p").string()) == 3);
  std::ofstream(dir / "broken.jsonl") << "{\"id\": \"a\"}\n";
  CHECK(run_cli("prep --in " + (dir / "broken.jsonl").string() + " --out " + (dir / "p").string()) == 3);

  std::ofstream(dir / "ckpt.json") << R"({"format": "scd-checkpoint", "version": 1, "config_hash": "0"})";
  std::ofstream(dir / "data.jsonl") << "";
  CHECK(run_cli("eval --checkpoint " + (dir / "ckpt.json").string() + " --data " + (dir / "data.jsonl").string() +
                " --out " + (dir / "r.json").string()) == 4);
  CHECK(run_cli("train --data " + (dir / "data.jsonl").string() + " --out " + (dir / "m.json").string()) == 2);
  std::filesystem::remove_all(dir);
}
