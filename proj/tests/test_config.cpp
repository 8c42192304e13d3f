#include <doctest.h>

#include "m2ctts/config.hpp"
#include "support.hpp"

using namespace m2ctts;

TEST_SUITE("config") {
  TEST_CASE("json round trip preserves every key") {
    RunConfig c;
    c.model = ModelConfig::compact();
    c.model.memory_capacity = 6;
    c.train.learning_rate = 3e-4;
    c.train.seed = 99;
    c.train.prosody_reduction = Reduction::Sum;
    c.ablation = AblationConfig::parse("tum+wpm");
    c.extractor_mode = ExtractorMode::Cache;
    c.corpus = "x/manifest.jsonl";
    const auto j = c.to_json();
    CHECK(j["memory_capacity"] == 6);
    CHECK(j["ablation"] == "tum+wpm");
    CHECK(j["extractor_mode"] == "cache");
    CHECK(j["prosody_reduction"] == "sum");
    const RunConfig back = RunConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.ablation == c.ablation);
    CHECK(back.fingerprint() == c.fingerprint());
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json(nlohmann::json{{"learning_rte", 1}}),
                         doctest::Contains("learning_rte"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"d_model", "wide"}}), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"d_model", 15}}), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"heads", 3}}), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json{{"extractor_mode", "live"}}), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::array()), ValidationError);
  }

  TEST_CASE("set parses values as json or strings") {
    RunConfig c;
    c.set("learning_rate", "0.5");
    CHECK(c.train.learning_rate == 0.5);
    c.set("ablation", "M3");
    CHECK(c.ablation == AblationConfig::named("M3"));
    c.set("corpus", "123");
    CHECK(c.corpus == "123");
    c.set("wpm_speaker_embedding", "false");
    CHECK_FALSE(c.model.wpm_speaker_embedding);
    CHECK_THROWS_AS(c.set("nope", "1"), ValidationError);
    CHECK_THROWS_AS(c.set("batch_size", "many"), ValidationError);
  }

  TEST_CASE("load reads a file") {
    testing::TempDir dir("config");
    write_file_bytes(dir.path / "c.json", R"({"d_model": 32, "steps": 7})");
    const RunConfig c = RunConfig::load(dir.path / "c.json");
    CHECK(c.model.d_model == 32);
    CHECK(c.train.steps == 7);
    write_file_bytes(dir.path / "bad.json", "{");
    CHECK_THROWS_AS(RunConfig::load(dir.path / "bad.json"), ValidationError);
    CHECK_THROWS_AS(RunConfig::load(dir.path / "missing.json"), ValidationError);
  }

  TEST_CASE("fingerprint ignores run-control keys only") {
    RunConfig a;
    RunConfig b = a;
    b.train.steps = 5;
    b.corpus = "elsewhere";
    b.log_every = 1;
    b.checkpoint_every = 3;
    CHECK(a.fingerprint() == b.fingerprint());
    b.train.learning_rate *= 2;
    CHECK(a.fingerprint() != b.fingerprint());
    RunConfig c = a;
    c.ablation = AblationConfig::named("M1");
    CHECK(a.fingerprint() != c.fingerprint());
  }

  TEST_CASE("ablation matrix") {
    struct Row {
      const char* name;
      bool tum, wum, tpm, wpm;
    };
    const Row rows[] = {{"M1", false, false, false, false}, {"M2", true, false, false, false},
                        {"M3", false, true, false, false},  {"M4", true, false, true, false},
                        {"M5", false, true, false, true},   {"M6", true, true, false, false},
                        {"M7", true, true, true, true}};
    for (const auto& r : rows) {
      const auto a = AblationConfig::named(r.name);
      CHECK(a.tum == r.tum);
      CHECK(a.wum == r.wum);
      CHECK(a.tpm == r.tpm);
      CHECK(a.wpm == r.wpm);
    }
    CHECK(AblationConfig::parse("tum+tpm").name == "M4");
    CHECK(AblationConfig::parse("none").name == "M1");
    CHECK(AblationConfig::parse("tpm").name == "custom");
    CHECK_THROWS_AS(AblationConfig::named("M8"), ValidationError);
    CHECK_THROWS_AS(AblationConfig::parse("tum+xyz"), ValidationError);
  }

  TEST_CASE("model validation") {
    CHECK_NOTHROW(ModelConfig{}.validate());
    CHECK_NOTHROW(ModelConfig::compact().validate());
    ModelConfig c = ModelConfig::compact();
    c.ffn_kernel = 4;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = ModelConfig::compact();
    c.pitch_max = c.pitch_min;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = ModelConfig::compact();
    c.dims.text_sequence = 7;
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }
}
