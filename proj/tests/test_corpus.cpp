#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "m2ctts/corpus.hpp"
#include "m2ctts/tensor_file.hpp"
#include "support.hpp"

using namespace m2ctts;

namespace {

std::vector<int> indices(const std::vector<Turn>& turns) {
  std::vector<int> out;
  for (const auto& t : turns) out.push_back(t.turn_index);
  return out;
}

Turn bare_turn(const std::string& did, int index) {
  Turn t;
  t.dialogue_id = did;
  t.turn_index = index;
  return t;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  write_file_bytes(p, s);
}

bool same_corpus(const std::vector<Dialogue>& a, const std::vector<Dialogue>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].dialogue_id != b[i].dialogue_id || a[i].turns.size() != b[i].turns.size()) return false;
    for (size_t j = 0; j < a[i].turns.size(); ++j) {
      const Turn &x = a[i].turns[j], &y = b[i].turns[j];
      if (x.turn_index != y.turn_index || x.speaker != y.speaker || x.text != y.text ||
          x.phoneme_ids != y.phoneme_ids || x.durations != y.durations || x.pitch != y.pitch ||
          x.energy != y.energy || *x.mel != *y.mel)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("window examples") {
    Dialogue d;
    d.dialogue_id = "x";
    for (int i = 0; i < 10; ++i) d.turns.push_back(bare_turn("x", i));
    auto w = window(d, 7, 4);
    CHECK(indices(w.history) == std::vector<int>{3, 4, 5, 6});
    CHECK(w.current.turn_index == 7);
    CHECK(window(d, 0, 4).history.empty());
    CHECK(window(d, 0, 4).current.turn_index == 0);
    CHECK(indices(window(d, 2, 4).history) == std::vector<int>{0, 1});
    CHECK(window(d, 5, 0).history.empty());
    CHECK_THROWS_AS(window(d, 10, 4), std::out_of_range);
    CHECK_THROWS_AS(window(d, -1, 4), std::out_of_range);
    CHECK_THROWS_AS(window(d, 3, -1), std::invalid_argument);
  }

  TEST_CASE("window matches an index-filter oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      const int n = rng.uniform_int(1, 15), t = rng.uniform_int(0, n - 1), c = rng.uniform_int(0, 10);
      Dialogue d;
      for (int i = 0; i < n; ++i) d.turns.push_back(bare_turn("", i));
      std::vector<int> expected;
      for (int i = 0; i < n; ++i)
        if (t - c <= i && i < t) expected.push_back(i);
      CHECK(indices(window(d, t, c).history) == expected);
    }
  }

  TEST_CASE("all_windows covers every turn in order") {
    Rng rng(12);
    const std::vector<Dialogue> ds = {testing::make_dialogue(rng, "a", 3), testing::make_dialogue(rng, "b", 2)};
    const auto ws = all_windows(ds, 1);
    REQUIRE(ws.size() == 5);
    CHECK(ws[0].current.dialogue_id == "a");
    CHECK(ws[2].history.size() == 1);
    CHECK(ws[2].history[0].turn_index == 1);
    CHECK(ws[3].current.dialogue_id == "b");
    CHECK(ws[3].history.empty());
  }

  TEST_CASE("validate_turn") {
    Rng rng(13);
    Turn good = testing::make_turn(rng, "v", 0, 3, 7);
    CHECK_NOTHROW(validate_turn(good, 40));
    Turn t = good;
    t.durations[0] -= 1;  // sums to 6, mel has 7 frames
    CHECK_THROWS_WITH_AS(validate_turn(t), doctest::Contains("v/0"), ValidationError);
    t = good;
    t.pitch.pop_back();
    CHECK_THROWS_AS(validate_turn(t), ValidationError);
    t = good;
    t.phoneme_ids[1] = 40;
    CHECK_THROWS_AS(validate_turn(t, 40), ValidationError);
    CHECK_NOTHROW(validate_turn(t));
    t = good;
    t.durations = {0, 3, 4};
    CHECK_THROWS_AS(validate_turn(t), ValidationError);
    t = good;
    t.energy[2] = std::nan("");
    CHECK_THROWS_AS(validate_turn(t), ValidationError);
    t = good;
    t.mel = std::make_shared<const Matrix>(Matrix::Zero(7, 79));
    CHECK_THROWS_AS(validate_turn(t), ValidationError);
    t = good;
    t.mel.reset();
    CHECK_THROWS_AS(validate_turn(t), ValidationError);
    t = good;
    t.phoneme_ids.clear();
    t.durations.clear();
    t.pitch.clear();
    t.energy.clear();
    CHECK_THROWS_AS(validate_turn(t), ValidationError);
  }

  TEST_CASE("validate_dialogue") {
    Rng rng(14);
    Dialogue d = testing::make_dialogue(rng, "v", 3);
    CHECK_NOTHROW(validate_dialogue(d));
    Dialogue gap = d;
    gap.turns[2].turn_index = 3;
    CHECK_THROWS_AS(validate_dialogue(gap), ValidationError);
    Dialogue same = d;
    same.turns[1].speaker = same.turns[0].speaker;
    CHECK_THROWS_AS(validate_dialogue(same), ValidationError);
  }

  TEST_CASE("speaker parsing") {
    CHECK(parse_speaker("A") == Speaker::A);
    CHECK(parse_speaker("B") == Speaker::B);
    CHECK_THROWS_AS(parse_speaker("C"), ValidationError);
    CHECK(speaker_char(Speaker::B) == 'B');
  }

  TEST_CASE("load_manifest groups 2 dialogues x 3 turns") {
    testing::TempDir dir("manifest");
    const auto manifest = gen_toy_corpus(3, 2, 3, dir.path);
    const auto ds = load_manifest(manifest);
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].turns.size() == 3);
    CHECK(ds[1].turns.size() == 3);
    CHECK(ds[0].dialogue_id == "d0000");
    for (const auto& d : ds)
      for (const auto& t : d.turns) CHECK(t.mel->cols() == kMelChannels);
  }

  TEST_CASE("load_manifest is invariant to line order") {
    testing::TempDir dir("shuffle");
    const auto manifest = gen_toy_corpus(4, 3, 4, dir.path);
    const auto sorted = load_manifest(manifest);
    auto lines = read_lines(manifest);
    Rng rng(5);
    for (int k = 0; k < 5; ++k) {
      for (size_t i = lines.size() - 1; i > 0; --i)
        std::swap(lines[i], lines[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
      write_lines(dir.path / "shuffled.jsonl", lines);
      CHECK(same_corpus(load_manifest(dir.path / "shuffled.jsonl"), sorted));
    }
  }

  TEST_CASE("load_manifest errors name the line and turn") {
    testing::TempDir dir("errors");
    const auto manifest = gen_toy_corpus(5, 1, 2, dir.path);
    auto lines = read_lines(manifest);

    auto with_line = [&](size_t i, const std::string& replacement) {
      auto copy = lines;
      copy[i] = replacement;
      write_lines(dir.path / "bad.jsonl", copy);
      return dir.path / "bad.jsonl";
    };
    auto record = nlohmann::json::parse(lines[1]);
    auto durations = record["durations"].get<std::vector<int>>();
    durations[0] += 1;
    record["durations"] = durations;
    CHECK_THROWS_WITH_AS(load_manifest(with_line(1, record.dump())),
                         doctest::Contains("bad.jsonl:2"), ValidationError);
    CHECK_THROWS_WITH_AS(load_manifest(with_line(1, record.dump())), doctest::Contains("d0000/1"),
                         ValidationError);

    auto extra = nlohmann::json::parse(lines[0]);
    extra["emotion"] = "happy";
    CHECK_THROWS_WITH_AS(load_manifest(with_line(0, extra.dump())), doctest::Contains("emotion"), ValidationError);

    auto missing = nlohmann::json::parse(lines[0]);
    missing.erase("pitch");
    CHECK_THROWS_AS(load_manifest(with_line(0, missing.dump())), ValidationError);
    CHECK_THROWS_AS(load_manifest(with_line(0, "{not json")), ValidationError);

    auto dup = lines;
    dup.push_back(lines[1]);
    write_lines(dir.path / "dup.jsonl", dup);
    CHECK_THROWS_AS(load_manifest(dir.path / "dup.jsonl"), ValidationError);

    std::filesystem::remove(dir.path / "mels" / "d0000" / "1.mel.m2ct");
    CHECK_THROWS_WITH_AS(load_manifest(manifest), doctest::Contains(":2"), ValidationError);
    CHECK_THROWS_AS(load_manifest(dir.path / "absent.jsonl"), ValidationError);
  }

  TEST_CASE("manifest_record field order") {
    Rng rng(15);
    const Turn t = testing::make_turn(rng, "r", 1, 2, 3);
    const std::string rec = manifest_record(t);
    CHECK(rec.find("\"dialogue_id\"") < rec.find("\"turn_index\""));
    CHECK(rec.find("\"energy\"") < rec.find("\"mel_path\""));
    CHECK(rec.find("\"speaker\":\"B\"") != std::string::npos);
  }

  TEST_CASE("toy corpus is deterministic and seed-dependent") {
    testing::TempDir a("toy-a"), b("toy-b"), c("toy-c");
    gen_toy_corpus(7, 2, 4, a.path);
    gen_toy_corpus(7, 2, 4, b.path);
    gen_toy_corpus(8, 2, 4, c.path);
    CHECK(read_file_bytes(a.path / "manifest.jsonl") == read_file_bytes(b.path / "manifest.jsonl"));
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path / "mels")) {
      if (!entry.is_regular_file()) continue;
      const auto rel = std::filesystem::relative(entry.path(), a.path);
      CHECK(read_file_bytes(entry.path()) == read_file_bytes(b.path / rel));
    }
    CHECK(read_file_bytes(a.path / "manifest.jsonl") != read_file_bytes(c.path / "manifest.jsonl"));
  }

  TEST_CASE("generated corpus loads cleanly and matches the in-memory generator") {
    testing::TempDir dir("toy");
    const auto loaded = load_manifest(gen_toy_corpus(7, 2, 4, dir.path));
    const auto memory = make_toy_dialogues(7, 2, 4);
    CHECK(same_corpus(loaded, memory));
    for (const auto& d : loaded) {
      CHECK_NOTHROW(validate_dialogue(d));
      for (const auto& t : d.turns) CHECK_NOTHROW(validate_turn(t, ToyCorpusOptions{}.vocab_size));
    }
  }

  TEST_CASE("toy corpus argument checks") {
    CHECK_THROWS_AS(make_toy_dialogues(1, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS(make_toy_dialogues(1, 2, 1), std::invalid_argument);
  }
}
