#include "m2ctts/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "m2ctts/common.hpp"
#include "m2ctts/tensor_file.hpp"

namespace m2ctts {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

char speaker_char(Speaker s) { return s == Speaker::A ? 'A' : 'B'; }

Speaker parse_speaker(const std::string& s) {
  if (s == "A") return Speaker::A;
  if (s == "B") return Speaker::B;
  throw ValidationError("speaker must be \"A\" or \"B\", got \"" + s + "\"");
}

int Turn::num_frames() const { return mel ? static_cast<int>(mel->rows()) : 0; }

namespace {

std::string turn_name(const Turn& t) {
  return "turn " + t.dialogue_id + "/" + std::to_string(t.turn_index);
}

}  // namespace

void validate_turn(const Turn& turn, int vocab_size) {
  const auto n = turn.phoneme_ids.size();
  if (n == 0) throw ValidationError(turn_name(turn) + ": no phonemes");
  if (turn.durations.size() != n || turn.pitch.size() != n || turn.energy.size() != n)
    throw ValidationError(turn_name(turn) +
                          ": phoneme_ids, durations, pitch and energy must have equal length");
  if (turn.turn_index < 0) throw ValidationError(turn_name(turn) + ": negative turn_index");
  for (int id : turn.phoneme_ids)
    if (id < 0 || (vocab_size > 0 && id >= vocab_size))
      throw ValidationError(turn_name(turn) + ": phoneme id " + std::to_string(id) +
                            " outside vocabulary");
  for (int d : turn.durations)
    if (d < 1) throw ValidationError(turn_name(turn) + ": durations must be >= 1");
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(turn.pitch[i]) || !std::isfinite(turn.energy[i]))
      throw ValidationError(turn_name(turn) + ": non-finite pitch or energy");
  if (!turn.mel) throw ValidationError(turn_name(turn) + ": mel not loaded");
  if (turn.mel->cols() != kMelChannels)
    throw ValidationError(turn_name(turn) + ": mel must have " + std::to_string(kMelChannels) +
                          " channels, got " + std::to_string(turn.mel->cols()));
  const long total = std::accumulate(turn.durations.begin(), turn.durations.end(), 0L);
  if (total != turn.mel->rows())
    throw ValidationError(turn_name(turn) + ": durations sum to " + std::to_string(total) +
                          " but mel has " + std::to_string(turn.mel->rows()) + " frames");
}

void validate_dialogue(const Dialogue& dialogue) {
  for (size_t i = 0; i < dialogue.turns.size(); ++i) {
    const Turn& t = dialogue.turns[i];
    if (t.turn_index != static_cast<int>(i))
      throw ValidationError("dialogue " + dialogue.dialogue_id + ": expected turn_index " +
                            std::to_string(i) + ", found " + std::to_string(t.turn_index) +
                            " (gap or duplicate in turn indices)");
    if (i > 0 && t.speaker == dialogue.turns[i - 1].speaker)
      throw ValidationError("dialogue " + dialogue.dialogue_id + ": speakers do not alternate at turn " +
                            std::to_string(i));
  }
}

std::string manifest_record(const Turn& turn) {
  ordered_json j;
  j["dialogue_id"] = turn.dialogue_id;
  j["turn_index"] = turn.turn_index;
  j["speaker"] = std::string(1, speaker_char(turn.speaker));
  j["text"] = turn.text;
  j["phoneme_ids"] = turn.phoneme_ids;
  j["durations"] = turn.durations;
  j["pitch"] = turn.pitch;
  j["energy"] = turn.energy;
  j["mel_path"] = turn.mel_path;
  return j.dump();
}

std::vector<Dialogue> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  const fs::path root = path.parent_path();

  std::map<std::string, std::vector<Turn>> grouped;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    Turn turn;
    try {
      const auto j = nlohmann::json::parse(line);
      turn.dialogue_id = j.at("dialogue_id").get<std::string>();
      turn.turn_index = j.at("turn_index").get<int>();
      turn.speaker = parse_speaker(j.at("speaker").get<std::string>());
      turn.text = j.at("text").get<std::string>();
      turn.phoneme_ids = j.at("phoneme_ids").get<std::vector<int>>();
      turn.durations = j.at("durations").get<std::vector<int>>();
      turn.pitch = j.at("pitch").get<std::vector<double>>();
      turn.energy = j.at("energy").get<std::vector<double>>();
      turn.mel_path = j.at("mel_path").get<std::string>();
      for (const auto& item : j.items()) {
        static const char* known[] = {"dialogue_id", "turn_index", "speaker", "text", "phoneme_ids",
                                      "durations",   "pitch",      "energy",  "mel_path"};
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return item.key() == k; }) == std::end(known))
          throw ValidationError("unknown field \"" + item.key() + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": malformed record: " + e.what());
    }
    try {
      const fs::path mel_file = fs::path(turn.mel_path).is_absolute() ? fs::path(turn.mel_path)
                                                                      : root / turn.mel_path;
      turn.mel = std::make_shared<const Matrix>(read_tensor(mel_file).to_matrix());
      validate_turn(turn);
    } catch (const Error& e) {
      throw ValidationError(where + ": " + e.what());
    }
    grouped[turn.dialogue_id].push_back(std::move(turn));
  }

  std::vector<Dialogue> dialogues;
  for (auto& [id, turns] : grouped) {
    std::stable_sort(turns.begin(), turns.end(),
                     [](const Turn& a, const Turn& b) { return a.turn_index < b.turn_index; });
    Dialogue d{id, std::move(turns)};
    validate_dialogue(d);
    dialogues.push_back(std::move(d));
  }
  return dialogues;
}

ConversationWindow window(const Dialogue& dialogue, int t, int c) {
  if (t < 0 || t >= static_cast<int>(dialogue.turns.size()))
    throw std::out_of_range("window: turn " + std::to_string(t) + " outside dialogue " +
                            dialogue.dialogue_id + " with " +
                            std::to_string(dialogue.turns.size()) + " turns");
  if (c < 0) throw std::invalid_argument("window: memory capacity must be >= 0");
  ConversationWindow w;
  for (int i = std::max(0, t - c); i < t; ++i) w.history.push_back(dialogue.turns[static_cast<size_t>(i)]);
  w.current = dialogue.turns[static_cast<size_t>(t)];
  return w;
}

std::vector<ConversationWindow> all_windows(const std::vector<Dialogue>& dialogues, int c) {
  std::vector<ConversationWindow> out;
  for (const auto& d : dialogues)
    for (int t = 0; t < static_cast<int>(d.turns.size()); ++t) out.push_back(window(d, t, c));
  return out;
}

namespace {

constexpr const char* kSyllables[] = {
    "ka", "to", "mi", "re", "su", "no", "ha", "ri", "po", "la", "de", "yu", "shi", "ne",
    "go", "ta", "be", "mo", "ki", "za", "ru", "se", "fa", "wo", "chi", "na", "pe", "ji",
    "ho", "bu", "te", "me", "ga", "ro", "ni", "so", "da", "hi", "ku", "ma", "pi", "lu"};
constexpr int kNumSyllables = static_cast<int>(std::size(kSyllables));

double round4(double x) { return std::round(x * 1e4) / 1e4; }

}  // namespace

std::vector<Dialogue> make_toy_dialogues(std::uint64_t seed, int n_dialogues, int turns_per_dialogue,
                                         const ToyCorpusOptions& options) {
  if (n_dialogues < 1) throw std::invalid_argument("gen_toy_corpus: n_dialogues must be >= 1");
  if (turns_per_dialogue < 2)
    throw std::invalid_argument("gen_toy_corpus: turns_per_dialogue must be >= 2");

  // Corpus-wide acoustic identity of each phoneme and speaker.
  Rng table_rng(stream_seed(seed, "toy-tables"));
  Matrix phone_table(options.vocab_size, kMelChannels);
  for (Eigen::Index i = 0; i < phone_table.size(); ++i) phone_table.data()[i] = table_rng.normal();
  Matrix speaker_table(2, kMelChannels);
  for (Eigen::Index i = 0; i < speaker_table.size(); ++i)
    speaker_table.data()[i] = 0.3 * table_rng.normal();

  std::vector<Dialogue> out;
  for (int di = 0; di < n_dialogues; ++di) {
    char id_buf[16];
    std::snprintf(id_buf, sizeof(id_buf), "d%04d", di);
    const std::string dialogue_id = id_buf;
    Dialogue& dialogue = out.emplace_back();
    dialogue.dialogue_id = dialogue_id;
    Rng rng(stream_seed(seed, "toy-dialogue-" + dialogue_id));
    const Speaker first = rng.uniform() < 0.5 ? Speaker::A : Speaker::B;
    // Turn-level prosody drifts through the dialogue, so history predicts it.
    double pitch_level = rng.normal();
    double energy_level = rng.normal();
    for (int t = 0; t < turns_per_dialogue; ++t) {
      Turn turn;
      turn.dialogue_id = dialogue_id;
      turn.turn_index = t;
      turn.speaker = static_cast<Speaker>((static_cast<int>(first) + t) % 2);
      pitch_level = 0.6 * pitch_level + 0.4 * rng.normal();
      energy_level = 0.6 * energy_level + 0.4 * rng.normal();

      const int n_ph = rng.uniform_int(options.min_phonemes, options.max_phonemes);
      const int frames = rng.uniform_int(std::max(options.min_frames, n_ph), options.max_frames);
      for (int p = 0; p < n_ph; ++p) turn.phoneme_ids.push_back(rng.uniform_int(1, options.vocab_size - 1));
      turn.durations.assign(static_cast<size_t>(n_ph), 1);
      for (int extra = frames - n_ph; extra > 0; --extra)
        ++turn.durations[static_cast<size_t>(rng.uniform_int(0, n_ph - 1))];

      for (int p = 0; p < n_ph; ++p) {
        turn.text += kSyllables[turn.phoneme_ids[static_cast<size_t>(p)] % kNumSyllables];
        if (p % 2 == 1 && p + 1 < n_ph) turn.text += ' ';
        turn.pitch.push_back(round4(pitch_level + 0.3 * rng.normal()));
        turn.energy.push_back(round4(energy_level + 0.3 * rng.normal()));
      }

      Matrix mel(frames, kMelChannels);
      int f = 0;
      for (int p = 0; p < n_ph; ++p) {
        const auto pi = static_cast<size_t>(p);
        for (int k = 0; k < turn.durations[pi]; ++k, ++f) {
          for (int ch = 0; ch < kMelChannels; ++ch) {
            const double band = std::cos(std::numbers::pi * ch / kMelChannels);
            mel(f, ch) = phone_table(turn.phoneme_ids[pi], ch) +
                         speaker_table(static_cast<int>(turn.speaker), ch) +
                         0.5 * turn.pitch[pi] * band + 0.5 * turn.energy[pi] +
                         0.05 * rng.normal();
          }
        }
      }
      turn.mel_path = "mels/" + dialogue_id + "/" + std::to_string(t) + ".mel.m2ct";
      // Stored at file precision so the in-memory and on-disk corpora agree.
      turn.mel = std::make_shared<const Matrix>(mel.cast<float>().cast<double>());
      dialogue.turns.push_back(std::move(turn));
    }
  }
  return out;
}

fs::path gen_toy_corpus(std::uint64_t seed, int n_dialogues, int turns_per_dialogue,
                        const fs::path& out_dir, const ToyCorpusOptions& options) {
  const auto dialogues = make_toy_dialogues(seed, n_dialogues, turns_per_dialogue, options);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw Error("gen_toy_corpus: cannot create output directory " + out_dir.string());
  const fs::path manifest = out_dir / "manifest.jsonl";
  std::string records;
  for (const auto& d : dialogues) {
    for (const auto& turn : d.turns) {
      write_tensor(out_dir / turn.mel_path, Tensor::from_matrix(*turn.mel));
      records += manifest_record(turn);
      records += '\n';
    }
  }
  write_file_bytes(manifest, records);
  return manifest;
}

}  // namespace m2ctts
