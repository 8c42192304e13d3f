#pragma once

// Conversational corpus data model: turns, dialogues, manifest ingestion,
// conversation windows and the deterministic toy-corpus generator.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "m2ctts/autograd.hpp"

namespace m2ctts {

inline constexpr int kMelChannels = 80;
inline constexpr int kSampleRate = 22050;

enum class Speaker : std::uint8_t { A = 0, B = 1 };

char speaker_char(Speaker s);
Speaker parse_speaker(const std::string& s);

/// One dialogue turn with its oracle alignment and acoustic targets.
struct Turn {
  std::string dialogue_id;
  int turn_index = 0;
  Speaker speaker = Speaker::A;
  std::string text;
  std::vector<int> phoneme_ids;
  std::vector<int> durations;  // frames per phoneme
  std::vector<double> pitch;   // per phoneme
  std::vector<double> energy;  // per phoneme
  std::string mel_path;        // as written in the manifest
  /// T x 80, frames as rows. Shared so windows copy cheaply.
  std::shared_ptr<const Matrix> mel;

  int num_phonemes() const { return static_cast<int>(phoneme_ids.size()); }
  int num_frames() const;
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Turn> turns;
};

/// History turns (oldest first, at most c of them) plus the turn to synthesize.
struct ConversationWindow {
  std::vector<Turn> history;
  Turn current;
};

/// Checks every Turn invariant; throws ValidationError naming the turn.
void validate_turn(const Turn& turn, int vocab_size = -1);
/// Checks consecutive turn indices and strict speaker alternation.
void validate_dialogue(const Dialogue& dialogue);

/// Parses a line-delimited JSON manifest. Mel paths are resolved relative to
/// the manifest directory and loaded eagerly. Dialogues are ordered by id and
/// turns by index, so line order in the file does not matter.
std::vector<Dialogue> load_manifest(const std::filesystem::path& path);

/// Serialises one turn as a manifest record (without trailing newline).
std::string manifest_record(const Turn& turn);

/// Conversation window ending at turn t with memory capacity c. History is
/// truncated at the dialogue start.
ConversationWindow window(const Dialogue& dialogue, int t, int c);

/// Every window of every dialogue, in dialogue order then turn order.
std::vector<ConversationWindow> all_windows(const std::vector<Dialogue>& dialogues, int c);

struct ToyCorpusOptions {
  int vocab_size = 40;  // ids drawn from [1, vocab_size)
  int min_phonemes = 4;
  int max_phonemes = 16;
  int min_frames = 20;
  int max_frames = 80;
};

/// The toy corpus in memory, identical to what gen_toy_corpus writes.
std::vector<Dialogue> make_toy_dialogues(std::uint64_t seed, int n_dialogues, int turns_per_dialogue,
                                         const ToyCorpusOptions& options = {});

/// Writes `manifest.jsonl` and per-turn mel files under out_dir. Output is a
/// pure function of the arguments. Returns the manifest path.
std::filesystem::path gen_toy_corpus(std::uint64_t seed, int n_dialogues, int turns_per_dialogue,
                                     const std::filesystem::path& out_dir,
                                     const ToyCorpusOptions& options = {});

}  // namespace m2ctts
