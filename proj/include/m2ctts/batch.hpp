#pragma once

// Right-padded batches of conversation windows with validity masks, plus the
// per-window context features each enabled context module consumes.

#include <span>
#include <vector>

#include "m2ctts/autograd.hpp"
#include "m2ctts/corpus.hpp"
#include "m2ctts/extractors.hpp"

namespace m2ctts {

using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Which features make_batch has to fetch.
struct FeatureNeeds {
  bool text_utterance = false;
  bool acoustic_utterance = false;  // history embeddings for the acoustic coarse module
  bool text_sequence = false;
  bool acoustic_sequence = false;
  bool prosody_target = false;  // acoustic embedding of the current turn

  static FeatureNeeds all() { return {true, true, true, true, true}; }
  static FeatureNeeds none() { return {}; }
};

/// Aggregated history feature rows for one fine-grained module, before
/// speaker/position addition and projection.
struct MemoryRows {
  Matrix features;            // M x D_f, zero rows past the real length
  std::vector<int> speaker;   // per row, 0 = A, 1 = B
  std::vector<int> position;  // per row, turn offset in the window (0 = oldest)
  Mask mask;                  // per row
};

struct WindowFeatures {
  Matrix history_text;      // c x D_u(text); rows past history length are zero
  Matrix history_acoustic;  // c x D_u(acoustic)
  Mask history_mask;        // c entries
  RowVector current_text;
  RowVector current_acoustic;  // prosody target
  MemoryRows text_memory;
  MemoryRows acoustic_memory;
};

struct Batch {
  std::vector<ConversationWindow> windows;
  int memory_capacity = 0;
  IntMatrix phonemes;       // B x N_max
  BoolMatrix phoneme_mask;  // B x N_max
  IntMatrix durations;      // B x N_max, zero at padding
  Matrix pitch;             // B x N_max
  Matrix energy;            // B x N_max
  std::vector<Matrix> mel;  // B entries, each T_max x 80
  BoolMatrix frame_mask;    // B x T_max
  std::vector<int> history_lengths;
  std::vector<WindowFeatures> features;

  int size() const { return static_cast<int>(windows.size()); }
  int max_phonemes() const { return static_cast<int>(phonemes.cols()); }
  int max_frames() const { return static_cast<int>(frame_mask.cols()); }
  Mask phoneme_row_mask(int b) const;
  Mask frame_row_mask(int b) const;
  std::vector<int> phoneme_row(int b) const;
  std::vector<int> duration_row(int b) const;
};

/// Pads to the longest window on the right. Every window must have at most
/// `c` history turns. Fine-grained memories are padded to the batch maximum.
Batch make_batch(std::span<const ConversationWindow> windows, int pad_phoneme_id, int c,
                 FeatureProvider& features, FeatureNeeds needs);

}  // namespace m2ctts
