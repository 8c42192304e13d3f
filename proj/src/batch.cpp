#include "m2ctts/batch.hpp"

#include <algorithm>
#include <stdexcept>

namespace m2ctts {

Mask Batch::phoneme_row_mask(int b) const {
  Mask m(static_cast<size_t>(phoneme_mask.cols()));
  for (Eigen::Index j = 0; j < phoneme_mask.cols(); ++j) m[static_cast<size_t>(j)] = phoneme_mask(b, j);
  return m;
}

Mask Batch::frame_row_mask(int b) const {
  Mask m(static_cast<size_t>(frame_mask.cols()));
  for (Eigen::Index j = 0; j < frame_mask.cols(); ++j) m[static_cast<size_t>(j)] = frame_mask(b, j);
  return m;
}

std::vector<int> Batch::phoneme_row(int b) const {
  return {phonemes.row(b).data(), phonemes.row(b).data() + phonemes.cols()};
}

std::vector<int> Batch::duration_row(int b) const {
  return {durations.row(b).data(), durations.row(b).data() + durations.cols()};
}

namespace {

MemoryRows gather_memory(const ConversationWindow& w, Modality modality, FeatureProvider& features) {
  std::vector<Matrix> parts;
  MemoryRows out;
  Eigen::Index rows = 0;
  for (size_t i = 0; i < w.history.size(); ++i) {
    const Turn& turn = w.history[i];
    Matrix seq = modality == Modality::Text ? features.text_sequence(turn).values
                                            : features.acoustic_sequence(turn).values;
    for (Eigen::Index r = 0; r < seq.rows(); ++r) {
      out.speaker.push_back(static_cast<int>(turn.speaker));
      out.position.push_back(static_cast<int>(i));
      out.mask.push_back(true);
    }
    rows += seq.rows();
    parts.push_back(std::move(seq));
  }
  const int dim = modality == Modality::Text ? features.dims().text_sequence
                                             : features.dims().acoustic_sequence;
  out.features.resize(rows, dim);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.cols() != dim) throw std::invalid_argument("feature sequence dimension mismatch");
    out.features.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

void pad_memory(MemoryRows& m, Eigen::Index rows) {
  const Eigen::Index have = m.features.rows();
  if (have == rows) return;
  Matrix padded = Matrix::Zero(rows, m.features.cols());
  padded.topRows(have) = m.features;
  m.features = std::move(padded);
  m.speaker.resize(static_cast<size_t>(rows), 0);
  m.position.resize(static_cast<size_t>(rows), 0);
  m.mask.resize(static_cast<size_t>(rows), false);
}

}  // namespace

Batch make_batch(std::span<const ConversationWindow> windows, int pad_phoneme_id, int c,
                 FeatureProvider& features, FeatureNeeds needs) {
  if (windows.empty()) throw std::invalid_argument("make_batch: empty input");
  if (c < 0) throw std::invalid_argument("make_batch: memory capacity must be >= 0");

  Batch batch;
  batch.windows.assign(windows.begin(), windows.end());
  batch.memory_capacity = c;
  const int B = static_cast<int>(windows.size());
  int n_max = 0, t_max = 0;
  for (const auto& w : windows) {
    if (static_cast<int>(w.history.size()) > c)
      throw std::invalid_argument("make_batch: window history exceeds memory capacity");
    n_max = std::max(n_max, w.current.num_phonemes());
    t_max = std::max(t_max, w.current.num_frames());
  }

  batch.phonemes = IntMatrix::Constant(B, n_max, pad_phoneme_id);
  batch.phoneme_mask = BoolMatrix::Constant(B, n_max, false);
  batch.durations = IntMatrix::Zero(B, n_max);
  batch.pitch = Matrix::Zero(B, n_max);
  batch.energy = Matrix::Zero(B, n_max);
  batch.frame_mask = BoolMatrix::Constant(B, t_max, false);

  const auto& dims = features.dims();
  Eigen::Index text_rows = 0, acoustic_rows = 0;
  for (int b = 0; b < B; ++b) {
    const auto& w = windows[static_cast<size_t>(b)];
    const Turn& cur = w.current;
    for (int j = 0; j < cur.num_phonemes(); ++j) {
      const auto jj = static_cast<size_t>(j);
      batch.phonemes(b, j) = cur.phoneme_ids[jj];
      batch.phoneme_mask(b, j) = true;
      batch.durations(b, j) = cur.durations[jj];
      batch.pitch(b, j) = cur.pitch[jj];
      batch.energy(b, j) = cur.energy[jj];
    }
    Matrix mel = Matrix::Zero(t_max, kMelChannels);
    if (cur.mel) mel.topRows(cur.mel->rows()) = *cur.mel;
    for (int f = 0; f < cur.num_frames(); ++f) batch.frame_mask(b, f) = true;
    batch.mel.push_back(std::move(mel));
    batch.history_lengths.push_back(static_cast<int>(w.history.size()));

    WindowFeatures wf;
    wf.history_mask.assign(static_cast<size_t>(c), false);
    wf.history_text = Matrix::Zero(c, needs.text_utterance ? dims.text_utterance : 0);
    wf.history_acoustic = Matrix::Zero(c, needs.acoustic_utterance ? dims.acoustic_utterance : 0);
    for (size_t i = 0; i < w.history.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      wf.history_mask[i] = true;
      if (needs.text_utterance) wf.history_text.row(r) = features.text_utterance(w.history[i]).values;
      if (needs.acoustic_utterance)
        wf.history_acoustic.row(r) = features.acoustic_utterance(w.history[i]).values;
    }
    if (needs.text_utterance) wf.current_text = features.text_utterance(cur).values;
    if (needs.prosody_target) wf.current_acoustic = features.acoustic_utterance(cur).values;
    if (needs.text_sequence) wf.text_memory = gather_memory(w, Modality::Text, features);
    if (needs.acoustic_sequence) wf.acoustic_memory = gather_memory(w, Modality::Acoustic, features);
    text_rows = std::max(text_rows, wf.text_memory.features.rows());
    acoustic_rows = std::max(acoustic_rows, wf.acoustic_memory.features.rows());
    batch.features.push_back(std::move(wf));
  }
  for (auto& wf : batch.features) {
    if (needs.text_sequence) pad_memory(wf.text_memory, text_rows);
    if (needs.acoustic_sequence) pad_memory(wf.acoustic_memory, acoustic_rows);
  }
  return batch;
}

}  // namespace m2ctts
