#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "m2ctts/autograd.hpp"
#include "m2ctts/common.hpp"
#include "m2ctts/corpus.hpp"

namespace testing {

using m2ctts::Matrix;

inline Matrix random_matrix(m2ctts::Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("m2ctts-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

/// Turn with `phonemes` phonemes over `frames` frames and a random mel.
inline m2ctts::Turn make_turn(m2ctts::Rng& rng, const std::string& did, int index, int phonemes, int frames) {
  m2ctts::Turn t;
  t.dialogue_id = did;
  t.turn_index = index;
  t.speaker = index % 2 == 0 ? m2ctts::Speaker::A : m2ctts::Speaker::B;
  t.text = did + " turn " + std::to_string(index);
  t.durations.assign(static_cast<size_t>(phonemes), 1);
  for (int extra = frames - phonemes, p = 0; extra > 0; --extra, p = (p + 1) % phonemes)
    ++t.durations[static_cast<size_t>(p)];
  for (int p = 0; p < phonemes; ++p) {
    t.phoneme_ids.push_back(rng.uniform_int(1, 30));
    t.pitch.push_back(rng.uniform(-1, 1));
    t.energy.push_back(rng.uniform(-1, 1));
  }
  t.mel = std::make_shared<const Matrix>(random_matrix(rng, frames, m2ctts::kMelChannels));
  t.mel_path = "mels/" + did + "/" + std::to_string(index) + ".mel.m2ct";
  return t;
}

inline m2ctts::Dialogue make_dialogue(m2ctts::Rng& rng, const std::string& did, int turns) {
  m2ctts::Dialogue d;
  d.dialogue_id = did;
  for (int i = 0; i < turns; ++i) d.turns.push_back(make_turn(rng, did, i, rng.uniform_int(2, 6), rng.uniform_int(6, 14)));
  return d;
}

/// Central-difference gradient of a scalar function of one matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

}  // namespace testing
