#include <doctest.h>

#include "m2ctts/batch.hpp"
#include "support.hpp"

using namespace m2ctts;

namespace {

const ExtractorDims kDims{8, 6, 4, 5};

ConversationWindow make_window(Rng& rng, const std::string& did, int history, int phonemes, int frames) {
  ConversationWindow w;
  for (int i = 0; i < history; ++i) w.history.push_back(testing::make_turn(rng, did, i, 2 + i, 4 + 2 * i));
  w.current = testing::make_turn(rng, did, history, phonemes, frames);
  return w;
}

}  // namespace

TEST_SUITE("batch") {
  TEST_CASE("phoneme lengths 5 and 8 pad to a 2x8 matrix") {
    Rng rng(1);
    StubFeatures stub(kDims, 0);
    const std::vector<ConversationWindow> ws = {make_window(rng, "a", 1, 5, 9), make_window(rng, "b", 2, 8, 12)};
    const Batch b = make_batch(ws, 0, 3, stub, FeatureNeeds::none());
    CHECK(b.phonemes.rows() == 2);
    CHECK(b.phonemes.cols() == 8);
    CHECK(b.max_frames() == 12);
    for (int j = 0; j < 8; ++j) {
      CHECK(b.phoneme_mask(0, j) == (j < 5));
      CHECK(b.phoneme_mask(1, j));
    }
    for (int j = 5; j < 8; ++j) {
      CHECK(b.phonemes(0, j) == 0);
      CHECK(b.durations(0, j) == 0);
      CHECK(b.pitch(0, j) == 0.0);
    }
    CHECK(b.frame_row_mask(0) == Mask{true, true, true, true, true, true, true, true, true, false, false, false});
    CHECK(b.mel[0].bottomRows(3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.mel[0].topRows(9) == *ws[0].current.mel);
    CHECK(b.history_lengths == std::vector<int>{1, 2});
    CHECK(b.phoneme_row(1) == ws[1].current.phoneme_ids);
  }

  TEST_CASE("pad id is configurable") {
    Rng rng(2);
    StubFeatures stub(kDims, 0);
    const std::vector<ConversationWindow> ws = {make_window(rng, "a", 0, 2, 4), make_window(rng, "b", 0, 4, 6)};
    const Batch b = make_batch(ws, 7, 0, stub, FeatureNeeds::none());
    CHECK(b.phonemes(0, 2) == 7);
    CHECK(b.phonemes(0, 3) == 7);
  }

  TEST_CASE("features and memories") {
    Rng rng(3);
    StubFeatures stub(kDims, 0);
    const std::vector<ConversationWindow> ws = {make_window(rng, "a", 1, 3, 6), make_window(rng, "b", 2, 3, 6)};
    const Batch b = make_batch(ws, 0, 3, stub, FeatureNeeds::all());
    const auto& f0 = b.features[0];
    CHECK(f0.history_mask == Mask{true, false, false});
    CHECK(f0.history_text.rows() == 3);
    CHECK(f0.history_text.row(0) == stub.text_utterance(ws[0].history[0]).values);
    CHECK(f0.history_text.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(f0.current_acoustic == stub.acoustic_utterance(ws[0].current).values);

    // Window b has history turns with 2 and 3 phonemes; window a has 2.
    const auto& m1 = b.features[1].text_memory;
    CHECK(m1.features.rows() == 5);
    CHECK(m1.position == std::vector<int>{0, 0, 1, 1, 1});
    CHECK(m1.speaker == std::vector<int>{0, 0, 1, 1, 1});
    const auto& m0 = b.features[0].text_memory;
    CHECK(m0.features.rows() == 5);
    CHECK(m0.mask == Mask{true, true, false, false, false});
    CHECK(m0.features.bottomRows(3).cwiseAbs().maxCoeff() == 0.0);
    CHECK(m0.features.topRows(2) == stub.text_sequence(ws[0].history[0]).values);
    // Acoustic memories use the frame-rate sequence length.
    CHECK(b.features[1].acoustic_memory.features.rows() ==
          stub.acoustic_sequence(ws[1].history[0]).values.rows() + stub.acoustic_sequence(ws[1].history[1]).values.rows());
  }

  TEST_CASE("unrequested features stay empty") {
    Rng rng(4);
    StubFeatures stub(kDims, 0);
    const std::vector<ConversationWindow> ws = {make_window(rng, "a", 2, 3, 6)};
    const Batch b = make_batch(ws, 0, 2, stub, FeatureNeeds::none());
    CHECK(b.features[0].history_text.cols() == 0);
    CHECK(b.features[0].text_memory.features.size() == 0);
    CHECK(b.features[0].current_text.size() == 0);
  }

  TEST_CASE("argument errors") {
    Rng rng(5);
    StubFeatures stub(kDims, 0);
    const std::vector<ConversationWindow> ws = {make_window(rng, "a", 3, 3, 6)};
    CHECK_THROWS_AS(make_batch(ws, 0, 2, stub, FeatureNeeds::none()), std::invalid_argument);
    CHECK_THROWS_AS(make_batch({}, 0, 2, stub, FeatureNeeds::none()), std::invalid_argument);
    CHECK_THROWS_AS(make_batch(ws, 0, -1, stub, FeatureNeeds::none()), std::invalid_argument);
  }
}
