#include <doctest.h>

#include "m2ctts/extractors.hpp"
#include "support.hpp"

using namespace m2ctts;

namespace {

double cosine(const RowVector& a, const RowVector& b) { return a.dot(b) / (a.norm() * b.norm()); }

// Counts calls so memoisation can be observed.
class CountingFeatures final : public FeatureProvider {
 public:
  explicit CountingFeatures(ExtractorDims dims) : stub_(dims, 0) {}
  UtteranceEmbedding text_utterance(const Turn& t) override { return ++calls, stub_.text_utterance(t); }
  UtteranceEmbedding acoustic_utterance(const Turn& t) override { return ++calls, stub_.acoustic_utterance(t); }
  FeatureSequence text_sequence(const Turn& t) override { return ++calls, stub_.text_sequence(t); }
  FeatureSequence acoustic_sequence(const Turn& t) override { return ++calls, stub_.acoustic_sequence(t); }
  const ExtractorDims& dims() const override { return stub_.dims(); }
  int calls = 0;

 private:
  StubFeatures stub_;
};

}  // namespace

TEST_SUITE("extractors") {
  TEST_CASE("stub text utterance") {
    const auto a = stub_text_utterance("hello", 16, 0);
    const auto b = stub_text_utterance("hello", 16, 0);
    CHECK(a.values == b.values);
    CHECK(a.values.size() == 16);
    CHECK(a.values.norm() == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(cosine(a.values, stub_text_utterance("world", 16, 0).values) < 0.9);
    CHECK(a.values != stub_text_utterance("hello", 16, 1).values);
    CHECK(a.modality == Modality::Text);
    CHECK_THROWS_AS(stub_text_utterance("x", 0, 0), std::invalid_argument);
    for (const char* text : {"", "a", "a much longer sentence with several words"})
      CHECK(stub_text_utterance(text, 512, 9).values.norm() == doctest::Approx(1.0).epsilon(1e-5));
  }

  TEST_CASE("stub acoustic utterance") {
    Rng rng(1);
    const Matrix zeros = Matrix::Zero(12, kMelChannels);
    const auto z = stub_acoustic_utterance(zeros, 32, 0);
    CHECK(z.values.allFinite());
    CHECK(z.values.norm() == doctest::Approx(1.0).epsilon(1e-5));

    const Matrix mel = testing::random_matrix(rng, 20, kMelChannels);
    Matrix permuted(mel.rows(), mel.cols());
    for (Eigen::Index r = 0; r < mel.rows(); ++r) permuted.row(r) = mel.row((r * 7) % mel.rows());
    const auto a = stub_acoustic_utterance(mel, 32, 0);
    const auto p = stub_acoustic_utterance(permuted, 32, 0);
    CHECK((a.values - p.values).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.values.norm() == doctest::Approx(1.0).epsilon(1e-5));

    const Matrix other = testing::random_matrix(rng, 20, kMelChannels);
    CHECK(a.values != stub_acoustic_utterance(other, 32, 0).values);
    CHECK(stub_acoustic_utterance(mel, 32, 0).values == a.values);

    CHECK_THROWS_AS(stub_acoustic_utterance(Matrix::Zero(0, kMelChannels), 8, 0), ValidationError);
    CHECK_THROWS_AS(stub_acoustic_utterance(Matrix::Zero(4, 79), 8, 0), ValidationError);
    Matrix bad = mel;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(stub_acoustic_utterance(bad, 8, 0), ValidationError);
  }

  TEST_CASE("stub sequences") {
    Rng rng(2);
    const Turn t7 = testing::make_turn(rng, "s", 0, 7, 50);
    const auto text = stub_sequence(t7, Modality::Text, 24, 0);
    CHECK(text.values.rows() == 7);
    CHECK(text.values.cols() == 24);
    const auto acoustic = stub_sequence(t7, Modality::Acoustic, 24, 0);
    CHECK(acoustic.values.rows() == 25);
    CHECK(acoustic.values.cols() == 24);
    CHECK(stub_sequence(t7, Modality::Text, 24, 0).values == text.values);
    CHECK(stub_sequence(t7, Modality::Acoustic, 24, 0).values == acoustic.values);
    CHECK(stub_sequence(t7, Modality::Acoustic, 24, 1).values != acoustic.values);

    const Turn odd = testing::make_turn(rng, "s", 1, 3, 7);
    CHECK(stub_sequence(odd, Modality::Acoustic, 8, 0).values.rows() == 4);
    Turn empty = odd;
    empty.mel.reset();
    CHECK_THROWS_AS(stub_sequence(empty, Modality::Acoustic, 8, 0), ValidationError);
  }

  TEST_CASE("kind names and cache paths") {
    for (auto kind : kAllExtractorKinds) CHECK(parse_kind(kind_name(kind)) == kind);
    CHECK(kind_name(ExtractorKind::TextUtterance) == "text-utterance");
    CHECK(kind_name(ExtractorKind::AcousticSequence) == "acoustic-sequence");
    CHECK_THROWS(parse_kind("bogus"));
    const CacheKey key{"d0003", 2, ExtractorKind::AcousticUtterance};
    CHECK(key.relative_path() == std::filesystem::path("d0003/2.acoustic-utterance.m2ct"));
    const ExtractorDims dims;
    CHECK(dims.of(ExtractorKind::TextUtterance) == 512);
    CHECK(dims.of(ExtractorKind::AcousticUtterance) == 768);
    CHECK(dims.of(ExtractorKind::TextSequence) == 768);
    CHECK(dims.of(ExtractorKind::AcousticSequence) == 768);
  }

  TEST_CASE("cache write and read") {
    testing::TempDir dir("cache");
    const CacheKey key{"d0000", 0, ExtractorKind::TextUtterance};
    const Tensor half{{1, 1}, {0.5f}};
    write_cache(dir.path, key, half);
    CHECK(read_cache(dir.path, key).data == std::vector<float>{0.5f});

    Rng rng(3);
    const Tensor big = Tensor::from_matrix(testing::random_matrix(rng, 25, 768));
    const CacheKey seq{"d0000", 1, ExtractorKind::AcousticSequence};
    write_cache(dir.path, seq, big);
    CHECK(read_cache(dir.path, seq) == big);

    std::string bytes = read_file_bytes(dir.path / seq.relative_path());
    bytes[1] = 'Z';
    write_file_bytes(dir.path / seq.relative_path(), bytes);
    CHECK_THROWS_AS(read_cache(dir.path, seq), FormatError);
  }

  TEST_CASE("cached features mirror the stubs and check shapes") {
    testing::TempDir dir("cached");
    Rng rng(4);
    const ExtractorDims dims{8, 6, 4, 10};
    StubFeatures stub(dims, 3);
    const Turn t = testing::make_turn(rng, "c", 0, 3, 9);
    for (auto kind : kAllExtractorKinds) write_cache(dir.path, {t.dialogue_id, t.turn_index, kind}, stub.extract(t, kind));
    CachedFeatures cached(dir.path, dims);
    auto as_float = [](const Matrix& m) { return Matrix(m.cast<float>().cast<double>()); };
    CHECK(cached.text_utterance(t).values == as_float(stub.text_utterance(t).values));
    CHECK(cached.acoustic_sequence(t).values == as_float(stub.acoustic_sequence(t).values));
    CHECK(cached.text_sequence(t).source == FeatureSource::Cached);

    CachedFeatures wrong(dir.path, ExtractorDims{9, 6, 4, 10});
    CHECK_THROWS_AS(wrong.text_utterance(t), FormatError);
    Turn missing = t;
    missing.turn_index = 5;
    CHECK_THROWS_AS(cached.text_utterance(missing), Error);
  }

  TEST_CASE("extract tensors have the documented ranks") {
    Rng rng(5);
    StubFeatures stub(ExtractorDims{8, 6, 4, 10}, 0);
    const Turn t = testing::make_turn(rng, "e", 0, 3, 9);
    CHECK(stub.extract(t, ExtractorKind::TextUtterance).shape == std::vector<std::uint32_t>{8});
    CHECK(stub.extract(t, ExtractorKind::AcousticUtterance).shape == std::vector<std::uint32_t>{6});
    CHECK(stub.extract(t, ExtractorKind::TextSequence).shape == std::vector<std::uint32_t>{3, 4});
    CHECK(stub.extract(t, ExtractorKind::AcousticSequence).shape == std::vector<std::uint32_t>{5, 10});
  }

  TEST_CASE("memoisation calls the inner provider once per key") {
    Rng rng(6);
    CountingFeatures inner(ExtractorDims{8, 6, 4, 10});
    MemoFeatures memo(inner);
    const Turn t = testing::make_turn(rng, "m", 0, 3, 9);
    const auto first = memo.text_utterance(t).values;
    CHECK(memo.text_utterance(t).values == first);
    memo.acoustic_sequence(t);
    memo.acoustic_sequence(t);
    CHECK(inner.calls == 2);
    CHECK(memo.dims().text_utterance == 8);
  }
}
