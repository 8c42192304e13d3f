#pragma once

// Utterance-level embeddings and token/frame-level feature sequences.
//
// The pretrained encoders (sentence encoder, token encoder, speech encoders)
// are never run in-process. Either the deterministic stubs below compute
// stand-in features, or an offline precompute step fills the on-disk cache
// and `CachedFeatures` serves it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <tuple>

#include "m2ctts/autograd.hpp"
#include "m2ctts/corpus.hpp"
#include "m2ctts/tensor_file.hpp"

namespace m2ctts {

enum class Modality : std::uint8_t { Text, Acoustic };
enum class FeatureSource : std::uint8_t { Stub, Cached };

struct UtteranceEmbedding {
  RowVector values;
  Modality modality = Modality::Text;
  FeatureSource source = FeatureSource::Stub;
};

struct FeatureSequence {
  Matrix values;  // L x D
  Modality modality = Modality::Text;
  FeatureSource source = FeatureSource::Stub;

  Eigen::Index length() const { return values.rows(); }
};

enum class ExtractorKind : std::uint8_t {
  TextUtterance,
  TextSequence,
  AcousticUtterance,
  AcousticSequence
};

inline constexpr ExtractorKind kAllExtractorKinds[] = {
    ExtractorKind::TextUtterance, ExtractorKind::TextSequence, ExtractorKind::AcousticUtterance,
    ExtractorKind::AcousticSequence};

std::string_view kind_name(ExtractorKind kind);
ExtractorKind parse_kind(std::string_view name);

struct ExtractorDims {
  int text_utterance = 512;
  int acoustic_utterance = 768;
  int text_sequence = 768;
  int acoustic_sequence = 768;

  int of(ExtractorKind kind) const;
};

struct CacheKey {
  std::string dialogue_id;
  int turn_index = 0;
  ExtractorKind kind = ExtractorKind::TextUtterance;

  /// `<dialogue_id>/<turn_index>.<kind>.m2ct`
  std::filesystem::path relative_path() const;
  std::string to_string() const;
  auto operator<=>(const CacheKey&) const = default;
};

UtteranceEmbedding stub_text_utterance(std::string_view text, int dim, std::uint64_t seed);
UtteranceEmbedding stub_acoustic_utterance(const Matrix& mel, int dim, std::uint64_t seed);
FeatureSequence stub_sequence(const Turn& turn, Modality modality, int dim, std::uint64_t seed);

std::filesystem::path write_cache(const std::filesystem::path& root, const CacheKey& key,
                                  const Tensor& tensor);
Tensor read_cache(const std::filesystem::path& root, const CacheKey& key);

/// Source of context features for the model.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual UtteranceEmbedding text_utterance(const Turn& turn) = 0;
  virtual UtteranceEmbedding acoustic_utterance(const Turn& turn) = 0;
  virtual FeatureSequence text_sequence(const Turn& turn) = 0;
  virtual FeatureSequence acoustic_sequence(const Turn& turn) = 0;
  virtual const ExtractorDims& dims() const = 0;

  /// Tensor for one cache kind, as it would be stored on disk.
  Tensor extract(const Turn& turn, ExtractorKind kind);
};

class StubFeatures final : public FeatureProvider {
 public:
  StubFeatures(ExtractorDims dims, std::uint64_t seed) : dims_(dims), seed_(seed) {}

  UtteranceEmbedding text_utterance(const Turn& turn) override;
  UtteranceEmbedding acoustic_utterance(const Turn& turn) override;
  FeatureSequence text_sequence(const Turn& turn) override;
  FeatureSequence acoustic_sequence(const Turn& turn) override;
  const ExtractorDims& dims() const override { return dims_; }

 private:
  ExtractorDims dims_;
  std::uint64_t seed_;
};

/// Reads precomputed features; shapes are checked against `dims`.
class CachedFeatures final : public FeatureProvider {
 public:
  CachedFeatures(std::filesystem::path root, ExtractorDims dims)
      : root_(std::move(root)), dims_(dims) {}

  UtteranceEmbedding text_utterance(const Turn& turn) override;
  UtteranceEmbedding acoustic_utterance(const Turn& turn) override;
  FeatureSequence text_sequence(const Turn& turn) override;
  FeatureSequence acoustic_sequence(const Turn& turn) override;
  const ExtractorDims& dims() const override { return dims_; }

 private:
  Matrix load(const Turn& turn, ExtractorKind kind);

  std::filesystem::path root_;
  ExtractorDims dims_;
};

/// Memoising wrapper; not thread-safe.
class MemoFeatures final : public FeatureProvider {
 public:
  explicit MemoFeatures(FeatureProvider& inner) : inner_(inner) {}

  UtteranceEmbedding text_utterance(const Turn& turn) override;
  UtteranceEmbedding acoustic_utterance(const Turn& turn) override;
  FeatureSequence text_sequence(const Turn& turn) override;
  FeatureSequence acoustic_sequence(const Turn& turn) override;
  const ExtractorDims& dims() const override { return inner_.dims(); }

 private:
  FeatureProvider& inner_;
  std::map<CacheKey, UtteranceEmbedding> utterances_;
  std::map<CacheKey, FeatureSequence> sequences_;
};

}  // namespace m2ctts
