#include "m2ctts/extractors.hpp"

#include <cmath>

#include "m2ctts/common.hpp"

namespace m2ctts {

namespace fs = std::filesystem;

std::string_view kind_name(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::TextUtterance: return "text-utterance";
    case ExtractorKind::TextSequence: return "text-sequence";
    case ExtractorKind::AcousticUtterance: return "acoustic-utterance";
    case ExtractorKind::AcousticSequence: return "acoustic-sequence";
  }
  return "unknown";
}

ExtractorKind parse_kind(std::string_view name) {
  for (auto k : kAllExtractorKinds)
    if (kind_name(k) == name) return k;
  throw ValidationError("unknown extractor kind \"" + std::string(name) + "\"");
}

int ExtractorDims::of(ExtractorKind kind) const {
  switch (kind) {
    case ExtractorKind::TextUtterance: return text_utterance;
    case ExtractorKind::TextSequence: return text_sequence;
    case ExtractorKind::AcousticUtterance: return acoustic_utterance;
    case ExtractorKind::AcousticSequence: return acoustic_sequence;
  }
  return 0;
}

fs::path CacheKey::relative_path() const {
  return fs::path(dialogue_id) /
         (std::to_string(turn_index) + "." + std::string(kind_name(kind)) + ".m2ct");
}

std::string CacheKey::to_string() const {
  return dialogue_id + "/" + std::to_string(turn_index) + " [" + std::string(kind_name(kind)) + "]";
}

namespace {

void normalize(RowVector& v) {
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
}

// Seed-deterministic affine map from 160 statistics (or two stacked frames) to dim.
struct Projection {
  Matrix weight;  // 160 x dim
  RowVector bias;
};

Projection make_projection(std::uint64_t seed, std::string_view stream, int dim) {
  Rng rng(stream_seed(seed ^ mix64(static_cast<std::uint64_t>(dim)), stream));
  constexpr int in = 2 * kMelChannels;
  Projection p{Matrix(in, dim), RowVector(dim)};
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = s * rng.normal();
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = s * rng.normal();
  return p;
}

void check_finite(const Matrix& mel) {
  if (!mel.allFinite()) throw ValidationError("mel contains non-finite entries");
}

}  // namespace

UtteranceEmbedding stub_text_utterance(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("stub_text_utterance: dim must be >= 1");
  Rng rng(mix64(fnv1a(text) ^ mix64(seed ^ (static_cast<std::uint64_t>(dim) << 32))));
  RowVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  normalize(v);
  return {std::move(v), Modality::Text, FeatureSource::Stub};
}

UtteranceEmbedding stub_acoustic_utterance(const Matrix& mel, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("stub_acoustic_utterance: dim must be >= 1");
  if (mel.rows() < 1 || mel.cols() != kMelChannels)
    throw ValidationError("stub_acoustic_utterance: expected T x 80 mel with T >= 1");
  check_finite(mel);
  RowVector stats(2 * kMelChannels);
  const RowVector mean = mel.colwise().mean();
  const RowVector var = (mel.rowwise() - mean).array().square().colwise().mean();
  stats << mean, var.array().sqrt().matrix();
  const auto proj = make_projection(seed, "acoustic-utterance-projection", dim);
  RowVector v = stats * proj.weight + proj.bias;
  normalize(v);
  return {std::move(v), Modality::Acoustic, FeatureSource::Stub};
}

FeatureSequence stub_sequence(const Turn& turn, Modality modality, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("stub_sequence: dim must be >= 1");
  FeatureSequence out;
  out.modality = modality;
  if (modality == Modality::Text) {
    const auto n = static_cast<Eigen::Index>(turn.phoneme_ids.size());
    if (n < 1) throw ValidationError("stub_sequence: turn has no phonemes");
    out.values.resize(n, dim);
    const std::uint64_t text_hash = fnv1a(turn.text, fnv1a("text-sequence"));
    for (Eigen::Index l = 0; l < n; ++l) {
      Rng rng(mix64(text_hash ^ mix64(seed) ^ mix64(static_cast<std::uint64_t>(l) + 1)) ^
              static_cast<std::uint64_t>(dim));
      for (int j = 0; j < dim; ++j) out.values(l, j) = rng.normal();
    }
    return out;
  }
  if (!turn.mel || turn.mel->rows() < 1)
    throw ValidationError("stub_sequence: acoustic modality needs a loaded mel");
  const Matrix& mel = *turn.mel;
  check_finite(mel);
  const auto proj = make_projection(seed, "acoustic-sequence-projection", dim);
  const Eigen::Index len = (mel.rows() + 1) / 2;
  out.values.resize(len, dim);
  RowVector stacked(2 * kMelChannels);
  for (Eigen::Index l = 0; l < len; ++l) {
    stacked.head(kMelChannels) = mel.row(2 * l);
    if (2 * l + 1 < mel.rows())
      stacked.tail(kMelChannels) = mel.row(2 * l + 1);
    else
      stacked.tail(kMelChannels).setZero();
    out.values.row(l) = stacked * proj.weight + proj.bias;
  }
  return out;
}

fs::path write_cache(const fs::path& root, const CacheKey& key, const Tensor& tensor) {
  const fs::path path = root / key.relative_path();
  write_tensor(path, tensor);
  return path;
}

Tensor read_cache(const fs::path& root, const CacheKey& key) {
  const fs::path path = root / key.relative_path();
  if (!fs::exists(path)) throw Error("missing cache entry " + key.to_string() + " at " + path.string());
  return read_tensor(path);
}

Tensor FeatureProvider::extract(const Turn& turn, ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::TextUtterance: return Tensor::from_row(text_utterance(turn).values);
    case ExtractorKind::AcousticUtterance: return Tensor::from_row(acoustic_utterance(turn).values);
    case ExtractorKind::TextSequence: return Tensor::from_matrix(text_sequence(turn).values);
    case ExtractorKind::AcousticSequence: return Tensor::from_matrix(acoustic_sequence(turn).values);
  }
  throw std::logic_error("unreachable extractor kind");
}

UtteranceEmbedding StubFeatures::text_utterance(const Turn& turn) {
  return stub_text_utterance(turn.text, dims_.text_utterance, seed_);
}

UtteranceEmbedding StubFeatures::acoustic_utterance(const Turn& turn) {
  if (!turn.mel) throw ValidationError("acoustic_utterance: mel not loaded");
  return stub_acoustic_utterance(*turn.mel, dims_.acoustic_utterance, seed_);
}

FeatureSequence StubFeatures::text_sequence(const Turn& turn) {
  return stub_sequence(turn, Modality::Text, dims_.text_sequence, seed_);
}

FeatureSequence StubFeatures::acoustic_sequence(const Turn& turn) {
  return stub_sequence(turn, Modality::Acoustic, dims_.acoustic_sequence, seed_);
}

Matrix CachedFeatures::load(const Turn& turn, ExtractorKind kind) {
  const CacheKey key{turn.dialogue_id, turn.turn_index, kind};
  const Tensor t = read_cache(root_, key);
  const bool utterance = kind == ExtractorKind::TextUtterance || kind == ExtractorKind::AcousticUtterance;
  const auto dim = static_cast<std::uint32_t>(dims_.of(kind));
  const bool ok = utterance ? (t.rank() == 1 && t.shape[0] == dim)
                            : (t.rank() == 2 && t.shape[0] >= 1 && t.shape[1] == dim);
  if (!ok)
    throw FormatError("cache entry " + key.to_string() + " has unexpected shape for dim " +
                      std::to_string(dim));
  return t.to_matrix();
}

UtteranceEmbedding CachedFeatures::text_utterance(const Turn& turn) {
  return {load(turn, ExtractorKind::TextUtterance), Modality::Text, FeatureSource::Cached};
}

UtteranceEmbedding CachedFeatures::acoustic_utterance(const Turn& turn) {
  return {load(turn, ExtractorKind::AcousticUtterance), Modality::Acoustic, FeatureSource::Cached};
}

FeatureSequence CachedFeatures::text_sequence(const Turn& turn) {
  return {load(turn, ExtractorKind::TextSequence), Modality::Text, FeatureSource::Cached};
}

FeatureSequence CachedFeatures::acoustic_sequence(const Turn& turn) {
  return {load(turn, ExtractorKind::AcousticSequence), Modality::Acoustic, FeatureSource::Cached};
}

namespace {

template <typename Map, typename Fn>
auto memo(Map& cache, CacheKey key, Fn&& compute) {
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto value = compute();
  cache.emplace(std::move(key), value);
  return value;
}

}  // namespace

UtteranceEmbedding MemoFeatures::text_utterance(const Turn& turn) {
  return memo(utterances_, {turn.dialogue_id, turn.turn_index, ExtractorKind::TextUtterance},
              [&] { return inner_.text_utterance(turn); });
}

UtteranceEmbedding MemoFeatures::acoustic_utterance(const Turn& turn) {
  return memo(utterances_, {turn.dialogue_id, turn.turn_index, ExtractorKind::AcousticUtterance},
              [&] { return inner_.acoustic_utterance(turn); });
}

FeatureSequence MemoFeatures::text_sequence(const Turn& turn) {
  return memo(sequences_, {turn.dialogue_id, turn.turn_index, ExtractorKind::TextSequence},
              [&] { return inner_.text_sequence(turn); });
}

FeatureSequence MemoFeatures::acoustic_sequence(const Turn& turn) {
  return memo(sequences_, {turn.dialogue_id, turn.turn_index, ExtractorKind::AcousticSequence},
              [&] { return inner_.acoustic_sequence(turn); });
}

}  // namespace m2ctts
