#pragma once

// Dialogue-context modules.
//
//   coarse (utterance level): history embeddings -> GRU -> additive attention
//     pooling, queried by [final state ; projected current text embedding].
//     Text and acoustic variants differ only in the history features.
//   fine (phoneme level): history feature rows + speaker embedding +
//     sinusoidal turn position -> projection -> conv contextualiser ->
//     cross-attention with the encoder output as query, added residually.

#include <optional>

#include "m2ctts/autograd.hpp"
#include "m2ctts/batch.hpp"
#include "m2ctts/config.hpp"
#include "m2ctts/fusion.hpp"

namespace m2ctts {

/// Global context vectors; a field is set iff its coarse module ran.
struct ContextEmbeddings {
  std::optional<ag::Var> text;
  std::optional<ag::Var> acoustic;
};

/// Learned stand-ins for a disabled coarse module, shared by the style
/// assembler and the prosody predictor.
struct NullContext {
  ag::Var text;      // 1 x d
  ag::Var acoustic;  // 1 x d

  NullContext() = default;
  NullContext(ParameterSet& params, const std::string& name, int d, Rng& rng);
  /// [text or null ; acoustic or null], 1 x 2d.
  ag::Var fill(const ContextEmbeddings& ctx) const;
};

struct CoarseOutput {
  ag::Var embedding;      // 1 x d
  RowVector pool_weights;  // over GRU states, or the single initial state
};

class CoarseContextEncoder {
 public:
  CoarseContextEncoder() = default;
  CoarseContextEncoder(ParameterSet& params, const std::string& name, int history_dim,
                       int current_dim, int d, Rng& rng);

  /// `history` has one row per slot; slots outside `history_mask` are ignored.
  /// `current` is the current-turn text embedding.
  CoarseOutput operator()(const Matrix& history, const Mask& history_mask,
                          const RowVector& current) const;

  Linear history_proj;
  Linear current_proj;
  Gru gru;
  ag::Var initial_state;  // 1 x d
  Linear fuse;            // 2d -> d
  AdditiveAttentionPool pool;
};

/// Memory after speaker/position addition and projection to model width.
struct FineGrainedMemory {
  ag::Var rows;  // M x d
  Mask mask;
  Modality modality = Modality::Text;
};

struct FineOutput {
  /// Residual branch (N x d); undefined when the memory has no real rows.
  std::optional<ag::Var> delta;
  std::vector<Matrix> weights;  // per head, N x M
};

class FineContextEncoder {
 public:
  FineContextEncoder() = default;
  FineContextEncoder(ParameterSet& params, const std::string& name, Modality modality,
                     int feature_dim, int d, int heads, int kernel, bool speaker_embedding, Rng& rng);

  FineGrainedMemory build_memory(const MemoryRows& rows) const;
  FineOutput operator()(const ag::Var& encoder_out, const Mask& phoneme_mask,
                        const MemoryRows& rows) const;

  Modality modality = Modality::Text;
  bool use_speaker = true;
  Embedding speaker;  // 2 x feature_dim
  Linear in_proj;
  ConvContextualizer contextualizer;
  MultiHeadAttention attention;
};

class StyleAssembler {
 public:
  StyleAssembler() = default;
  StyleAssembler(ParameterSet& params, const std::string& name, int d, int style_dim, Rng& rng);

  /// 1 x style_dim.
  ag::Var operator()(const NullContext& nulls, const ContextEmbeddings& ctx) const;

  Linear proj;
};

}  // namespace m2ctts
