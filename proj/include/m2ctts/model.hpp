#pragma once

// Full conversational acoustic model: backbone plus the four context modules,
// the style assembler, and the training-only prosody predictor.
//
// Parameter registration order (checkpoint order) is fixed:
//   encoder, variance, decoder, context_null, style, tum, wum, tpm, wpm, ppm.
// Each group draws its initial values from its own named random stream, so
// omitting a group never changes another group's initial values.

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "m2ctts/backbone.hpp"
#include "m2ctts/batch.hpp"
#include "m2ctts/config.hpp"
#include "m2ctts/context.hpp"
#include "m2ctts/fusion.hpp"
#include "m2ctts/prosody.hpp"

namespace m2ctts {

struct ModelOptions {
  /// false builds the bare backbone (no TUM/WUM/TPM/WPM/PPM parameters).
  bool context_modules = true;
  bool prosody_predictor = true;
};

enum class Mode { Train, Inference };

struct ItemOutput {
  ag::Var mel;  // T x 80
  Mask frame_mask;
  Mask phoneme_mask;
  std::vector<int> durations;
  VariancePredictions predictions;
  ContextEmbeddings context;
  ag::Var style;
  std::optional<ag::Var> prosody;  // train mode with a coarse module enabled
  RowVector tum_weights, wum_weights;
  std::vector<Matrix> tpm_weights, wpm_weights;
};

/// Features the model reads under a given ablation.
FeatureNeeds needs_for(const AblationConfig& ablation);

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed, ModelOptions options = {});

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Deep copy with independent parameter storage.
  std::unique_ptr<Model> clone() const;

  std::vector<ItemOutput> forward(const Batch& batch, const AblationConfig& ablation, Mode mode) const;
  ItemOutput forward_item(const Batch& batch, int index, const AblationConfig& ablation, Mode mode) const;

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const ModelOptions& options() const { return options_; }
  bool has_context_modules() const { return options_.context_modules; }
  bool has_prosody_predictor() const { return options_.context_modules && options_.prosody_predictor; }

  Encoder encoder;
  VarianceAdaptor variance;
  Decoder decoder;
  NullContext nulls;
  StyleAssembler style;
  CoarseContextEncoder tum, wum;
  FineContextEncoder tpm, wpm;
  ProsodyPredictor ppm;

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  ModelOptions options_;
  ParameterSet params_;
};

struct SynthesisResult {
  Matrix mel;  // T x 80
  std::vector<int> durations;
  std::vector<Matrix> tpm_weights, wpm_weights;
};

/// Inference for one window: predicted durations, pitch and energy.
SynthesisResult synthesize(const Model& model, const AblationConfig& ablation,
                           const ConversationWindow& window, FeatureProvider& features,
                           int pad_phoneme_id = 0);

}  // namespace m2ctts
