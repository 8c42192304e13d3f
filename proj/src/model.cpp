#include "m2ctts/model.hpp"

#include <stdexcept>

#include "m2ctts/common.hpp"

namespace m2ctts {

FeatureNeeds needs_for(const AblationConfig& a) {
  FeatureNeeds n;
  n.text_utterance = a.tum || a.wum;  // the acoustic module is queried by current text
  n.acoustic_utterance = a.wum;
  n.text_sequence = a.tpm;
  n.acoustic_sequence = a.wpm;
  n.prosody_target = a.any_coarse();
  return n;
}

Model::Model(const ModelConfig& config, std::uint64_t seed, ModelOptions options)
    : config_(config), seed_(seed), options_(options) {
  config_.validate();
  const auto& c = config_;
  const int d = c.d_model;
  {
    Rng rng(stream_seed(seed, "encoder"));
    encoder = Encoder(params_, "encoder", c, rng);
  }
  {
    Rng rng(stream_seed(seed, "variance"));
    variance = VarianceAdaptor(params_, "variance", c, rng);
  }
  {
    Rng rng(stream_seed(seed, "decoder"));
    decoder = Decoder(params_, "decoder", c, /*conditional=*/true, rng);
  }
  {
    Rng rng(stream_seed(seed, "style"));
    nulls = NullContext(params_, "context_null", d, rng);
    style = StyleAssembler(params_, "style", d, c.style_dim, rng);
  }
  if (!options_.context_modules) return;
  {
    Rng rng(stream_seed(seed, "tum"));
    tum = CoarseContextEncoder(params_, "tum", c.dims.text_utterance, c.dims.text_utterance, d, rng);
  }
  {
    Rng rng(stream_seed(seed, "wum"));
    wum = CoarseContextEncoder(params_, "wum", c.dims.acoustic_utterance, c.dims.text_utterance, d, rng);
  }
  {
    Rng rng(stream_seed(seed, "tpm"));
    tpm = FineContextEncoder(params_, "tpm", Modality::Text, c.dims.text_sequence, d, c.heads,
                             c.context_kernel, c.tpm_speaker_embedding, rng);
  }
  {
    Rng rng(stream_seed(seed, "wpm"));
    wpm = FineContextEncoder(params_, "wpm", Modality::Acoustic, c.dims.acoustic_sequence, d, c.heads,
                             c.context_kernel, c.wpm_speaker_embedding, rng);
  }
  if (options_.prosody_predictor) {
    Rng rng(stream_seed(seed, "ppm"));
    ppm = ProsodyPredictor(params_, "ppm", d, c.dims.acoustic_utterance, rng);
  }
}

std::unique_ptr<Model> Model::clone() const {
  auto copy = std::make_unique<Model>(config_, seed_, options_);
  auto& dst = copy->params_.entries();
  const auto& src = params_.entries();
  for (size_t i = 0; i < src.size(); ++i) {
    ag::Var target = dst[i].second;
    target.mutable_value() = src[i].second.value();
  }
  return copy;
}

ItemOutput Model::forward_item(const Batch& batch, int b, const AblationConfig& ablation, Mode mode) const {
  if (ablation.any_context() && !options_.context_modules)
    throw std::invalid_argument("ablation " + ablation.name + " needs context modules this model lacks");
  const auto& wf = batch.features.at(static_cast<size_t>(b));
  ItemOutput out;
  out.phoneme_mask = batch.phoneme_row_mask(b);
  const auto ids = batch.phoneme_row(b);

  EncoderOutput enc = encoder(ids, out.phoneme_mask);

  if (ablation.tum) {
    auto r = tum(wf.history_text, wf.history_mask, wf.current_text);
    out.context.text = r.embedding;
    out.tum_weights = std::move(r.pool_weights);
  }
  if (ablation.wum) {
    auto r = wum(wf.history_acoustic, wf.history_mask, wf.current_text);
    out.context.acoustic = r.embedding;
    out.wum_weights = std::move(r.pool_weights);
  }

  // Both fine-grained modules read the same encoder output; their residuals add.
  ag::Var hidden = enc.hidden;
  if (ablation.tpm) {
    auto r = tpm(enc.hidden, out.phoneme_mask, wf.text_memory);
    if (r.delta) hidden = ag::add(hidden, *r.delta);
    out.tpm_weights = std::move(r.weights);
  }
  if (ablation.wpm) {
    auto r = wpm(enc.hidden, out.phoneme_mask, wf.acoustic_memory);
    if (r.delta) hidden = ag::add(hidden, *r.delta);
    out.wpm_weights = std::move(r.weights);
  }
  enc.hidden = hidden;

  std::optional<VarianceTargets> targets;
  const auto durations = batch.duration_row(b);
  std::vector<double> pitch(batch.pitch.row(b).data(), batch.pitch.row(b).data() + batch.pitch.cols());
  std::vector<double> energy(batch.energy.row(b).data(), batch.energy.row(b).data() + batch.energy.cols());
  if (mode == Mode::Train) targets = VarianceTargets{durations, pitch, energy};
  auto adapted = variance(enc, targets, mode == Mode::Train ? batch.max_frames() : 0);

  out.style = style(nulls, out.context);
  out.mel = decoder(adapted.frames, adapted.frame_mask, out.style);
  out.frame_mask = std::move(adapted.frame_mask);
  out.durations = std::move(adapted.durations);
  out.predictions = adapted.predictions;

  if (mode == Mode::Train && ablation.any_coarse() && has_prosody_predictor())
    out.prosody = ppm(nulls, out.context);
  return out;
}

std::vector<ItemOutput> Model::forward(const Batch& batch, const AblationConfig& ablation, Mode mode) const {
  std::vector<ItemOutput> out;
  out.reserve(static_cast<size_t>(batch.size()));
  for (int b = 0; b < batch.size(); ++b) out.push_back(forward_item(batch, b, ablation, mode));
  return out;
}

SynthesisResult synthesize(const Model& model, const AblationConfig& ablation,
                           const ConversationWindow& window, FeatureProvider& features,
                           int pad_phoneme_id) {
  const int c = static_cast<int>(window.history.size());
  const ConversationWindow windows[] = {window};
  auto needs = needs_for(ablation);
  needs.prosody_target = false;
  const Batch batch = make_batch(windows, pad_phoneme_id, std::max(c, model.config().memory_capacity),
                                 features, needs);
  auto out = model.forward_item(batch, 0, ablation, Mode::Inference);
  return {out.mel.value(), std::move(out.durations), std::move(out.tpm_weights),
          std::move(out.wpm_weights)};
}

}  // namespace m2ctts
