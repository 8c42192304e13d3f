#include "m2ctts/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "m2ctts/common.hpp"
#include "m2ctts/corpus.hpp"

namespace m2ctts {

FftBlock::FftBlock(ParameterSet& params, const std::string& name, const ModelConfig& cfg,
                   bool is_conditional, Rng& rng)
    : conditional(is_conditional) {
  attention = MultiHeadAttention(params, name + ".attention", cfg.d_model, cfg.heads, rng);
  ffn_in = Conv1d(params, name + ".ffn_in", cfg.d_model, cfg.ffn_hidden, cfg.ffn_kernel, rng);
  ffn_out = Conv1d(params, name + ".ffn_out", cfg.ffn_hidden, cfg.d_model, cfg.ffn_kernel_out, rng);
  if (conditional) {
    saln1 = Saln(params, name + ".saln1", cfg.d_model, cfg.style_dim, rng);
    saln2 = Saln(params, name + ".saln2", cfg.d_model, cfg.style_dim, rng);
  } else {
    norm1 = LayerNorm(params, name + ".norm1", cfg.d_model);
    norm2 = LayerNorm(params, name + ".norm2", cfg.d_model);
  }
}

ag::Var FftBlock::operator()(const ag::Var& x, const Mask& mask, const ag::Var* style) const {
  if (conditional && !style) throw std::invalid_argument("conditional block needs a style vector");
  auto norm = [&](const LayerNorm& ln, const Saln& sa, const ag::Var& h) {
    return conditional ? sa(h, *style) : ln(h);
  };
  const auto attended = attention(x, x, x, mask).output;
  auto h = ag::mask_rows(norm(norm1, saln1, ag::add(x, attended)), mask);
  const auto ff = ffn_out(ag::relu(ffn_in(h)));
  return ag::mask_rows(norm(norm2, saln2, ag::add(h, ff)), mask);
}

Encoder::Encoder(ParameterSet& params, const std::string& name, const ModelConfig& cfg, Rng& rng) {
  embedding = Embedding(params, name + ".embedding", cfg.vocab_size, cfg.d_model, rng);
  for (int i = 0; i < cfg.encoder_layers; ++i)
    blocks.emplace_back(params, name + ".block" + std::to_string(i), cfg, false, rng);
}

EncoderOutput Encoder::operator()(std::span<const int> phoneme_ids, const Mask& mask) const {
  if (phoneme_ids.size() != mask.size()) throw std::invalid_argument("encode: mask length mismatch");
  if (phoneme_ids.empty()) throw std::invalid_argument("encode: empty phoneme sequence");
  const auto n = static_cast<int>(phoneme_ids.size());
  const auto d = static_cast<int>(embedding.table.cols());
  auto x = ag::add(embedding(phoneme_ids), ag::constant(sinusoidal_positions(n, d)));
  x = ag::mask_rows(x, mask);
  for (const auto& block : blocks) x = block(x, mask, nullptr);
  return {x, mask};
}

VariancePredictor::VariancePredictor(ParameterSet& params, const std::string& name,
                                     const ModelConfig& cfg, Rng& rng) {
  conv1 = Conv1d(params, name + ".conv1", cfg.d_model, cfg.variance_hidden, cfg.variance_kernel, rng);
  norm1 = LayerNorm(params, name + ".norm1", cfg.variance_hidden);
  conv2 = Conv1d(params, name + ".conv2", cfg.variance_hidden, cfg.variance_hidden, cfg.variance_kernel, rng);
  norm2 = LayerNorm(params, name + ".norm2", cfg.variance_hidden);
  head = Linear(params, name + ".head", cfg.variance_hidden, 1, rng);
}

ag::Var VariancePredictor::operator()(const ag::Var& x, const Mask& mask) const {
  auto h = ag::mask_rows(norm1(ag::relu(conv1(ag::mask_rows(x, mask)))), mask);
  h = ag::mask_rows(norm2(ag::relu(conv2(h))), mask);
  return ag::mask_rows(head(h), mask);
}

int quantize(double value, double lo, double hi, int bins) {
  const double pos = (value - lo) / (hi - lo) * bins;
  if (!(pos > 0.0)) return 0;  // also catches NaN
  return std::min(bins - 1, static_cast<int>(std::floor(pos)));
}

std::vector<int> length_regulation_index(std::span<const int> durations, int total_frames) {
  std::vector<int> index;
  index.reserve(static_cast<size_t>(total_frames));
  for (size_t p = 0; p < durations.size(); ++p)
    for (int k = 0; k < durations[p]; ++k) index.push_back(static_cast<int>(p));
  if (static_cast<int>(index.size()) > total_frames)
    throw std::invalid_argument("length regulation: durations exceed frame count");
  index.resize(static_cast<size_t>(total_frames), -1);
  return index;
}

VarianceAdaptor::VarianceAdaptor(ParameterSet& params, const std::string& name,
                                 const ModelConfig& cfg, Rng& rng)
    : pitch_min(cfg.pitch_min),
      pitch_max(cfg.pitch_max),
      energy_min(cfg.energy_min),
      energy_max(cfg.energy_max),
      bins(cfg.variance_bins) {
  duration = VariancePredictor(params, name + ".duration", cfg, rng);
  pitch = VariancePredictor(params, name + ".pitch", cfg, rng);
  energy = VariancePredictor(params, name + ".energy", cfg, rng);
  pitch_embedding = Embedding(params, name + ".pitch_embedding", cfg.variance_bins, cfg.d_model, rng);
  energy_embedding = Embedding(params, name + ".energy_embedding", cfg.variance_bins, cfg.d_model, rng);
}

AdaptorOutput VarianceAdaptor::operator()(const EncoderOutput& enc,
                                          const std::optional<VarianceTargets>& targets,
                                          int frame_count) const {
  const Mask& mask = enc.mask;
  const auto n = mask.size();
  AdaptorOutput out;
  out.predictions.log_duration = duration(enc.hidden, mask);
  out.predictions.pitch = pitch(enc.hidden, mask);
  out.predictions.energy = energy(enc.hidden, mask);

  if (targets && (targets->durations.size() != n || targets->pitch.size() != n ||
                  targets->energy.size() != n))
    throw std::invalid_argument("variance_adapt: target length mismatch");

  std::vector<int> pitch_ids(n, 0), energy_ids(n, 0);
  out.durations.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const auto r = static_cast<Eigen::Index>(i);
    const double p = targets ? targets->pitch[i] : out.predictions.pitch.value()(r, 0);
    const double e = targets ? targets->energy[i] : out.predictions.energy.value()(r, 0);
    pitch_ids[i] = quantize(p, pitch_min, pitch_max, bins);
    energy_ids[i] = quantize(e, energy_min, energy_max, bins);
    out.durations[i] =
        targets ? targets->durations[i]
                : std::max(1, static_cast<int>(std::lround(std::exp(out.predictions.log_duration.value()(r, 0)))));
  }
  const int total = std::accumulate(out.durations.begin(), out.durations.end(), 0);
  if (total <= 0) throw ValidationError("variance_adapt: zero total duration");
  const int frames = targets ? std::max(frame_count, total) : total;

  auto x = ag::add(enc.hidden, ag::mask_rows(pitch_embedding(pitch_ids), mask));
  x = ag::add(x, ag::mask_rows(energy_embedding(energy_ids), mask));
  const auto index = length_regulation_index(out.durations, frames);
  out.frames = ag::gather_rows(x, index);
  out.frame_mask.assign(static_cast<size_t>(frames), false);
  std::fill_n(out.frame_mask.begin(), total, true);
  return out;
}

Decoder::Decoder(ParameterSet& params, const std::string& name, const ModelConfig& cfg,
                 bool is_conditional, Rng& rng)
    : conditional(is_conditional) {
  for (int i = 0; i < cfg.decoder_layers; ++i)
    blocks.emplace_back(params, name + ".block" + std::to_string(i), cfg, conditional, rng);
  mel_head = Linear(params, name + ".mel_head", cfg.d_model, kMelChannels, rng);
}

ag::Var Decoder::operator()(const ag::Var& frames, const Mask& frame_mask, const ag::Var& style) const {
  if (frames.rows() < 1) throw std::invalid_argument("decode: no frames");
  const auto t = static_cast<int>(frames.rows());
  const auto d = static_cast<int>(frames.cols());
  auto x = ag::mask_rows(ag::add(frames, ag::constant(sinusoidal_positions(t, d))), frame_mask);
  for (const auto& block : blocks) x = block(x, frame_mask, &style);
  return ag::mask_rows(mel_head(x), frame_mask);
}

}  // namespace m2ctts
