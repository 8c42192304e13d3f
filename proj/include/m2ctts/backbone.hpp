#pragma once

// Non-autoregressive acoustic model: phoneme encoder, variance adaptor with
// length regulation, and a style-conditioned mel decoder.

#include <optional>
#include <span>
#include <vector>

#include "m2ctts/autograd.hpp"
#include "m2ctts/config.hpp"
#include "m2ctts/fusion.hpp"

namespace m2ctts {

/// Self-attention + two-layer conv feed-forward, each followed by a residual
/// add and a normalisation (plain layer norm, or SALN when conditional).
class FftBlock {
 public:
  FftBlock() = default;
  FftBlock(ParameterSet& params, const std::string& name, const ModelConfig& cfg, bool conditional,
           Rng& rng);

  ag::Var operator()(const ag::Var& x, const Mask& mask, const ag::Var* style) const;

  bool conditional = false;
  MultiHeadAttention attention;
  Conv1d ffn_in, ffn_out;
  LayerNorm norm1, norm2;
  Saln saln1, saln2;
};

struct EncoderOutput {
  ag::Var hidden;  // N x d, padded rows zero
  Mask mask;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterSet& params, const std::string& name, const ModelConfig& cfg, Rng& rng);

  EncoderOutput operator()(std::span<const int> phoneme_ids, const Mask& mask) const;

  Embedding embedding;
  std::vector<FftBlock> blocks;
};

/// conv -> relu -> layer norm, twice, then a scalar head.
class VariancePredictor {
 public:
  VariancePredictor() = default;
  VariancePredictor(ParameterSet& params, const std::string& name, const ModelConfig& cfg, Rng& rng);

  ag::Var operator()(const ag::Var& x, const Mask& mask) const;  // N x 1

  Conv1d conv1, conv2;
  LayerNorm norm1, norm2;
  Linear head;
};

struct VarianceTargets {
  std::span<const int> durations;
  std::span<const double> pitch;
  std::span<const double> energy;
};

struct VariancePredictions {
  ag::Var pitch;         // N x 1
  ag::Var energy;        // N x 1
  ag::Var log_duration;  // N x 1
};

struct AdaptorOutput {
  ag::Var frames;  // T x d
  Mask frame_mask;
  std::vector<int> durations;  // per phoneme, 0 at padding
  VariancePredictions predictions;
};

/// Maps a value to one of `bins` equal-width buckets over [lo, hi], clamping.
int quantize(double value, double lo, double hi, int bins);

/// out rows = phoneme rows repeated by duration; rows past the total are zero.
std::vector<int> length_regulation_index(std::span<const int> durations, int total_frames);

class VarianceAdaptor {
 public:
  VarianceAdaptor() = default;
  VarianceAdaptor(ParameterSet& params, const std::string& name, const ModelConfig& cfg, Rng& rng);

  /// With targets, pitch/energy embeddings and lengths are teacher-forced and
  /// the frame axis is padded to `frame_count`. Without, predictions are used:
  /// duration = max(1, round(exp(log_duration))).
  AdaptorOutput operator()(const EncoderOutput& enc, const std::optional<VarianceTargets>& targets,
                           int frame_count = 0) const;

  double pitch_min = 0, pitch_max = 1, energy_min = 0, energy_max = 1;
  int bins = 256;
  VariancePredictor duration, pitch, energy;
  Embedding pitch_embedding, energy_embedding;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterSet& params, const std::string& name, const ModelConfig& cfg, bool conditional,
          Rng& rng);

  ag::Var operator()(const ag::Var& frames, const Mask& frame_mask, const ag::Var& style) const;

  bool conditional = true;
  std::vector<FftBlock> blocks;
  Linear mel_head;
};

}  // namespace m2ctts
