#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "m2ctts/extractors.hpp"

namespace m2ctts {

/// Architecture hyper-parameters. Defaults are FastSpeech2-scale.
struct ModelConfig {
  int vocab_size = 64;
  int d_model = 256;
  int heads = 2;
  int encoder_layers = 4;
  int decoder_layers = 4;
  int ffn_hidden = 1024;
  int ffn_kernel = 9;
  int ffn_kernel_out = 1;
  int context_kernel = 3;
  int style_dim = 256;
  int variance_hidden = 256;
  int variance_kernel = 3;
  int variance_bins = 256;
  double pitch_min = -4.0;
  double pitch_max = 4.0;
  double energy_min = -4.0;
  double energy_max = 4.0;
  ExtractorDims dims;
  int memory_capacity = 4;
  bool wpm_speaker_embedding = true;
  bool tpm_speaker_embedding = true;

  void validate() const;

  /// Small widths for property checks and CPU-scale experiments.
  static ModelConfig compact();
};

enum class Reduction { Mean, Sum };

struct TrainConfig {
  double learning_rate = 1e-3;
  int warmup_steps = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  double lambda_prosody = 1.0;
  Reduction prosody_reduction = Reduction::Mean;
  int batch_size = 16;
  int steps = 1000;
  std::uint64_t seed = 1234;
};

/// Which context modules are active. Named rows M1..M7 follow the ablation
/// matrix; anything else is "custom".
struct AblationConfig {
  bool tum = false;
  bool wum = false;
  bool tpm = false;
  bool wpm = false;
  std::string name = "M1";

  bool any_coarse() const { return tum || wum; }
  bool any_context() const { return tum || wum || tpm || wpm; }

  /// "M1".."M7", or a '+'-separated module list such as "tum+wpm".
  static AblationConfig parse(const std::string& spec);
  static AblationConfig named(const std::string& name);
  bool operator==(const AblationConfig&) const = default;
};

inline constexpr const char* kAblationNames[] = {"M1", "M2", "M3", "M4", "M5", "M6", "M7"};

enum class ExtractorMode { Stub, Cache };

/// Everything a command needs; serialised as a flat JSON object.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AblationConfig ablation = AblationConfig::named("M7");
  ExtractorMode extractor_mode = ExtractorMode::Stub;
  std::string corpus;    // manifest path
  std::string data_dir;  // preprocessed output (cache + stats)
  double val_fraction = 0.125;
  int pad_phoneme_id = 0;
  int log_every = 10;
  int checkpoint_every = 0;  // 0: only the final checkpoint

  nlohmann::ordered_json to_json() const;
  /// Rejects unknown keys and ill-typed values.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// Applies one `--key value` override; the value is parsed as JSON when
  /// possible and as a bare string otherwise.
  void set(const std::string& key, const std::string& value);
  /// Hash of every setting that shapes the training trajectory. Run-control
  /// keys (steps, paths, logging cadence) are excluded so a run can resume.
  std::uint64_t fingerprint() const;
};

}  // namespace m2ctts
